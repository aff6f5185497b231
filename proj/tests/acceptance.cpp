// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line per criterion.  Exit status is the number of failures.

#include <chrono>
#include <cstdio>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "auvftc/config.hpp"
#include "auvftc/reference.hpp"
#include "auvftc/scenario.hpp"

using namespace auvftc;

namespace {

struct Criterion {
    std::string name;
    bool pass = false;
    std::string detail;
};

double now_seconds() {
    using clock = std::chrono::steady_clock;
    static const auto start = clock::now();
    return std::chrono::duration<double>(clock::now() - start).count();
}

struct Runs {
    RunResult case1_almpc;
    std::string case1_almpc_csv;
    std::string case1_almpc_csv_repeat;
    RunResult case1_bsc;
    RunResult case2_almpc;
    RunResult case2_ampc;
    RunResult case2_bsc;
    double case1_seconds = 0.0;
    double case2_seconds = 0.0;
};

Runs execute_scenarios() {
    Runs r;
    double t0 = now_seconds();
    {
        const ScenarioConfig cfg = ScenarioConfig::case_default(1, ControllerKind::Almpc);
        r.case1_almpc = run(cfg);
        r.case1_almpc_csv = serialize_csv(r.case1_almpc.log);
        r.case1_almpc_csv_repeat = serialize_csv(run(cfg).log);
    }
    r.case1_seconds = (now_seconds() - t0) / 2.0;  // ran twice for determinism
    r.case1_bsc = run(ScenarioConfig::case_default(1, ControllerKind::Bsc));

    t0 = now_seconds();
    r.case2_almpc = run(ScenarioConfig::case_default(2, ControllerKind::Almpc));
    r.case2_seconds = now_seconds() - t0;
    r.case2_ampc = run(ScenarioConfig::case_default(2, ControllerKind::Ampc));
    r.case2_bsc = run(ScenarioConfig::case_default(2, ControllerKind::Bsc));
    return r;
}

Criterion structural_properties() {
    Criterion c{"1 structural property suite"};
    const HydroModel h = HydroModel::default_rov();
    const Mat3 S0 = skew_generator();
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    double worst_orth = 0.0, worst_skew = 0.0, worst_power = 0.0, worst_ident = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Mat3 J = rotation(6.0 * dist(rng));
        worst_orth = std::max(worst_orth,
                              (J.transpose() * J - Mat3::Identity()).cwiseAbs().maxCoeff());
        const Vec3 nu(dist(rng), dist(rng), dist(rng));
        const Mat3 C = coriolis(h, nu);
        worst_skew = std::max(worst_skew, (C + C.transpose()).cwiseAbs().maxCoeff());
        worst_power = std::max(worst_power, std::abs(nu.dot(C * nu)));
        const Vec3 s(dist(rng), dist(rng), dist(rng));
        const double psi = 2.0 * dist(rng);
        const double rr = dist(rng);
        const Mat3 J2 = rotation(psi);
        const Mat3 Mstar_dot = rr * (J2 * (S0 * h.M - h.M * S0) * J2.transpose());
        const Mat3 Cstar =
            J2 * (coriolis(h, nu) - h.M * J2.transpose() * (rr * J2 * S0)) * J2.transpose();
        worst_ident =
            std::max(worst_ident, std::abs(s.dot((Mstar_dot - 2.0 * Cstar) * s)));
    }
    c.pass = worst_orth < 1e-12 && worst_skew < 1e-12 && worst_power < 1e-10 &&
             worst_ident < 1e-9;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "orth=%.2e skew=%.2e power=%.2e identity=%.2e",
                  worst_orth, worst_skew, worst_power, worst_ident);
    c.detail = buf;
    return c;
}

Criterion auxiliary_decay() {
    Criterion c{"2 auxiliary-law decay (case I, 30 s)"};
    const HydroModel h = HydroModel::default_rov();
    const BackstepGains gains;
    const double dt = 0.01;
    VehicleState x;
    x.eta << 0.5, 0.0, 0.0;
    double v_prev = 0.0;
    double worst = -1e9;
    bool first = true;
    for (int k = 0; k <= 3000; ++k) {
        const double t = k * dt;
        const ReferenceSignal ref = reference(t, 1);
        const ErrorVariables ev = error_variables(x, ref);
        const double v2 = lyapunov_value_v2(ev.eta_tilde, ev.s, gains, h, x.eta(2));
        if (!first) worst = std::max(worst, v2 - v_prev);
        first = false;
        v_prev = v2;
        const Vec3 tau = auxiliary_law(x, ref, gains, h);
        x = integrate_plant(h, x, tau, Vec3::Zero(), dt);
    }
    c.pass = worst <= 1e-6;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "max per-step V2 increase %.3e (tol 1e-6)", worst);
    c.detail = buf;
    return c;
}

Criterion contraction_certificate(const Runs& runs) {
    Criterion c{"3 contraction certificate (case II almpc)"};
    const RunLog& log = runs.case2_almpc.log;
    const double frac =
        log.total_steps > 0
            ? static_cast<double>(log.fallback_steps) / static_cast<double>(log.total_steps)
            : 1.0;
    c.pass = log.contraction_violations == 0 && log.contraction_checked > 0 && frac < 0.02;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "checked=%ld violations=%ld fallback=%ld/%ld (%.2f%%)",
                  log.contraction_checked, log.contraction_violations, log.fallback_steps,
                  log.total_steps, 100.0 * frac);
    c.detail = buf;
    return c;
}

Criterion estimator_suite(const Runs& runs) {
    Criterion c{"4 estimator suite"};
    // posterior normalization at every logged step of every estimator run
    double worst_norm = 0.0;
    for (const RunResult* rr :
         {&runs.case1_almpc, &runs.case2_almpc, &runs.case2_ampc}) {
        for (const auto& row : rr->log.rows)
            if (row.posteriors)
                worst_norm = std::max(worst_norm, std::abs(row.posteriors->sum() - 1.0));
    }

    // log-sum-exp stability down to -1e6
    bool lse_ok = true;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> logu(0.0, 6.0);
    Eigen::VectorXd pt = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
    for (int i = 0; i < 5000; ++i) {
        Eigen::VectorXd ll(3);
        for (int k = 0; k < 3; ++k) ll(k) = -std::pow(10.0, logu(rng));
        const Eigen::VectorXd p = posterior_update(pt, ll);
        lse_ok = lse_ok && p.allFinite() && std::abs(p.sum() - 1.0) < 1e-12;
    }
    {
        Eigen::VectorXd hard(3);
        hard << -1e6, 0.0, -1e6;
        const Eigen::VectorXd p = posterior_update(pt, hard);
        lse_ok = lse_ok && p.allFinite() && std::abs(p(1) - 1.0) < 1e-12;
    }

    // equal-likelihood stream converges to uniform
    const ModeLibrary lib = ModeLibrary::standard_three_mode();
    ModeBelief belief = ModeBelief::initial(3, 0.9995);
    const Eigen::VectorXd ell = Eigen::VectorXd::Constant(3, -4.0);
    for (int k = 0; k < 5000; ++k) belief.update(ell, lib.transition);
    const double uniform_gap = (belief.p.array() - 1.0 / 3.0).abs().maxCoeff();

    // UKF equals the Kalman recursion on a linear system
    Mat6 A = Mat6::Identity();
    A(0, 3) = 0.1;
    A(1, 4) = 0.1;
    A(2, 5) = 0.1;
    UkfState ukf;
    ukf.mean = Vec6::Constant(0.2);
    ukf.covariance = 0.02 * Mat6::Identity();
    ukf.Q = UkfState::default_process_noise();
    ukf.R = UkfState::default_measurement_noise();
    ukf.jitter = 0.0;
    Vec6 kf_mean = ukf.mean;
    Mat6 kf_cov = ukf.covariance;
    double worst_kf = 0.0;
    std::uniform_real_distribution<double> meas(-0.2, 0.2);
    for (int k = 0; k < 50; ++k) {
        Vec6 y;
        for (int i = 0; i < 6; ++i) y(i) = meas(rng);
        const auto upd =
            detail::unscented_step(ukf, [&](const Vec6& x) { return Vec6(A * x); }, y);
        ukf = upd.state;
        const Vec6 mp = A * kf_mean;
        const Mat6 Pp = A * kf_cov * A.transpose() + ukf.Q;
        const Mat6 S = Pp + ukf.R;
        const Mat6 K = Pp * S.inverse();
        kf_mean = mp + K * (y - mp);
        kf_cov = Pp - K * S * K.transpose();
        worst_kf = std::max(worst_kf, (ukf.mean - kf_mean).cwiseAbs().maxCoeff());
        worst_kf = std::max(worst_kf, (ukf.covariance - kf_cov).cwiseAbs().maxCoeff());
    }

    c.pass = worst_norm <= 1e-12 && lse_ok && uniform_gap < 1e-3 && worst_kf < 1e-6;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "norm=%.1e lse=%s uniform_gap=%.1e kf_gap=%.1e",
                  worst_norm, lse_ok ? "ok" : "FAIL", uniform_gap, worst_kf);
    c.detail = buf;
    return c;
}

std::string fmt_time(const std::optional<double>& t) {
    if (!t) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2fs", *t);
    return buf;
}

Criterion detection_accommodation(const Runs& runs) {
    Criterion c{"5 detection/accommodation"};
    bool ok = true;
    std::string detail;
    auto check = [&](const RunResult& rr, const char* tag) {
        for (const auto& timer : rr.log.timers) {
            const auto td = timer.detection_time();
            const auto ta = timer.accommodation_time();
            ok = ok && td && *td <= 1.0 && ta && *ta <= 1.5;
            detail += std::string(tag) + " T_det=" + fmt_time(td) +
                      " T_acc=" + fmt_time(ta) + "  ";
        }
    };
    check(runs.case1_almpc, "caseI:");
    check(runs.case2_almpc, "caseII:");
    ok = ok && runs.case1_seconds < 300.0 && runs.case2_seconds < 300.0;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "runtime %.1fs/%.1fs", runs.case1_seconds,
                  runs.case2_seconds);
    c.pass = ok;
    c.detail = detail + buf;
    return c;
}

Criterion tracking_thresholds(const Runs& runs) {
    Criterion c{"6 tracking-error thresholds (case I)"};
    const RunLog& log = runs.case1_almpc.log;
    bool ok = !log.timers.empty();
    double worst = 0.0;
    if (ok) {
        const auto& timer = log.timers.front();
        const auto ta = timer.accommodation_time();
        ok = ta.has_value();
        if (ok) {
            const double t_from = timer.t_fault + *ta + 2.0;
            for (const auto& row : log.rows) {
                if (row.t <= t_from) continue;
                worst = std::max({worst, std::abs(row.error(0)), std::abs(row.error(1))});
            }
            ok = worst < 0.15;
        }
    }
    double bsc_peak = 0.0;
    for (const auto& row : runs.case1_bsc.log.rows)
        if (row.t >= 15.0) bsc_peak = std::max(bsc_peak, std::abs(row.error(0)));
    ok = ok && bsc_peak > 0.5;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "almpc steady max=%.3f m (<0.15), bsc peak=%.3f m (>0.5)",
                  worst, bsc_peak);
    c.pass = ok;
    c.detail = buf;
    return c;
}

Criterion comparative_ordering(const Runs& runs) {
    Criterion c{"7 comparative ordering (case II)"};
    const MetricsReport& a = runs.case2_almpc.metrics;
    const MetricsReport& m = runs.case2_ampc.metrics;
    const MetricsReport& b = runs.case2_bsc.metrics;
    bool ok = true;
    for (int axis : {0, 1}) {
        ok = ok && a.rmse(axis) < m.rmse(axis) && m.rmse(axis) < b.rmse(axis);
        ok = ok && a.iae(axis) < m.iae(axis) && m.iae(axis) < b.iae(axis);
    }
    ok = ok && a.rmse(2) <= m.rmse(2);
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "rmse_x %.4f/%.4f/%.4f rmse_y %.4f/%.4f/%.4f rmse_psi %.4f/%.4f "
                  "iae_x %.3f/%.3f/%.3f iae_y %.3f/%.3f/%.3f",
                  a.rmse(0), m.rmse(0), b.rmse(0), a.rmse(1), m.rmse(1), b.rmse(1),
                  a.rmse(2), m.rmse(2), a.iae(0), m.iae(0), b.iae(0), a.iae(1), m.iae(1),
                  b.iae(1));
    c.pass = ok;
    c.detail = buf;
    return c;
}

Criterion jensen_blending(const Runs& runs) {
    Criterion c{"8 jensen blending check (case II)"};
    const RunLog& log = runs.case2_almpc.log;
    const double ratio = log.jensen_checked > 0
                             ? static_cast<double>(log.jensen_satisfied) /
                                   static_cast<double>(log.jensen_checked)
                             : 0.0;
    c.pass = log.jensen_checked > 0 && ratio >= 0.95;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "satisfied %ld/%ld (%.1f%%)", log.jensen_satisfied,
                  log.jensen_checked, 100.0 * ratio);
    c.detail = buf;
    return c;
}

Criterion determinism_io(const Runs& runs) {
    Criterion c{"9 determinism & I/O"};
    const bool identical = runs.case1_almpc_csv == runs.case1_almpc_csv_repeat;
    const RunLog parsed = parse_csv(runs.case1_almpc_csv);
    const bool roundtrip = serialize_csv(parsed) == runs.case1_almpc_csv;

    const ThrusterLayout layout = ThrusterLayout::vectored_x();
    const ModeLibrary lib = ModeLibrary::standard_three_mode();
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(-500.0, 500.0);
    double worst = 0.0;
    for (const auto& mode : lib.modes) {
        const Mat34 G = effective_allocation(layout, mode);
        for (int i = 0; i < 1000; ++i) {
            const Vec4 u(dist(rng), dist(rng), dist(rng), dist(rng));
            const Vec3 tau = G * u;  // achievable by construction
            const Vec4 sol = allocate_damped(tau, mode, layout, 0.0);
            worst = std::max(worst, (G * sol - tau).norm());
        }
    }
    c.pass = identical && roundtrip && worst <= 1e-6;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "identical=%s roundtrip=%s ls_residual=%.2e",
                  identical ? "yes" : "NO", roundtrip ? "yes" : "NO", worst);
    c.detail = buf;
    return c;
}

Criterion hysteresis_suite() {
    Criterion c{"10 hysteresis unit suite"};
    const FusionConfig cfg;
    bool ok = true;

    auto high = [](int mode) {
        Eigen::VectorXd p = Eigen::VectorXd::Constant(3, 0.02);
        p(mode) = 0.96;
        return p;
    };
    auto low = [](int mode) {
        Eigen::VectorXd p = Eigen::VectorXd::Constant(3, 0.15);
        p(mode) = 0.70;
        return p;
    };

    // lock after exactly n_on
    SupervisorState s;
    for (int k = 0; k < cfg.n_on - 1; ++k) {
        s = hysteresis_step(s, high(1), cfg);
        ok = ok && !s.locked_mode;
    }
    s = hysteresis_step(s, high(1), cfg);
    ok = ok && s.locked_mode == 1;

    // unlock after exactly n_off
    for (int k = 0; k < cfg.n_off - 1; ++k) {
        s = hysteresis_step(s, low(1), cfg);
        ok = ok && s.locked_mode == 1;
    }
    s = hysteresis_step(s, low(1), cfg);
    ok = ok && !s.locked_mode;

    // any non-confirming sample resets the on-counter
    SupervisorState s2;
    for (int streaks = 0; streaks < 3; ++streaks) {
        for (int k = 0; k < cfg.n_on - 1; ++k) {
            s2 = hysteresis_step(s2, high(2), cfg);
            ok = ok && !s2.locked_mode;
        }
        s2 = hysteresis_step(s2, low(2), cfg);  // dip resets
        ok = ok && !s2.locked_mode && s2.on_counter == 0;
    }
    for (int k = 0; k < cfg.n_on; ++k) s2 = hysteresis_step(s2, high(2), cfg);
    ok = ok && s2.locked_mode == 2;

    c.pass = ok;
    c.detail = ok ? "lock@10, unlock@5, resets verified" : "sequence mismatch";
    return c;
}

}  // namespace

int main() {
    std::printf("auvftc acceptance suite\n");
    const double t_start = now_seconds();
    const Runs runs = execute_scenarios();
    std::printf("scenario runs finished in %.1f s\n\n", now_seconds() - t_start);

    std::vector<Criterion> results;
    results.push_back(structural_properties());
    results.push_back(auxiliary_decay());
    results.push_back(contraction_certificate(runs));
    results.push_back(estimator_suite(runs));
    results.push_back(detection_accommodation(runs));
    results.push_back(tracking_thresholds(runs));
    results.push_back(comparative_ordering(runs));
    results.push_back(jensen_blending(runs));
    results.push_back(determinism_io(runs));
    results.push_back(hysteresis_suite());

    int failures = 0;
    for (const auto& c : results) {
        std::printf("%s criterion %-40s %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                    c.detail.c_str());
        if (!c.pass) ++failures;
    }
    std::printf("\n%zu criteria, %d failed\n", results.size(), failures);
    return failures;
}
