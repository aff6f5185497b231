#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "auvftc/backstepping.hpp"
#include "auvftc/config.hpp"
#include "auvftc/dynamics.hpp"
#include "auvftc/estimation.hpp"
#include "auvftc/lmpc.hpp"
#include "auvftc/reference.hpp"
#include "auvftc/rng.hpp"
#include "auvftc/runlog.hpp"
#include "auvftc/supervisor.hpp"

namespace auvftc {

/// True fault parameters at time t: piecewise constant, switching at the
/// scheduled instants.
inline FaultParameters inject_fault(const std::vector<FaultEvent>& schedule, double t) {
    FaultParameters p = FaultParameters::nominal();
    for (const auto& ev : schedule) {
        if (t >= ev.t) p = ev.params;
    }
    return p;
}

inline int true_mode_index(const std::vector<FaultEvent>& schedule, double t) {
    int idx = 0;
    for (const auto& ev : schedule) {
        if (t >= ev.t) idx = ev.mode_index;
    }
    return idx;
}

struct RunResult {
    RunLog log;
    MetricsReport metrics;
};

namespace detail {

struct ModeSolveRecord {
    OcpSolution solution;
    Vec3 tau_star = Vec3::Zero();
    bool ran = false;
};

}  // namespace detail

/**
 * Executes one closed-loop scenario.  Per control period: measure, step the
 * UKF bank and mode belief, solve the active OCPs, fuse and project the
 * command, then hold it zero-order while the plant truth integrates at
 * dt_sim.  Fully deterministic for a fixed config and seed.
 *
 * Solver or filter divergence flushes the partial log to the configured
 * output path before the exception propagates.
 */
inline RunResult run(const ScenarioConfig& cfg) {
    cfg.validate();
    const int n_steps = static_cast<int>(std::llround(cfg.duration / cfg.dt));
    const int n_modes = cfg.library.size();
    const bool has_estimator = cfg.controller != ControllerKind::Bsc;

    VehicleState plant = VehicleState::from_vector(cfg.initial_state);
    ThrustCommand u_prev = ThrustCommand::Zero();
    Vec3 d_ctrl = Vec3::Zero();  // controller bias pseudo-state
    GaussianStream noise(cfg.seed);

    std::vector<UkfState> filters(static_cast<size_t>(n_modes));
    for (auto& f : filters) {
        f.mean = cfg.initial_state;
        f.covariance = cfg.ukf_p0 * Mat6::Identity();
        f.Q = cfg.ukf_Q;
        f.R = cfg.ukf_R;
        f.ut = cfg.ut;
        f.jitter = cfg.ukf_jitter;
    }
    ModeBelief belief =
        ModeBelief::initial(n_modes, cfg.rho, cfg.bayes_max_gap, cfg.bayes_p_floor);
    SupervisorState sup;
    // The initial belief is degenerate certainty in the starting mode, so
    // the supervisor begins hard-locked on it; blending engages once a
    // fault disturbs the posterior.
    {
        const int m0 = map_mode(belief.p, std::nullopt);
        if (belief.p(m0) >= cfg.fusion.p_on) sup.locked_mode = m0;
    }
    int confirmed_mode = 0;  // the AMPC adapted model lags the confirmation

    std::vector<ErrorPredictor> predictors;
    predictors.reserve(static_cast<size_t>(n_modes));
    for (int i = 0; i < n_modes; ++i)
        predictors.emplace_back(cfg.hydro, cfg.layout,
                                cfg.library.modes[static_cast<size_t>(i)], cfg.gains.Lambda);

    std::vector<std::optional<std::vector<Vec4>>> prev_solutions(
        static_cast<size_t>(n_modes));

    RunLog log;
    log.dt = cfg.dt;
    for (const auto& ev : cfg.fault_schedule) {
        if (ev.mode_index < 0) continue;
        TransitionTimer timer;
        timer.t_fault = ev.t;
        timer.true_mode = ev.mode_index;
        log.timers.push_back(timer);
    }

    auto flush_partial = [&]() {
        if (cfg.out_path.empty()) return;
        try {
            write_text_file(cfg.out_path + ".partial.csv", serialize_csv(log));
        } catch (...) {
        }
    };

    try {
        for (int k = 0; k <= n_steps; ++k) {
            const double t = k * cfg.dt;
            const ReferenceSignal ref_now = reference(t, cfg.case_id);
            const FaultParameters true_params = inject_fault(cfg.fault_schedule, t);

            // Measurement (noise stream advanced every step for determinism).
            Vec6 y = plant.as_vector();
            for (int i = 0; i < 6; ++i)
                y(i) += cfg.measurement_noise_scale * std::sqrt(cfg.ukf_R(i, i)) * noise.next();

            // Estimator bank and belief update.
            Vec3 innov_chi2 = Vec3::Zero();
            bool have_innovations = false;
            if (has_estimator && k > 0) {
                Eigen::VectorXd ell(n_modes);
                for (int i = 0; i < n_modes; ++i) {
                    UkfUpdate upd = ukf_step(filters[static_cast<size_t>(i)], u_prev,
                                             cfg.library.modes[static_cast<size_t>(i)],
                                             cfg.hydro, cfg.layout, y, cfg.dt);
                    filters[static_cast<size_t>(i)] = upd.state;
                    ell(i) = log_likelihood(upd.innovation, upd.innovation_covariance);
                    innov_chi2(i) = upd.innovation.dot(
                        Eigen::LLT<Mat6>(upd.innovation_covariance).solve(upd.innovation));
                }
                belief.update(ell, cfg.library.transition);
                have_innovations = true;
            }

            // Supervisory logic (lock/unlock, AMPC confirmation).
            if (has_estimator) {
                std::optional<double> locked_chi2;
                if (sup.locked_mode && have_innovations)
                    locked_chi2 = innov_chi2(*sup.locked_mode);
                sup = hysteresis_step(sup, belief.p, cfg.fusion, locked_chi2);
                if (sup.locked_mode) confirmed_mode = *sup.locked_mode;
            }

            // State feedback: BSC consumes the raw measurement, the MPC
            // controllers the probability-weighted filter mean.
            Vec6 x_hat = y;
            if (has_estimator) {
                x_hat.setZero();
                for (int i = 0; i < n_modes; ++i)
                    x_hat += belief.p(i) * filters[static_cast<size_t>(i)].mean;
                // Re-anchor dormant hypotheses so a later fault is scored
                // against the current state, not a long-diverged estimate.
                // While the believed filter fails to explain the data the
                // bank is released to compete freely.
                if (cfg.reanchor_floor > 0.0 && k > 0) {
                    const int m = map_mode(belief.p, sup.locked_mode);
                    if (innov_chi2(m) < cfg.release_gate) {
                        for (int i = 0; i < n_modes; ++i) {
                            if (i == m || belief.p(i) >= cfg.reanchor_floor) continue;
                            filters[static_cast<size_t>(i)].mean = x_hat;
                            filters[static_cast<size_t>(i)].covariance =
                                filters[static_cast<size_t>(m)].covariance;
                        }
                    }
                }
            }
            const VehicleState fb = VehicleState::from_vector(x_hat);

            // True tracking error for timers, metrics and the logged V.
            Vec3 e_true = plant.eta - ref_now.eta_d;
            e_true(2) = wrap_angle(e_true(2));
            if (has_estimator)
                update_timers(log.timers, t, belief.p, e_true(0), e_true(1), cfg.fusion);

            LogRow row;
            row.t = t;
            row.eta = plant.eta;
            row.nu = plant.nu;
            row.eta_d = ref_now.eta_d;
            row.error = e_true;
            row.true_mode = true_mode_index(cfg.fault_schedule, t);
            row.locked_mode = sup.locked_mode ? *sup.locked_mode : -1;
            if (has_estimator) row.posteriors = Vec3(belief.p.head<3>());
            if (have_innovations) row.innovation_chi2 = innov_chi2;
            {
                const ErrorVariables ev_true = error_variables(plant, ref_now);
                AugmentedError xi_true{ev_true.eta_tilde, ev_true.s, d_ctrl};
                row.lyapunov = lyapunov_value(xi_true, cfg.gains, cfg.hydro, plant.eta(2));
            }

            // Control computation.
            ThrustCommand u_cmd = ThrustCommand::Zero();
            if (cfg.controller == ControllerKind::Bsc) {
                u_cmd = bsc_controller(fb, ref_now, cfg.gains, cfg.hydro, cfg.layout,
                                       cfg.limits, u_prev, cfg.dt);
                row.tau_cmd = generalized_force(u_cmd, FaultParameters::nominal(), cfg.layout);
            } else {
                const ErrorVariables ev = error_variables(fb, ref_now);
                AugmentedError xi0{ev.eta_tilde, ev.s, d_ctrl};
                std::vector<ReferenceSignal> refs(static_cast<size_t>(cfg.ocp.N) + 1);
                for (int i = 0; i <= cfg.ocp.N; ++i)
                    refs[static_cast<size_t>(i)] = reference(t + i * cfg.dt, cfg.case_id);
                const Vec3 tau_b = auxiliary_law(fb, ref_now, cfg.gains, cfg.hydro);
                const Vec3 tau_b_term =
                    auxiliary_law(fb, refs[static_cast<size_t>(cfg.ocp.N)], cfg.gains,
                                  cfg.hydro);

                std::vector<detail::ModeSolveRecord> records(static_cast<size_t>(n_modes));
                auto solve_mode = [&](int i) {
                    auto& rec = records[static_cast<size_t>(i)];
                    const FaultParameters& mode = cfg.library.modes[static_cast<size_t>(i)];
                    const std::vector<Vec4>* prev =
                        prev_solutions[static_cast<size_t>(i)]
                            ? &*prev_solutions[static_cast<size_t>(i)]
                            : nullptr;
                    const std::vector<Vec4> ws =
                        warm_start(mode, cfg.layout, tau_b_term, prev, cfg.ocp.N);
                    const OcpProblem ocp =
                        build_ocp(xi0, refs, mode, u_prev, cfg.ocp, cfg.gains, cfg.hydro,
                                  cfg.layout, cfg.limits, tau_b);
                    rec.solution = solve_ocp(ocp, ws);
                    rec.tau_star = predictors[static_cast<size_t>(i)].input_map() *
                                   rec.solution.u[0];
                    rec.ran = true;
                    prev_solutions[static_cast<size_t>(i)] = rec.solution.u;
                };

                int report_mode = 0;
                if (cfg.controller == ControllerKind::Ampc) {
                    // Single adapted model; no contraction or terminal set.
                    report_mode = confirmed_mode;
                    solve_mode(confirmed_mode);
                    const auto& rec = records[static_cast<size_t>(confirmed_mode)];
                    u_cmd = project_input(rec.solution.u[0], u_prev, cfg.limits, cfg.dt);
                    row.tau_cmd = rec.tau_star;
                } else if (sup.locked_mode || !cfg.fusion.blend_enabled) {
                    const int m = sup.locked_mode ? *sup.locked_mode
                                                  : map_mode(belief.p, std::nullopt);
                    report_mode = m;
                    solve_mode(m);
                    for (int i = 0; i < n_modes; ++i)
                        if (i != m) prev_solutions[static_cast<size_t>(i)].reset();
                    const auto& rec = records[static_cast<size_t>(m)];
                    u_cmd = project_input(rec.solution.u[0], u_prev, cfg.limits, cfg.dt);
                    row.tau_cmd = rec.tau_star;
                } else {
                    // Probability-weighted blending over the full bank.
                    for (int i = 0; i < n_modes; ++i) solve_mode(i);
                    std::vector<Vec3> candidates;
                    candidates.reserve(static_cast<size_t>(n_modes));
                    for (int i = 0; i < n_modes; ++i)
                        candidates.push_back(records[static_cast<size_t>(i)].tau_star);
                    const Vec3 tau_blend = blend_force(candidates, belief.p);
                    const int m = map_mode(belief.p, sup.locked_mode);
                    report_mode = m;
                    const ThrustCommand u_hat = allocate_damped(
                        tau_blend, cfg.library.modes[static_cast<size_t>(m)], cfg.layout,
                        1e-6);
                    u_cmd = project_input(u_hat, u_prev, cfg.limits, cfg.dt);
                    row.tau_cmd = tau_blend;

                    // Jensen diagnostic: the unprojected blend under the MAP
                    // allocation must inherit the per-mode contraction.
                    bool all_optimal = true;
                    for (int i = 0; i < n_modes; ++i)
                        all_optimal &= records[static_cast<size_t>(i)].solution.status ==
                                       SolveStatus::Optimal;
                    const bool u_hat_feasible =
                        (u_hat - u_cmd).lpNorm<Eigen::Infinity>() < 1e-12;
                    if (all_optimal && u_hat_feasible) {
                        const Vec3 tau_recon =
                            predictors[static_cast<size_t>(m)].input_map() * u_hat;
                        const Vec9 xi1 = predictors[static_cast<size_t>(m)].step_tau(
                            xi0.as_vector(), tau_recon, refs[0], cfg.dt);
                        const double v0 =
                            lyapunov_value(xi0, cfg.gains, cfg.hydro,
                                           refs[0].eta_d(2) + xi0.eta_tilde(2));
                        const double v1 = lyapunov_value(
                            AugmentedError::from_vector(xi1), cfg.gains, cfg.hydro,
                            refs[1].eta_d(2) + xi1(2));
                        const bool ok =
                            v1 - v0 <=
                            -cfg.ocp.alpha * xi0.eta_tilde.squaredNorm() + 1e-6;
                        row.jensen_ok = ok;
                        ++log.jensen_checked;
                        if (ok) ++log.jensen_satisfied;
                    }
                }

                // Independent re-check of the first-step contraction echo for
                // every optimal mode solution of this step.
                bool any_fallback = false;
                for (int i = 0; i < n_modes; ++i) {
                    const auto& rec = records[static_cast<size_t>(i)];
                    if (!rec.ran) continue;
                    if (rec.solution.status == SolveStatus::InfeasibleFallback)
                        any_fallback = true;
                    if (rec.solution.status != SolveStatus::Optimal ||
                        !cfg.ocp.descent_constraint)
                        continue;
                    const Vec9 xi1 = predictors[static_cast<size_t>(i)].step(
                        xi0.as_vector(), rec.solution.u[0], refs[0], cfg.dt);
                    const double v0 = lyapunov_value(xi0, cfg.gains, cfg.hydro,
                                                     refs[0].eta_d(2) + xi0.eta_tilde(2));
                    const double v1 =
                        lyapunov_value(AugmentedError::from_vector(xi1), cfg.gains,
                                       cfg.hydro, refs[1].eta_d(2) + xi1(2));
                    ++log.contraction_checked;
                    if (v1 - v0 > -cfg.ocp.alpha * xi0.eta_tilde.squaredNorm() + 1e-8)
                        ++log.contraction_violations;
                }
                row.fallback = any_fallback;
                if (any_fallback) ++log.fallback_steps;

                const auto& rep = records[static_cast<size_t>(report_mode)].solution;
                row.solver_status = to_string(rep.status);
                row.sqp_iterations = rep.sqp_iterations;
                row.kkt_residual = rep.kkt_residual;
                row.descent_margin = rep.first_step_descent +
                                     cfg.ocp.alpha * xi0.eta_tilde.squaredNorm();
            }
            row.u = u_cmd;
            ++log.total_steps;
            log.rows.push_back(row);

            // Plant truth integration over the period (zero-order hold).
            if (k < n_steps) {
                const int substeps =
                    std::max(1, static_cast<int>(std::llround(cfg.dt / cfg.dt_sim)));
                const double h = cfg.dt / substeps;
                Vec3 w = Vec3::Zero();
                if (cfg.disturbance_enabled)
                    for (int i = 0; i < 3; ++i)
                        w(i) = cfg.disturbance_bound(i) * (2.0 * noise.uniform01() - 1.0);
                for (int s = 0; s < substeps; ++s) {
                    const double ts = t + s * h;
                    const Vec3 tau_true =
                        generalized_force(u_cmd, inject_fault(cfg.fault_schedule, ts),
                                          cfg.layout);
                    plant = integrate_plant(cfg.hydro, plant, tau_true, w, h);
                }
                u_prev = u_cmd;
                d_ctrl = d_ctrl - cfg.dt * (cfg.gains.Lambda * d_ctrl);
            }
        }
    } catch (...) {
        flush_partial();
        throw;
    }

    log.lock_events = sup.lock_events;
    log.unlock_events = sup.unlock_events;

    RunResult result;
    result.metrics = compute_metrics(log);
    result.log = std::move(log);
    return result;
}

/// Writes <prefix>.csv and <prefix>.summary.json.
inline void write_outputs(const RunResult& result, const ScenarioConfig& cfg,
                          const std::string& prefix) {
    write_text_file(prefix + ".csv", serialize_csv(result.log));
    const bool has_estimator = cfg.controller != ControllerKind::Bsc;
    write_text_file(prefix + ".summary.json",
                    serialize_summary(result.log, result.metrics,
                                      "case" + std::to_string(cfg.case_id),
                                      to_string(cfg.controller), cfg.seed, has_estimator));
}

}  // namespace auvftc
