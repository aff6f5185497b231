#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "auvftc/allocation.hpp"
#include "auvftc/dynamics.hpp"
#include "auvftc/types.hpp"

namespace auvftc {

/// Thrown when a filter covariance cannot be factorized even after
/// re-symmetrization and jitter escalation.
struct FilterDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Ordered fault-hypothesis library with the Markov transition prior.
struct ModeLibrary {
    std::vector<FaultParameters> modes;  // index 0 = nominal
    Eigen::MatrixXd transition;          // row-stochastic, T(j,i) = P(i | j)

    static ModeLibrary standard_three_mode(double t_diag = 0.98) {
        ModeLibrary lib;
        lib.modes.resize(3);
        lib.modes[0] = FaultParameters::nominal();
        lib.modes[1] = FaultParameters::nominal();
        lib.modes[1].gamma(0) = 0.0;  // thruster #1 blocked
        lib.modes[2] = FaultParameters::nominal();
        lib.modes[2].gamma(2) = 0.3;  // thruster #3 derated and misaligned
        lib.modes[2].theta(2) = 15.0 * M_PI / 180.0;
        const int n = 3;
        lib.transition = Eigen::MatrixXd::Constant(n, n, (1.0 - t_diag) / (n - 1));
        lib.transition.diagonal().setConstant(t_diag);
        lib.validate();
        return lib;
    }

    void validate() const {
        const int n = static_cast<int>(modes.size());
        if (transition.rows() != n || transition.cols() != n)
            throw std::invalid_argument("ModeLibrary: transition size mismatch");
        for (int j = 0; j < n; ++j) {
            if (std::abs(transition.row(j).sum() - 1.0) > 1e-12)
                throw std::invalid_argument("ModeLibrary: transition rows must sum to 1");
            if (transition.row(j).minCoeff() < 0.0)
                throw std::invalid_argument("ModeLibrary: negative transition probability");
        }
        for (const auto& m : modes) m.validate();
    }

    int size() const { return static_cast<int>(modes.size()); }
};

/// Scaled unscented-transform parameters.
struct UtParams {
    double alpha = 0.1;
    double beta = 2.0;
    double kappa = 0.0;
};

/// State of one mode-conditioned unscented Kalman filter over the 6-state
/// vehicle model with full-state measurement.
struct UkfState {
    Vec6 mean = Vec6::Zero();
    Mat6 covariance = Mat6::Identity();
    Mat6 Q = Mat6::Identity();
    Mat6 R = Mat6::Identity();
    UtParams ut;
    double jitter = 1e-9;  // added to the innovation covariance diagonal

    static Mat6 default_process_noise() {
        Vec6 q;
        q << 0.01, 0.01, 0.01, 0.005, 0.005, 0.005;
        return q.asDiagonal();
    }
    static Mat6 default_measurement_noise() {
        Vec6 r;
        r << 0.1, 0.1, 0.1, 0.03, 0.03, 0.03;
        return r.asDiagonal();
    }
};

struct UkfUpdate {
    UkfState state;
    Vec6 innovation;
    Mat6 innovation_covariance;
};

namespace detail {

inline Mat6 robust_cholesky_lower(Mat6 P) {
    P = 0.5 * (P + P.transpose()).eval();
    double bump = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
        Eigen::LLT<Mat6> llt(P + bump * Mat6::Identity());
        if (llt.info() == Eigen::Success) return llt.matrixL();
        bump = (bump == 0.0) ? 1e-12 : bump * 100.0;
    }
    throw FilterDivergence("ukf: covariance not positive definite after jitter");
}

/**
 * One predict/update cycle of the scaled-UT unscented Kalman filter with an
 * identity measurement map.  `process` maps a state vector over one sampling
 * period.  Weights follow the standard scaled construction; the posterior
 * covariance is re-symmetrized before return.
 */
template <typename ProcessFn>
UkfUpdate unscented_step(const UkfState& ukf, ProcessFn&& process, const Vec6& measurement) {
    constexpr int n = 6;
    const double lambda = ukf.ut.alpha * ukf.ut.alpha * (n + ukf.ut.kappa) - n;
    const double c = n + lambda;
    const double w0m = lambda / c;
    const double w0c = w0m + 1.0 - ukf.ut.alpha * ukf.ut.alpha + ukf.ut.beta;
    const double wi = 0.5 / c;

    const Mat6 L = robust_cholesky_lower(ukf.covariance);
    std::array<Vec6, 2 * n + 1> sigma;
    sigma[0] = ukf.mean;
    for (int i = 0; i < n; ++i) {
        const Vec6 col = std::sqrt(c) * L.col(i);
        sigma[static_cast<size_t>(1 + i)] = ukf.mean + col;
        sigma[static_cast<size_t>(1 + n + i)] = ukf.mean - col;
    }
    for (auto& sp : sigma) sp = process(sp);

    Vec6 mean_pred = w0m * sigma[0];
    for (int i = 1; i <= 2 * n; ++i) mean_pred += wi * sigma[static_cast<size_t>(i)];
    Mat6 P_pred = ukf.Q;
    {
        const Vec6 d0 = sigma[0] - mean_pred;
        P_pred += w0c * d0 * d0.transpose();
        for (int i = 1; i <= 2 * n; ++i) {
            const Vec6 d = sigma[static_cast<size_t>(i)] - mean_pred;
            P_pred += wi * d * d.transpose();
        }
    }
    P_pred = 0.5 * (P_pred + P_pred.transpose()).eval();

    // Identity measurement: predicted output and cross covariance coincide
    // with the state prediction moments.
    Mat6 S = P_pred + ukf.R;
    S.diagonal().array() += ukf.jitter;
    const Vec6 e = measurement - mean_pred;
    Eigen::LLT<Mat6> lltS(S);
    if (lltS.info() != Eigen::Success)
        throw FilterDivergence("ukf: innovation covariance not positive definite");
    const Mat6 K = lltS.solve(P_pred).transpose();  // P_pred S^-1 (P_pred symmetric)

    UkfUpdate out;
    out.state = ukf;
    out.state.mean = mean_pred + K * e;
    Mat6 P_upd = P_pred - K * S * K.transpose();
    out.state.covariance = 0.5 * (P_upd + P_upd.transpose()).eval();
    out.innovation = e;
    out.innovation_covariance = S;
    return out;
}

}  // namespace detail

/// One UKF cycle through the mode-conditioned vehicle dynamics (RK4 over the
/// control period with the hypothesized allocation) and identity measurement.
inline UkfUpdate ukf_step(const UkfState& ukf, const ThrustCommand& u_applied,
                          const FaultParameters& mode, const HydroModel& hydro,
                          const ThrusterLayout& layout, const Vec6& measurement,
                          double dt, int substeps = 2) {
    const Vec3 tau = generalized_force(u_applied, mode, layout);
    auto process = [&](const Vec6& x) {
        VehicleState st = VehicleState::from_vector(x);
        const double h = dt / substeps;
        for (int i = 0; i < substeps; ++i)
            st = integrate_plant(hydro, st, tau, Vec3::Zero(), h);
        return st.as_vector();
    };
    return detail::unscented_step(ukf, process, measurement);
}

/// Gaussian innovation log-likelihood
/// l = -1/2 [ e^T S^-1 e + log det S + p log 2 pi ],  p = 6.
inline double log_likelihood(const Vec6& e, const Mat6& S) {
    Eigen::LLT<Mat6> llt(S);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("log_likelihood: S not positive definite");
    double logdet = 0.0;
    for (int i = 0; i < 6; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    const double quad = e.dot(llt.solve(e));
    return -0.5 * (quad + logdet + 6.0 * std::log(2.0 * M_PI));
}

/// Exponentially weighted accumulation l_bar = rho * l_bar_prev + l.
inline double accumulate_likelihood(double ell_bar_prev, double ell, double rho) {
    if (!(rho > 0.0 && rho <= 1.0))
        throw std::invalid_argument("accumulate_likelihood: rho must be in (0,1]");
    return rho * ell_bar_prev + ell;
}

/// Markov prior mixing p_tilde_i = sum_j T(j,i) p_j.
inline Eigen::VectorXd mix_prior(const Eigen::VectorXd& p_prev, const Eigen::MatrixXd& T) {
    return T.transpose() * p_prev;
}

/// Bayes posterior over modes computed in the log domain (log-sum-exp):
/// p_i proportional to p_tilde_i * exp(l_bar_i), stable for |l_bar| up to 1e6.
inline Eigen::VectorXd posterior_update(const Eigen::VectorXd& p_tilde,
                                        const Eigen::VectorXd& ell_bar) {
    const int n = static_cast<int>(p_tilde.size());
    Eigen::VectorXd lhat(n);
    for (int i = 0; i < n; ++i)
        lhat(i) = std::log(std::max(p_tilde(i), 1e-300)) + ell_bar(i);
    const double m = lhat.maxCoeff();
    Eigen::VectorXd p = (lhat.array() - m).exp();
    return p / p.sum();
}

/// Posterior probabilities and accumulated log-likelihoods over the library.
struct ModeBelief {
    Eigen::VectorXd p;
    Eigen::VectorXd ell_bar;
    double rho = 0.9995;
    // Bound on any mode's accumulated evidence deficit relative to the
    // leader.  Unbounded deficits make the posterior effectively
    // irreversible long before the forgetting factor matters, which is the
    // probability lock-in the supervisory layer must avoid; the cap keeps
    // every hypothesis within a fixed number of nats of revival.
    // Non-finite disables.
    double max_gap = 3.0;
    // Lower bound kept on every posterior entry (renormalized), the usual
    // multiple-model guard that keeps dormant hypotheses revivable.
    // 0 disables.
    double p_floor = 0.0;

    static ModeBelief initial(int n_modes, double rho = 0.9995, double max_gap = 3.0,
                              double p_floor = 0.0) {
        ModeBelief b;
        b.p = Eigen::VectorXd::Zero(n_modes);
        b.p(0) = 1.0;  // start in nominal
        b.ell_bar = Eigen::VectorXd::Zero(n_modes);
        b.rho = rho;
        b.max_gap = max_gap;
        b.p_floor = p_floor;
        return b;
    }

    /// Full per-step recursion: accumulate likelihoods, trim the deficit,
    /// mix the Markov prior, renormalize through the log-domain Bayes
    /// update.
    void update(const Eigen::VectorXd& ell, const Eigen::MatrixXd& T) {
        for (int i = 0; i < ell_bar.size(); ++i)
            ell_bar(i) = accumulate_likelihood(ell_bar(i), ell(i), rho);
        if (std::isfinite(max_gap)) {
            const double lead = ell_bar.maxCoeff();
            for (int i = 0; i < ell_bar.size(); ++i)
                ell_bar(i) = std::max(ell_bar(i), lead - max_gap);
        }
        p = posterior_update(mix_prior(p, T), ell_bar);
        if (p_floor > 0.0) {
            p = p.cwiseMax(p_floor);
            p /= p.sum();
        }
    }
};

}  // namespace auvftc
