#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <vector>

#include "auvftc/allocation.hpp"
#include "auvftc/estimation.hpp"
#include "auvftc/types.hpp"

namespace auvftc {

/// Hysteresis thresholds and dwell counts of the supervisory logic.
struct FusionConfig {
    double p_on = 0.95;
    double p_off = 0.80;
    int n_on = 10;
    int n_off = 5;
    bool blend_enabled = true;
    // Anomaly gate: chi-square 99.9% quantile for 6 degrees of freedom;
    // exceeding it for anomaly_dwell samples while locked forces an unlock.
    double anomaly_gate = 22.4577;
    int anomaly_dwell = 5;

    void validate() const {
        if (!(0.0 < p_off && p_off < p_on && p_on < 1.0))
            throw std::invalid_argument("FusionConfig: need 0 < p_off < p_on < 1");
        if (n_on < 1 || n_off < 1)
            throw std::invalid_argument("FusionConfig: dwell counts must be >= 1");
    }
};

/// Lock state and counters of the hard/soft switching supervisor.
struct SupervisorState {
    std::optional<int> locked_mode;
    int on_counter = 0;
    int off_counter = 0;
    int anomaly_counter = 0;
    int candidate_mode = -1;
    long lock_events = 0;
    long unlock_events = 0;
};

/// Probability-weighted convex combination of per-mode force commands.
inline Vec3 blend_force(const std::vector<Vec3>& tau_candidates, const Eigen::VectorXd& p) {
    if (static_cast<int>(tau_candidates.size()) != p.size())
        throw std::invalid_argument("blend_force: size mismatch");
    Vec3 tau = Vec3::Zero();
    for (int i = 0; i < p.size(); ++i) tau += p(i) * tau_candidates[static_cast<size_t>(i)];
    return tau;
}

/// MAP mode index; ties break toward the locked mode, else the lowest index.
inline int map_mode(const Eigen::VectorXd& p, const std::optional<int>& locked) {
    int best = 0;
    for (int i = 1; i < p.size(); ++i)
        if (p(i) > p(best)) best = i;
    if (locked && p(*locked) == p(best)) return *locked;
    return best;
}

/// Allocates the blended force with the MAP mode's parameters and projects
/// the result onto the admissible input set.
inline ThrustCommand fuse_command(const Vec3& tau_blend, const Eigen::VectorXd& p,
                                  const ModeLibrary& library, const ThrusterLayout& layout,
                                  const InputLimits& limits, const ThrustCommand& u_prev,
                                  double dt, const std::optional<int>& locked = std::nullopt,
                                  double epsilon = 1e-6) {
    const int m = map_mode(p, locked);
    const ThrustCommand u_hat =
        allocate_damped(tau_blend, library.modes[static_cast<size_t>(m)], layout, epsilon);
    return project_input(u_hat, u_prev, limits, dt);
}

/**
 * One sample of the hysteresis state machine.  While unlocked, a streak of
 * n_on samples with the (same) most-probable mode at or above p_on engages
 * the hard lock; while locked, a streak of n_off samples with the locked
 * mode's posterior at or below p_off releases it.  Any non-confirming
 * sample resets the corresponding counter.  An optional innovation
 * chi-square value of the locked mode feeds the anomaly-triggered unlock.
 */
inline SupervisorState hysteresis_step(SupervisorState sup, const Eigen::VectorXd& p,
                                       const FusionConfig& cfg,
                                       std::optional<double> locked_mode_chi2 = std::nullopt) {
    if (!sup.locked_mode) {
        const int m = map_mode(p, std::nullopt);
        if (p(m) >= cfg.p_on) {
            if (m == sup.candidate_mode) {
                ++sup.on_counter;
            } else {
                sup.candidate_mode = m;
                sup.on_counter = 1;
            }
        } else {
            sup.candidate_mode = -1;
            sup.on_counter = 0;
        }
        if (sup.on_counter >= cfg.n_on) {
            sup.locked_mode = sup.candidate_mode;
            sup.candidate_mode = -1;
            sup.on_counter = 0;
            sup.off_counter = 0;
            sup.anomaly_counter = 0;
            ++sup.lock_events;
        }
        return sup;
    }
    if (p(*sup.locked_mode) <= cfg.p_off)
        ++sup.off_counter;
    else
        sup.off_counter = 0;
    if (locked_mode_chi2 && *locked_mode_chi2 > cfg.anomaly_gate)
        ++sup.anomaly_counter;
    else
        sup.anomaly_counter = 0;
    if (sup.off_counter >= cfg.n_off || sup.anomaly_counter >= cfg.anomaly_dwell) {
        sup.locked_mode.reset();
        sup.off_counter = 0;
        sup.anomaly_counter = 0;
        ++sup.unlock_events;
    }
    return sup;
}

/**
 * Detection / accommodation bookkeeping for one fault transition.
 *
 * T_det is measured from the fault instant to the first sample of the
 * streak that goes on to hold the true-mode posterior at p_on or above for
 * n_on consecutive samples (the paper's reported delays are first-crossing
 * times; a streak-completion reading could never fall below n_on * dt).
 * T_acc runs to the completion of the first full second spent with
 * |e_x|, |e_y| < 0.1 m; leaving the band before the second elapses resets
 * the dwell.
 */
struct TransitionTimer {
    double t_fault = 0.0;
    int true_mode = 0;
    std::optional<double> t_detected;      // start of the confirmed streak
    std::optional<double> t_accommodated;  // completion of the 1 s dwell
    double band = 0.1;       // [m]
    double dwell = 1.0;      // [s]
    int streak = 0;
    double streak_start = 0.0;
    std::optional<double> band_entry;

    void update(double t, double p_true, double e_x, double e_y, const FusionConfig& cfg) {
        if (t < t_fault) return;
        if (!t_detected) {
            if (p_true >= cfg.p_on) {
                if (streak == 0) streak_start = t;
                ++streak;
                if (streak >= cfg.n_on) t_detected = streak_start;
            } else {
                streak = 0;
            }
        }
        if (!t_accommodated) {
            if (std::abs(e_x) < band && std::abs(e_y) < band) {
                if (!band_entry) band_entry = t;
                if (t - *band_entry >= dwell - 1e-9) t_accommodated = *band_entry + dwell;
            } else {
                band_entry.reset();
            }
        }
    }

    std::optional<double> detection_time() const {
        if (!t_detected) return std::nullopt;
        return *t_detected - t_fault;
    }
    std::optional<double> accommodation_time() const {
        if (!t_accommodated) return std::nullopt;
        return *t_accommodated - t_fault;
    }
};

/// Advances every pending transition record with the current sample.
inline void update_timers(std::vector<TransitionTimer>& timers, double t,
                          const Eigen::VectorXd& p, double e_x, double e_y,
                          const FusionConfig& cfg) {
    for (auto& timer : timers)
        timer.update(t, p(timer.true_mode), e_x, e_y, cfg);
}

}  // namespace auvftc
