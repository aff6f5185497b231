#pragma once

#include <Eigen/Dense>

#include <stdexcept>

#include "auvftc/allocation.hpp"
#include "auvftc/dynamics.hpp"
#include "auvftc/types.hpp"

namespace auvftc {

/// Gains of the auxiliary stabilizing law and the Lyapunov function pair.
/// Kp, Kd, Pd must be symmetric positive definite; Lambda is the diagonal
/// bias leakage (zero permitted).
struct BackstepGains {
    Mat3 Kp = Mat3::Identity();
    Mat3 Kd = Mat3::Identity();
    Mat3 Pd = 1e-3 * Mat3::Identity();
    Mat3 Lambda = Mat3::Zero();

    static BackstepGains make(const Mat3& Kp, const Mat3& Kd, const Mat3& Pd,
                              const Mat3& Lambda) {
        auto check_spd = [](const Mat3& A, const char* name) {
            if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-9)
                throw std::invalid_argument(std::string("BackstepGains: ") + name +
                                            " must be symmetric");
            Eigen::SelfAdjointEigenSolver<Mat3> es(A);
            if (es.eigenvalues().minCoeff() <= 0.0)
                throw std::invalid_argument(std::string("BackstepGains: ") + name +
                                            " must be positive definite");
        };
        check_spd(Kp, "Kp");
        check_spd(Kd, "Kd");
        check_spd(Pd, "Pd");
        if (Lambda.diagonal().minCoeff() < 0.0 ||
            (Mat3(Lambda.diagonal().asDiagonal()) - Lambda).cwiseAbs().maxCoeff() > 1e-12)
            throw std::invalid_argument("BackstepGains: Lambda must be diagonal >= 0");
        return BackstepGains{Kp, Kd, Pd, Lambda};
    }
};

/// Backstepping variables for one state/reference pair.
struct ErrorVariables {
    Vec3 eta_tilde;  // wrapped heading component
    Vec3 s;          // velocity error s = d(eta_tilde)/dt + eta_tilde
    Vec3 v_r;        // body-frame virtual reference velocity
    Vec3 v_r_dot;    // its analytic derivative
};

/**
 * Tracking-error variables of the backstepping construction:
 *   eta_tilde = eta - eta_d (heading wrapped),
 *   eta_r_dot = eta_d_dot - eta_tilde,
 *   s         = eta_dot - eta_r_dot,
 *   v_r       = J(psi)^T eta_r_dot,
 * with v_r_dot from the chain rule d/dt J(psi) = J(psi) S r using the
 * measured yaw rate and the supplied analytic eta_d_ddot.
 */
inline ErrorVariables error_variables(const VehicleState& x, const ReferenceSignal& ref) {
    ErrorVariables ev;
    ev.eta_tilde = x.eta - ref.eta_d;
    ev.eta_tilde(2) = wrap_angle(ev.eta_tilde(2));
    const Mat3 J = rotation(x.eta(2));
    const Vec3 eta_dot = J * x.nu;
    const Vec3 eta_tilde_dot = eta_dot - ref.eta_d_dot;
    const Vec3 eta_r_dot = ref.eta_d_dot - ev.eta_tilde;
    ev.s = eta_dot - eta_r_dot;
    ev.v_r = J.transpose() * eta_r_dot;
    const Vec3 eta_r_ddot = ref.eta_d_ddot - eta_tilde_dot;
    const double r = x.nu(2);
    ev.v_r_dot = -r * skew_generator() * ev.v_r + J.transpose() * eta_r_ddot;
    return ev;
}

/// Auxiliary generalized-force law
/// tau_b = M v_r_dot + C(nu) v_r + D(nu) v_r - J^T(psi) (Kp eta_tilde + Kd s).
inline Vec3 auxiliary_law(const VehicleState& x, const ReferenceSignal& ref,
                          const BackstepGains& gains, const HydroModel& hydro) {
    const ErrorVariables ev = error_variables(x, ref);
    const Mat3 J = rotation(x.eta(2));
    return hydro.M * ev.v_r_dot + coriolis(hydro, x.nu) * ev.v_r +
           damping(hydro, x.nu) * ev.v_r -
           J.transpose() * (gains.Kp * ev.eta_tilde + gains.Kd * ev.s);
}

/// Rotated inertia M*(psi) = J(psi) M J(psi)^T appearing in the s-term of V.
inline Mat3 rotated_inertia(const HydroModel& hydro, double psi) {
    const Mat3 J = rotation(psi);
    return J * hydro.M * J.transpose();
}

/// Composite Lyapunov function
/// V = 1/2 eta_tilde^T Kp eta_tilde + 1/2 s^T M*(psi) s + 1/2 d^T Pd d.
inline double lyapunov_value(const AugmentedError& xi, const BackstepGains& gains,
                             const HydroModel& hydro, double psi) {
    return 0.5 * xi.eta_tilde.dot(gains.Kp * xi.eta_tilde) +
           0.5 * xi.s.dot(rotated_inertia(hydro, psi) * xi.s) +
           0.5 * xi.d.dot(gains.Pd * xi.d);
}

/// Position/velocity part of V (the pair whose decay the auxiliary law
/// guarantees in continuous time).
inline double lyapunov_value_v2(const Vec3& eta_tilde, const Vec3& s,
                                const BackstepGains& gains, const HydroModel& hydro,
                                double psi) {
    return 0.5 * eta_tilde.dot(gains.Kp * eta_tilde) +
           0.5 * s.dot(rotated_inertia(hydro, psi) * s);
}

/// Baseline backstepping controller: the auxiliary law allocated with the
/// NOMINAL thruster parameters (fault-unaware) and projected onto the
/// admissible input set.
inline ThrustCommand bsc_controller(const VehicleState& x, const ReferenceSignal& ref,
                                    const BackstepGains& gains, const HydroModel& hydro,
                                    const ThrusterLayout& layout, const InputLimits& limits,
                                    const ThrustCommand& u_prev, double dt,
                                    double epsilon = 1e-6) {
    const Vec3 tau_b = auxiliary_law(x, ref, gains, hydro);
    const ThrustCommand u = allocate_damped(tau_b, FaultParameters::nominal(), layout, epsilon);
    return project_input(u, u_prev, limits, dt);
}

}  // namespace auvftc
