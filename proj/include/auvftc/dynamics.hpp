#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

#include "auvftc/types.hpp"

namespace auvftc {

/**
 * 3-DOF rigid-body and hydrodynamic parameters of the plant.
 *
 * M is the inertia matrix including added mass, D_lin the linear damping
 * and D_quad the diagonal quadratic damping coefficients.  Construction
 * validates symmetry and positive definiteness; a singular or indefinite
 * M is rejected here so the simulation loops never have to.
 */
struct HydroModel {
    Mat3 M = Mat3::Identity();
    Mat3 D_lin = Mat3::Identity();
    Vec3 D_quad = Vec3::Zero();
    Mat3 M_inv = Mat3::Identity();

    // Operating box for the damping lower bound (|u|,|v|,|r| componentwise).
    Vec3 nu_max = Vec3(2.0, 2.0, 2.0);
    double d_min = 0.0;

    static HydroModel make(const Mat3& M, const Mat3& D_lin, const Vec3& D_quad,
                           const Vec3& nu_max = Vec3(2.0, 2.0, 2.0)) {
        HydroModel h;
        if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-9)
            throw std::invalid_argument("HydroModel: M must be symmetric");
        Eigen::SelfAdjointEigenSolver<Mat3> es(M);
        if (es.eigenvalues().minCoeff() <= 0.0)
            throw std::invalid_argument("HydroModel: M must be positive definite");
        Eigen::SelfAdjointEigenSolver<Mat3> ed(0.5 * (D_lin + D_lin.transpose()));
        if (ed.eigenvalues().minCoeff() <= 0.0)
            throw std::invalid_argument("HydroModel: D_lin must be positive definite");
        if (D_quad.minCoeff() < 0.0)
            throw std::invalid_argument("HydroModel: D_quad must be nonnegative");
        h.M = M;
        h.D_lin = D_lin;
        h.D_quad = D_quad;
        h.M_inv = M.inverse();
        h.nu_max = nu_max;
        // D(nu) = sym(D_lin) + diag(D_quad |nu|) >= sym(D_lin) on the box.
        h.d_min = ed.eigenvalues().minCoeff();
        return h;
    }

    /// Plausible coefficients for a ~60 kg-class open-frame inspection ROV:
    /// added mass raises the translational entries well above dry mass, the
    /// yaw inertia stays small, and the bluff frame drags hard.
    static HydroModel default_rov() {
        Mat3 M = Vec3(90.0, 120.0, 12.0).asDiagonal();
        Mat3 Dl = Vec3(250.0, 300.0, 80.0).asDiagonal();
        return make(M, Dl, Vec3(250.0, 300.0, 50.0));
    }
};

/// Bounded generalized-force disturbance [N, N, N m].
struct Disturbance {
    Vec3 w = Vec3::Zero();
};

/// Planar rotation J(psi) mapping body velocities to Earth-fixed rates.
/// Orthogonal with det = 1.
inline Mat3 rotation(double psi) {
    const double c = std::cos(psi), s = std::sin(psi);
    Mat3 J;
    J << c, -s, 0.0,
         s,  c, 0.0,
         0.0, 0.0, 1.0;
    return J;
}

/// Generator of the planar rotation group embedded in 3x3:
/// d/dt J(psi) = J(psi) * skew_generator() * r.
inline Mat3 skew_generator() {
    Mat3 S;
    S << 0.0, -1.0, 0.0,
         1.0,  0.0, 0.0,
         0.0,  0.0, 0.0;
    return S;
}

/// Coriolis-centripetal matrix in the standard 3-DOF form built from M.
/// Skew-symmetric by construction for any symmetric M.
inline Mat3 coriolis(const HydroModel& h, const Vec3& nu) {
    const double u = nu(0), v = nu(1), r = nu(2);
    const Mat3& M = h.M;
    const double c13 = -(M(0, 1) * u + M(1, 1) * v + M(1, 2) * r);
    const double c23 = M(0, 0) * u + M(0, 1) * v + M(0, 2) * r;
    Mat3 C;
    C << 0.0, 0.0, c13,
         0.0, 0.0, c23,
         -c13, -c23, 0.0;
    return C;
}

/// Hydrodynamic damping D(nu) = D_lin + diag(D_quad_i |nu_i|).
inline Mat3 damping(const HydroModel& h, const Vec3& nu) {
    Mat3 D = h.D_lin;
    D.diagonal() += h.D_quad.cwiseProduct(nu.cwiseAbs());
    return D;
}

/// Right-hand side of the state-space model: eta_dot = J(psi) nu,
/// nu_dot = M^-1 (tau + w - C(nu) nu - D(nu) nu).
inline Vec6 state_derivative(const HydroModel& h, const VehicleState& x,
                             const Vec3& tau, const Vec3& w = Vec3::Zero()) {
    Vec6 dx;
    dx.head<3>() = rotation(x.eta(2)) * x.nu;
    dx.tail<3>() =
        h.M_inv * (tau + w - coriolis(h, x.nu) * x.nu - damping(h, x.nu) * x.nu);
    return dx;
}

/// One classical RK4 step of the plant truth model under constant tau, w.
/// Deterministic; throws on non-finite results (integration blow-up).
inline VehicleState integrate_plant(const HydroModel& h, const VehicleState& x,
                                    const Vec3& tau, const Vec3& w, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("integrate_plant: dt must be > 0");
    const Vec6 x0 = x.as_vector();
    auto f = [&](const Vec6& xv) {
        return state_derivative(h, VehicleState::from_vector(xv), tau, w);
    };
    const Vec6 k1 = f(x0);
    const Vec6 k2 = f(x0 + 0.5 * dt * k1);
    const Vec6 k3 = f(x0 + 0.5 * dt * k2);
    const Vec6 k4 = f(x0 + dt * k3);
    const Vec6 x1 = x0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x1.allFinite())
        throw std::runtime_error("integrate_plant: integration blow-up (non-finite state)");
    return VehicleState::from_vector(x1);
}

}  // namespace auvftc
