#pragma once

#include <Eigen/Dense>

#include <stdexcept>

#include "auvftc/types.hpp"

namespace auvftc {

/// Thruster command in Newtons, one entry per thruster.
using ThrustCommand = Vec4;

/**
 * Horizontal-plane thruster geometry.  Column i of the nominal allocation
 * matrix is t_i = [d_i ; r_i x d_i] with d_i the unit force direction and
 * r_i the mounting position in the body frame.
 */
struct ThrusterLayout {
    Eigen::Matrix<double, 4, 2> positions;   // [m]
    Eigen::Matrix<double, 4, 2> directions;  // unit vectors
    Mat34 T_nominal;

    static ThrusterLayout make(const Eigen::Matrix<double, 4, 2>& positions,
                               const Eigen::Matrix<double, 4, 2>& directions) {
        ThrusterLayout l;
        l.positions = positions;
        l.directions = directions;
        for (int i = 0; i < 4; ++i) {
            const double n = directions.row(i).norm();
            if (std::abs(n - 1.0) > 1e-9)
                throw std::invalid_argument("ThrusterLayout: direction columns must be unit");
            l.T_nominal(0, i) = directions(i, 0);
            l.T_nominal(1, i) = directions(i, 1);
            l.T_nominal(2, i) = positions(i, 0) * directions(i, 1) -
                                positions(i, 1) * directions(i, 0);
        }
        Eigen::FullPivLU<Mat34> lu(l.T_nominal);
        if (lu.rank() < 3)
            throw std::invalid_argument("ThrusterLayout: nominal T must have rank 3");
        return l;
    }

    /// Vectored X configuration: four horizontal thrusters at (+-0.35, +-0.25) m
    /// angled +-45 deg from surge, numbered front-left, front-right,
    /// rear-right, rear-left.  Rank-3 nominal T, and still rank 3 after
    /// losing any single thruster.
    static ThrusterLayout vectored_x() {
        Eigen::Matrix<double, 4, 2> pos, dir;
        pos << 0.35, 0.25,
               0.35, -0.25,
               -0.35, -0.25,
               -0.35, 0.25;
        const double q = std::sqrt(0.5);
        dir << q, -q,
               q, q,
               q, -q,
               q, q;
        return make(pos, dir);
    }
};

/// Per-thruster effectiveness gamma in [0,1] and in-plane misalignment
/// angle theta; (1, 0) is the healthy thruster.
struct FaultParameters {
    Vec4 gamma = Vec4::Ones();
    Vec4 theta = Vec4::Zero();

    static FaultParameters nominal() { return FaultParameters{}; }

    void validate() const {
        for (int i = 0; i < 4; ++i) {
            if (!(gamma(i) >= 0.0 && gamma(i) <= 1.0))
                throw std::invalid_argument("FaultParameters: gamma_i must lie in [0,1]");
            if (!(std::abs(theta(i)) <= M_PI))
                throw std::invalid_argument("FaultParameters: |theta_i| must be <= pi");
        }
    }

    bool operator==(const FaultParameters& o) const {
        return gamma == o.gamma && theta == o.theta;
    }
};

/// Amplitude box and symmetric rate limit on the thruster commands.
struct InputLimits {
    Vec4 u_min = Vec4::Constant(-500.0);
    Vec4 u_max = Vec4::Constant(500.0);
    double rate_max = 2000.0;  // [N/s]

    void validate() const {
        if (((u_max - u_min).array() <= 0.0).any())
            throw std::invalid_argument("InputLimits: u_min < u_max required");
        if (!(rate_max > 0.0))
            throw std::invalid_argument("InputLimits: rate_max must be > 0");
    }
};

/**
 * Misaligned allocation matrix.  Column i rotates the force direction d_i
 * in plane by theta_i and recomputes the moment row from the geometry,
 * r_i x (R(theta_i) d_i).  theta = 0 reproduces the nominal matrix exactly.
 */
inline Mat34 allocation_matrix(const ThrusterLayout& layout, const Vec4& theta) {
    Mat34 T;
    for (int i = 0; i < 4; ++i) {
        const double c = std::cos(theta(i)), s = std::sin(theta(i));
        const double dx = layout.directions(i, 0), dy = layout.directions(i, 1);
        const double rx = c * dx - s * dy;
        const double ry = s * dx + c * dy;
        T(0, i) = rx;
        T(1, i) = ry;
        T(2, i) = layout.positions(i, 0) * ry - layout.positions(i, 1) * rx;
    }
    return T;
}

/// Effective input map T_tilde(theta) * diag(gamma).
inline Mat34 effective_allocation(const ThrusterLayout& layout,
                                  const FaultParameters& fault) {
    return allocation_matrix(layout, fault.theta) * fault.gamma.asDiagonal();
}

/// Generalized force tau = T_tilde(theta) Gamma u.
inline Vec3 generalized_force(const ThrustCommand& u, const FaultParameters& fault,
                              const ThrusterLayout& layout) {
    return effective_allocation(layout, fault) * u;
}

/**
 * Damped least-squares allocation u = G^T (G G^T + eps I)^-1 tau with
 * G = T_tilde(theta) Gamma.  With eps = 0 and full row rank this is the
 * Moore-Penrose solution; a rank-deficient G with eps = 0 is rejected with
 * an error instructing the caller to damp.
 */
inline ThrustCommand allocate_damped(const Vec3& tau, const FaultParameters& fault,
                                     const ThrusterLayout& layout, double epsilon) {
    if (epsilon < 0.0) throw std::invalid_argument("allocate_damped: epsilon must be >= 0");
    const Mat34 G = effective_allocation(layout, fault);
    Mat3 N = G * G.transpose();
    N.diagonal().array() += epsilon;
    if (epsilon == 0.0) {
        Eigen::FullPivLU<Mat3> lu(N);
        if (!lu.isInvertible())
            throw std::runtime_error(
                "allocate_damped: T Gamma is rank-deficient; retry with epsilon > 0");
        return G.transpose() * lu.solve(tau);
    }
    return G.transpose() * Eigen::LDLT<Mat3>(N).solve(tau);
}

/**
 * Projection onto the admissible input set: componentwise clamp to
 * [u_min, u_max] intersected with the rate box around u_prev.  Idempotent
 * and nonexpansive in the infinity norm.
 */
inline ThrustCommand project_input(const ThrustCommand& u_raw, const ThrustCommand& u_prev,
                                   const InputLimits& limits, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("project_input: dt must be > 0");
    const Vec4 lo = limits.u_min.cwiseMax((u_prev.array() - limits.rate_max * dt).matrix());
    const Vec4 hi = limits.u_max.cwiseMin((u_prev.array() + limits.rate_max * dt).matrix());
    return u_raw.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace auvftc
