#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace auvftc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat9 = Eigen::Matrix<double, 9, 9>;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using Mat43 = Eigen::Matrix<double, 4, 3>;
using Mat94 = Eigen::Matrix<double, 9, 4>;

/// Maps an angle to the half-open interval (-pi, pi].
inline double wrap_angle(double a) {
    a = std::fmod(a + M_PI, 2.0 * M_PI);
    if (a <= 0.0) a += 2.0 * M_PI;
    return a - M_PI;
}

/// Earth-fixed pose eta = [x, y, psi] and body-frame velocity nu = [u, v, r].
/// psi is stored unwrapped; wrap_angle() is applied wherever heading errors
/// are formed.
struct VehicleState {
    Vec3 eta = Vec3::Zero();
    Vec3 nu = Vec3::Zero();

    Vec6 as_vector() const {
        Vec6 x;
        x << eta, nu;
        return x;
    }
    static VehicleState from_vector(const Vec6& x) {
        VehicleState s;
        s.eta = x.head<3>();
        s.nu = x.tail<3>();
        return s;
    }
    bool all_finite() const { return eta.allFinite() && nu.allFinite(); }
};

/// Desired pose and its first two time derivatives, all Earth-fixed.
/// The heading channel carries psi_d, psi_d_dot, psi_d_ddot.
struct ReferenceSignal {
    Vec3 eta_d = Vec3::Zero();
    Vec3 eta_d_dot = Vec3::Zero();
    Vec3 eta_d_ddot = Vec3::Zero();
};

/// Augmented tracking error xi = [eta_tilde; s; d]: position error,
/// combined velocity error and the generalized-force bias pseudo-state.
struct AugmentedError {
    Vec3 eta_tilde = Vec3::Zero();
    Vec3 s = Vec3::Zero();
    Vec3 d = Vec3::Zero();

    Vec9 as_vector() const {
        Vec9 xi;
        xi << eta_tilde, s, d;
        return xi;
    }
    static AugmentedError from_vector(const Vec9& xi) {
        AugmentedError e;
        e.eta_tilde = xi.head<3>();
        e.s = xi.segment<3>(3);
        e.d = xi.tail<3>();
        return e;
    }
};

}  // namespace auvftc
