#pragma once

#include <cmath>
#include <stdexcept>

#include "auvftc/types.hpp"

namespace auvftc {

namespace detail {

/// Planar path sample with derivatives through third order (the heading
/// reference needs jerk for psi_d_ddot).
struct PathSample {
    double x, dx, ddx, dddx;
    double y, dy, ddy, dddy;
};

inline PathSample case1_path(double t) {
    // x_d = 0.5 t, y_d = sin(0.5 t)
    PathSample p;
    p.x = 0.5 * t;
    p.dx = 0.5;
    p.ddx = 0.0;
    p.dddx = 0.0;
    p.y = std::sin(0.5 * t);
    p.dy = 0.5 * std::cos(0.5 * t);
    p.ddy = -0.25 * std::sin(0.5 * t);
    p.dddy = -0.125 * std::cos(0.5 * t);
    return p;
}

inline PathSample case2_path(double t) {
    // eight-shaped path: x_d = -sin(0.5 t), y_d = sin(0.25 t)
    PathSample p;
    p.x = -std::sin(0.5 * t);
    p.dx = -0.5 * std::cos(0.5 * t);
    p.ddx = 0.25 * std::sin(0.5 * t);
    p.dddx = 0.125 * std::cos(0.5 * t);
    p.y = std::sin(0.25 * t);
    p.dy = 0.25 * std::cos(0.25 * t);
    p.ddy = -0.0625 * std::sin(0.25 * t);
    p.dddy = -0.015625 * std::cos(0.25 * t);
    return p;
}

}  // namespace detail

/**
 * Reference signal for the given scenario case: position per the case
 * formulas, velocity/acceleration by analytic differentiation, and the
 * path-tangent heading psi_d = atan2(y_d_dot, x_d_dot) with its analytic
 * derivatives.  psi_d is reported in (-pi, pi]; consumers always wrap
 * heading differences, so branch crossings never enter errors or costs.
 * The path speed never vanishes for either case, so the tangent heading
 * is well defined for all t >= 0.
 */
inline ReferenceSignal reference(double t, int case_id) {
    if (t < 0.0) throw std::invalid_argument("reference: t must be >= 0");
    detail::PathSample p;
    switch (case_id) {
        case 1: p = detail::case1_path(t); break;
        case 2: p = detail::case2_path(t); break;
        default: throw std::invalid_argument("reference: case must be 1 or 2");
    }
    const double sigma = p.dx * p.dx + p.dy * p.dy;
    const double n = p.dx * p.ddy - p.dy * p.ddx;
    const double ndot = p.dx * p.dddy - p.dy * p.dddx;
    const double sigmadot = 2.0 * (p.dx * p.ddx + p.dy * p.ddy);
    const double psi = std::atan2(p.dy, p.dx);
    const double psidot = n / sigma;
    const double psiddot = (ndot * sigma - n * sigmadot) / (sigma * sigma);

    ReferenceSignal ref;
    ref.eta_d << p.x, p.y, psi;
    ref.eta_d_dot << p.dx, p.dy, psidot;
    ref.eta_d_ddot << p.ddx, p.ddy, psiddot;
    return ref;
}

}  // namespace auvftc
