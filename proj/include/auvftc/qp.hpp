#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <vector>

namespace auvftc::qp {

struct Options {
    int max_iterations = 400;
    double constraint_tol = 1e-9;   // activation / violation threshold
    double step_tol = 1e-11;        // |p| below this counts as a null step
    double multiplier_tol = 1e-9;   // dual feasibility slack
};

struct Solution {
    Eigen::VectorXd x;
    Eigen::VectorXd lambda;  // one multiplier per constraint row, >= 0 when active
    bool optimal = false;
    int iterations = 0;
};

/**
 * Primal active-set method for the strictly convex QP
 *
 *     min 1/2 x^T H x + g^T x    s.t.  A x <= b,
 *
 * started from a feasible point x0 (Nocedal & Wright, Alg. 16.3).  Each
 * working-set subproblem is solved through its KKT system by dense LU.
 * Deterministic: ties in the blocking-constraint and leaving-multiplier
 * selections are broken by lowest row index.
 */
inline Solution solve(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                      const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                      const Eigen::VectorXd& x0, const Options& opt = {}) {
    const int n = static_cast<int>(H.rows());
    const int m = static_cast<int>(A.rows());
    Solution sol;
    sol.x = x0;
    sol.lambda = Eigen::VectorXd::Zero(m);

    std::vector<int> active;
    active.reserve(static_cast<size_t>(n));
    std::vector<char> in_set(static_cast<size_t>(m), 0);

    Eigen::VectorXd p(n);
    Eigen::VectorXd mult;  // multipliers of the working set

    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        sol.iterations = iter + 1;
        const int w = static_cast<int>(active.size());

        // Equality-constrained subproblem on the working set.
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + w, n + w);
        kkt.topLeftCorner(n, n) = H;
        for (int i = 0; i < w; ++i) {
            kkt.block(n + i, 0, 1, n) = A.row(active[static_cast<size_t>(i)]);
            kkt.block(0, n + i, n, 1) = A.row(active[static_cast<size_t>(i)]).transpose();
        }
        Eigen::VectorXd rhs(n + w);
        rhs.head(n) = -(H * sol.x + g);
        rhs.tail(w).setZero();
        const Eigen::VectorXd step = kkt.fullPivLu().solve(rhs);
        p = step.head(n);
        mult = step.tail(w);

        if (p.lpNorm<Eigen::Infinity>() <= opt.step_tol) {
            // Null step: check dual feasibility, drop the worst violator.
            int drop = -1;
            double most_negative = -opt.multiplier_tol;
            for (int i = 0; i < w; ++i) {
                if (mult(i) < most_negative) {
                    most_negative = mult(i);
                    drop = i;
                }
            }
            if (drop < 0) {
                sol.lambda.setZero();
                for (int i = 0; i < w; ++i)
                    sol.lambda(active[static_cast<size_t>(i)]) = std::max(0.0, mult(i));
                sol.optimal = true;
                return sol;
            }
            in_set[static_cast<size_t>(active[static_cast<size_t>(drop)])] = 0;
            active.erase(active.begin() + drop);
            continue;
        }

        // Ratio test over inactive rows.
        double alpha = 1.0;
        int blocking = -1;
        for (int i = 0; i < m; ++i) {
            if (in_set[static_cast<size_t>(i)]) continue;
            const double api = A.row(i).dot(p);
            if (api <= opt.constraint_tol) continue;
            const double gap = b(i) - A.row(i).dot(sol.x);
            const double ai = std::max(gap, 0.0) / api;
            if (ai < alpha) {
                alpha = ai;
                blocking = i;
            }
        }
        sol.x += alpha * p;
        if (blocking >= 0) {
            active.push_back(blocking);
            in_set[static_cast<size_t>(blocking)] = 1;
        }
    }

    // Iteration budget exhausted: report the current (feasible) iterate.
    sol.lambda.setZero();
    for (size_t i = 0; i < active.size(); ++i)
        if (static_cast<int>(i) < mult.size())
            sol.lambda(active[i]) = std::max(0.0, mult(static_cast<int>(i)));
    sol.optimal = false;
    return sol;
}

}  // namespace auvftc::qp
