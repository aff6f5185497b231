#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "auvftc/qp.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_spd(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    MatrixXd A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = dist(rng);
    return A * A.transpose() + n * MatrixXd::Identity(n, n);
}

// Brute-force oracle: enumerate every active set, solve the equality QP,
// keep KKT-consistent feasible candidates, return the best objective.
VectorXd brute_force_qp(const MatrixXd& H, const VectorXd& g, const MatrixXd& A,
                        const VectorXd& b) {
    const int n = static_cast<int>(H.rows());
    const int m = static_cast<int>(A.rows());
    double best = std::numeric_limits<double>::infinity();
    VectorXd best_x;
    for (int mask = 0; mask < (1 << m); ++mask) {
        std::vector<int> act;
        for (int i = 0; i < m; ++i)
            if (mask & (1 << i)) act.push_back(i);
        const int w = static_cast<int>(act.size());
        if (w > n) continue;
        MatrixXd kkt = MatrixXd::Zero(n + w, n + w);
        kkt.topLeftCorner(n, n) = H;
        for (int i = 0; i < w; ++i) {
            kkt.block(n + i, 0, 1, n) = A.row(act[static_cast<size_t>(i)]);
            kkt.block(0, n + i, n, 1) = A.row(act[static_cast<size_t>(i)]).transpose();
        }
        VectorXd rhs(n + w);
        rhs.head(n) = -g;
        for (int i = 0; i < w; ++i) rhs(n + i) = b(act[static_cast<size_t>(i)]);
        Eigen::FullPivLU<MatrixXd> lu(kkt);
        if (!lu.isInvertible()) continue;
        const VectorXd sol = lu.solve(rhs);
        const VectorXd x = sol.head(n);
        const VectorXd lam = sol.tail(w);
        if (((A * x - b).array() > 1e-8).any()) continue;
        if ((lam.array() < -1e-8).any()) continue;
        const double obj = 0.5 * x.dot(H * x) + g.dot(x);
        if (obj < best - 1e-12) {
            best = obj;
            best_x = x;
        }
    }
    return best_x;
}

}  // namespace

TEST_CASE("qp: unconstrained minimum when nothing is active") {
    std::mt19937_64 rng(1);
    const MatrixXd H = random_spd(5, rng);
    VectorXd g = VectorXd::Ones(5);
    // One inactive constraint far away.
    MatrixXd A = MatrixXd::Zero(1, 5);
    A(0, 0) = 1.0;
    VectorXd b = VectorXd::Constant(1, 1e6);
    const auto sol = auvftc::qp::solve(H, g, A, b, VectorXd::Zero(5));
    REQUIRE(sol.optimal);
    const VectorXd expect = -H.ldlt().solve(g);
    REQUIRE((sol.x - expect).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("qp: clamped least squares against the analytic solution") {
    // min 1/2 |x - c|^2 s.t. x <= b with c above b -> x = b.
    const int n = 4;
    const MatrixXd H = MatrixXd::Identity(n, n);
    VectorXd c(n);
    c << 3.0, -1.0, 2.0, 0.5;
    const VectorXd g = -c;
    MatrixXd A = MatrixXd::Identity(n, n);
    VectorXd b = VectorXd::Ones(n);
    const auto sol = auvftc::qp::solve(H, g, A, b, -VectorXd::Ones(n));
    REQUIRE(sol.optimal);
    VectorXd expect(n);
    expect << 1.0, -1.0, 1.0, 0.5;
    REQUIRE((sol.x - expect).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("qp: random problems against the active-set enumeration oracle") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 3, m = 6;
        const MatrixXd H = random_spd(n, rng);
        VectorXd g(n);
        for (int i = 0; i < n; ++i) g(i) = 3.0 * dist(rng);
        MatrixXd A(m, n);
        VectorXd b(m);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) A(i, j) = dist(rng);
            b(i) = 1.0 + std::abs(dist(rng));  // keeps x = 0 strictly feasible
        }
        const auto sol = auvftc::qp::solve(H, g, A, b, VectorXd::Zero(n));
        REQUIRE(sol.optimal);
        REQUIRE(((A * sol.x - b).array() <= 1e-8).all());
        const VectorXd oracle = brute_force_qp(H, g, A, b);
        REQUIRE(oracle.size() == n);
        REQUIRE((sol.x - oracle).lpNorm<Eigen::Infinity>() < 1e-7);
    }
}

TEST_CASE("qp: deterministic across repeated invocations") {
    std::mt19937_64 rng(9);
    const MatrixXd H = random_spd(8, rng);
    VectorXd g = VectorXd::LinSpaced(8, -2.0, 2.0);
    MatrixXd A(10, 8);
    VectorXd b(10);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 8; ++j) A(i, j) = dist(rng);
        b(i) = 0.5 + std::abs(dist(rng));
    }
    const auto s1 = auvftc::qp::solve(H, g, A, b, VectorXd::Zero(8));
    const auto s2 = auvftc::qp::solve(H, g, A, b, VectorXd::Zero(8));
    REQUIRE(s1.x == s2.x);
    REQUIRE(s1.lambda == s2.lambda);
    REQUIRE(s1.iterations == s2.iterations);
}
