#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "homoode/equilibrium.hpp"
#include "homoode/homotopy.hpp"

using namespace homoode;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace {

Vec vec1(double x) {
    Vec v(1);
    v[0] = x;
    return v;
}

EquilibriumProblem half_plus_one() {
    EquilibriumProblem p;
    p.f = [](const Vec& z) { return Vec(0.5 * z + Vec::Ones(z.size())); };
    p.jacobian_f = [](const Vec& z) { return Mat(0.5 * Mat::Identity(z.size(), z.size())); };
    p.tol = 1e-10;
    return p;
}

// random contraction z -> Az + b with ||A|| < 1
struct Affine {
    Mat A;
    Vec b;
    EquilibriumProblem problem(double tol = 1e-10, int max_iter = 500) const {
        EquilibriumProblem p;
        Mat A_ = A;
        Vec b_ = b;
        p.f = [A_, b_](const Vec& z) { return Vec(A_ * z + b_); };
        p.jacobian_f = [A_](const Vec&) { return A_; };
        p.tol = tol;
        p.max_iter = max_iter;
        return p;
    }
    Vec exact() const { return Mat(Mat::Identity(A.rows(), A.cols()) - A).lu().solve(b); }
};

Affine random_contraction(int n, std::uint64_t seed, double scale = 0.8) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    Affine a;
    a.A = Mat::NullaryExpr(n, n, [&] { return d(rng); });
    a.A *= scale / a.A.operatorNorm();
    a.b = Vec::NullaryExpr(n, [&] { return d(rng); });
    return a;
}

}  // namespace

TEST_CASE("newton_solve: linear fixed point 0.5z + 1") {
    auto res = newton_solve(half_plus_one(), vec1(0.0));
    CHECK(res.z_star[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(res.residual <= 1e-10);
}

TEST_CASE("newton_solve: Dottie number matches the plain-iteration oracle") {
    EquilibriumProblem p;
    p.f = [](const Vec& z) { return Vec(z.array().cos()); };
    p.tol = 1e-12;
    auto res = newton_solve(p, vec1(0.0));
    double d = 0.0;
    for (int i = 0; i < 10000; ++i) d = std::cos(d);
    CHECK(std::abs(res.z_star[0] - d) < 1e-10);
}

TEST_CASE("newton_solve: affine contraction matches the closed form") {
    auto a = random_contraction(3, 101);
    auto res = newton_solve(a.problem(), Vec::Zero(3));
    CHECK((res.z_star - a.exact()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("newton_solve: non-convergence reports the last iterate") {
    EquilibriumProblem p;
    // r(z) = z - f(z) has no real zero for f(z) = z + z^2 + 1
    p.f = [](const Vec& z) { return Vec(z.array() + z.array().square() + 1.0); };
    p.max_iter = 20;
    p.tol = 1e-10;
    try {
        newton_solve(p, vec1(0.0));
        FAIL("expected non-convergence");
    } catch (const NonConvergenceError& e) {
        CHECK(e.last_iterate.size() == 1);
        CHECK(e.residual > 0.0);
    }
}

TEST_CASE("fixed_point_iterate: Picard on 0.5z + 1 within 40 iterations") {
    auto p = half_plus_one();
    p.max_iter = 40;
    auto res = fixed_point_iterate(p, vec1(0.0), 0);
    CHECK(res.z_star[0] == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(res.iterations <= 40);
}

TEST_CASE("fixed_point_iterate: identity converges immediately") {
    EquilibriumProblem p;
    p.f = [](const Vec& z) { return z; };
    Vec z0(2);
    z0 << 1.5, -4.0;
    auto res = fixed_point_iterate(p, z0, 0);
    CHECK(res.z_star == z0);
    CHECK(res.residual == 0.0);
}

TEST_CASE("Anderson depth 5 beats plain Picard on the same contraction") {
    auto a = random_contraction(8, 202, 0.9);
    auto p = a.problem(1e-9, 1000);
    auto plain = fixed_point_iterate(p, Vec::Zero(8), 0);
    auto anderson = fixed_point_iterate(p, Vec::Zero(8), 5);
    CHECK(anderson.iterations < plain.iterations);
    CHECK((anderson.z_star - a.exact()).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("fixed_point_iterate: divergence is an error carrying the last iterate") {
    EquilibriumProblem p;
    p.f = [](const Vec& z) { return Vec(3.0 * z + Vec::Ones(z.size())); };
    p.max_iter = 200;
    try {
        fixed_point_iterate(p, vec1(1.0), 0);
        FAIL("expected divergence");
    } catch (const NonConvergenceError& e) {
        CHECK(e.residual > 1.0);
        CHECK(e.last_iterate.allFinite());
    }
}

TEST_CASE("residual contract: independent re-evaluation confirms tolerance") {
    auto a = random_contraction(5, 303);
    auto p = a.problem(1e-8, 1000);
    for (int depth : {0, 5}) {
        auto res = fixed_point_iterate(p, Vec::Zero(5), depth);
        CHECK((res.z_star - p.f(res.z_star)).lpNorm<Eigen::Infinity>() <= 1e-8);
    }
    auto rn = newton_solve(p, Vec::Zero(5));
    CHECK((rn.z_star - p.f(rn.z_star)).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("solver agreement: newton, anderson, and the homotopy trace coincide") {
    // scalar z = cos(z) recast for the homotopy path as r(z) = z - cos(z)
    EquilibriumProblem p;
    p.f = [](const Vec& z) { return Vec(z.array().cos()); };
    p.tol = 1e-10;
    p.max_iter = 200;
    auto zn = newton_solve(p, vec1(0.3)).z_star;
    auto za = fixed_point_iterate(p, vec1(0.3), 5).z_star;

    HomotopyProblem hp;
    hp.residual = [](const Vec& z) { return Vec(z.array() - z.array().cos()); };
    hp.z0 = vec1(0.3);
    SolverConfig cfg;
    cfg.atol = cfg.rtol = 1e-8;
    cfg.max_steps = 10000;
    PathOptions opt;
    opt.solve_tol = 1e-10;
    auto zh = trace_zero_path(hp, cfg, opt).solution;

    CHECK(std::abs(zn[0] - za[0]) < 1e-9);
    CHECK(std::abs(zn[0] - zh[0]) < 1e-9);
}

TEST_CASE("adjoint_fixed_point solves (I - A)^T a = upstream") {
    auto a = random_contraction(6, 404);
    Mat A = a.A;
    auto vjp = [&A](const Vec& v) { return Vec(A.transpose() * v); };
    std::mt19937_64 rng(5);
    std::normal_distribution<double> d(0.0, 1.0);
    Vec upstream = Vec::NullaryExpr(6, [&] { return d(rng); });
    Vec got = adjoint_fixed_point(vjp, upstream, 1e-11, 2000, 5);
    Vec want = Mat(Mat::Identity(6, 6) - A).transpose().lu().solve(upstream);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("adjoint_fixed_point: zero upstream gives zero immediately") {
    auto vjp = [](const Vec& v) { return Vec(0.5 * v); };
    Vec got = adjoint_fixed_point(vjp, Vec::Zero(4), 1e-10, 100, 3);
    CHECK(got.cwiseAbs().maxCoeff() == 0.0);
}
