#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>

#include "homoode/errors.hpp"

namespace homoode {

// z = f(z) with the condition already bound into f.
struct EquilibriumProblem {
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> f;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian_f;  // optional
    int max_iter = 50;
    double tol = 1e-4;
};

struct EqResult {
    Eigen::VectorXd z_star;
    int iterations = 0;
    double residual = 0.0;  // ||z - f(z)||_inf at return
};

struct NonConvergenceError : NumericError {
    NonConvergenceError(const std::string& msg, Eigen::VectorXd last_iterate, double residual)
        : NumericError(msg), last_iterate(std::move(last_iterate)), residual(residual) {}
    Eigen::VectorXd last_iterate;
    double residual;
};

// Newton's method on r(z) = z - f(z) with backtracking line search on ||r||.
EqResult newton_solve(const EquilibriumProblem& p, const Eigen::VectorXd& z0);

// Picard iteration (depth 0) or Anderson acceleration (depth > 0).
EqResult fixed_point_iterate(const EquilibriumProblem& p, const Eigen::VectorXd& z0,
                             int anderson_depth);

// Solves a = upstream + vjp(a), i.e. (I - df/dz)^T a = upstream when
// vjp(a) = (df/dz)^T a. The core of the DEQ implicit backward pass.
Eigen::VectorXd adjoint_fixed_point(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& vjp,
    const Eigen::VectorXd& upstream, double tol, int max_iter, int anderson_depth);

}  // namespace homoode
