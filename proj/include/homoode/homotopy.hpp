#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "homoode/ode.hpp"

namespace homoode {

enum class HomotopyKind { fixed_point, newton };

// H(z,l) deforms an easy start system into the target residual r(z) as the
// scalar l runs 0 -> 1.
//   fixed_point: H(z,l) = l*r(z) + (1-l)*(z - z0)
//   newton:      H(z,l) = r(z) - (1-l)*r(z0)
struct HomotopyProblem {
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> residual;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian;  // optional
    Eigen::VectorXd z0;
    HomotopyKind kind = HomotopyKind::fixed_point;

    // Analytic Jacobian when supplied, central differences otherwise.
    Eigen::MatrixXd jac(const Eigen::VectorXd& z) const;
};

struct PathState {
    Eigen::VectorXd z;
    double lambda = 0.0;
    double s = 0.0;  // accumulated arc length
    double v = 1.0;  // traversal velocity ds/dt
};

struct PathOptions {
    bool corrector = true;
    double path_tol = 1e-8;   // ||H||_inf bound enforced by the corrector
    double solve_tol = 1e-6;  // ||r||_inf bound on the returned solution
    double velocity = 1.0;
    double max_arc_length = 1e4;
    double rcond_threshold = 1e-12;
};

struct TraceResult {
    Eigen::VectorXd solution;
    std::vector<PathState> trace;
    std::int64_t nfe = 0;
};

struct PathFailureError : NumericError {
    PathFailureError(const std::string& msg, std::vector<PathState> trace)
        : NumericError(msg), trace(std::move(trace)) {}
    std::vector<PathState> trace;
};

Eigen::VectorXd homotopy_eval(const HomotopyProblem& p, const Eigen::VectorXd& z, double lambda);

// Unit tangent (dz/ds, dl/ds) of the zero path, oriented to continue
// prev_dir (or with dl/ds > 0 when prev_dir is absent).
std::pair<Eigen::VectorXd, double> tangent(const HomotopyProblem& p, const Eigen::VectorXd& z,
                                           double lambda,
                                           const Eigen::VectorXd* prev_dir = nullptr,
                                           double rcond_threshold = 1e-12);

TraceResult trace_zero_path(const HomotopyProblem& p, const SolverConfig& cfg,
                            const PathOptions& opt = {});

// Time-parameterized drift dz/dt under the velocity-modified normalization
// ||dz/dt||^2 + |dl/dt|^2 = v^2.
Eigen::VectorXd velocity_dynamics(const HomotopyProblem& p, const Eigen::VectorXd& z,
                                  double lambda, double v);

// lambda(t) on the same uniform [0,1] grid as the samples of ||F||, from
// dl/dt = sqrt(v^2 - ||F||^2), lambda(0) = 0.
std::vector<double> recover_lambda(const std::vector<double>& F_norms, double v);
// The velocity making lambda(1) = 1, by monotone bisection.
double solve_v(const std::vector<double>& F_norms);

// Integrates dz/dl = -J(z)^-1 r(z0) over l in [0,1]; returns z(1).
Eigen::VectorXd newton_homotopy_ode(const HomotopyProblem& p, const SolverConfig& cfg,
                                    std::int64_t* nfe_out = nullptr);
// Single explicit Euler step with h = 1 at l = 0: exactly one Newton iterate.
Eigen::VectorXd newton_homotopy_euler_step(const HomotopyProblem& p);

struct NfeRow {
    double inv_distance = 0.0;
    std::int64_t nfe = 0;
    bool ok = false;
    std::string error;
};

// For each distance d, restarts the trace from z_star + d*unit_dir and
// records the solver's function-evaluation count.
std::vector<NfeRow> nfe_vs_distance_experiment(const HomotopyProblem& p,
                                               const std::vector<double>& distances,
                                               const SolverConfig& cfg,
                                               const PathOptions& opt = {});

// The strongly nonlinear scalar test equation used by the CLI experiments:
// f(x) = 2x + exp(-0.1 x) + 5 sin(4x) - 16.
HomotopyProblem benchmark_equation(double z0, HomotopyKind kind = HomotopyKind::fixed_point);

}  // namespace homoode
