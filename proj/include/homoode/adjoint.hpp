#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "homoode/model.hpp"
#include "homoode/ode.hpp"

namespace homoode {

struct AdjointError : NumericError {
    using NumericError::NumericError;
};

struct AdjointResult {
    Tensor grad_x;                // dL/d(condition), shaped like the extractor output
    Eigen::VectorXd grad_theta;   // dL/d(theta), flattened over dynamics params in order
    std::int64_t nfe = 0;
};

// Memory-efficient backward: integrates the augmented reverse-time ODE
//   d/dt [z; a; gx; gth] = [F; -a^T dF/dz; -a^T dF/dx; -a^T dF/dtheta]
// from t1 to t0, starting at [z(t1); dL/dz(t1); 0; 0]. The forward
// trajectory is not needed; each reverse step re-evaluates the dynamics and
// takes vector-Jacobian products on a throwaway tape. Model parameters and
// the record are left untouched.
AdjointResult adjoint_backward(const ImplicitModel& m, const ForwardRecord& record,
                               const Tensor& dL_dzT, const SolverConfig& cfg);

// Adds the flat theta gradient into the dynamics parameters' grad buffers
// (same order as ImplicitModel::dynamics_params()).
void accumulate_theta_grads(const ImplicitModel& m, const Eigen::VectorXd& grad_theta);

// Continues the gradient flow through g(x; omega): re-runs the extractor on
// a fresh tape and backpropagates grad_x into the extractor parameters (and
// into x itself when it requires grad).
void grad_route_to_extractor(const ImplicitModel& m, const Tensor& x, const Tensor& grad_x);

}  // namespace homoode
