#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "homoode/ode.hpp"
#include "homoode/ops.hpp"
#include "homoode/tensor.hpp"

namespace homoode {

enum class ModelKind { homo_ode, neural_ode, anode, deq };
enum class ArchKind { conv, mlp };

std::string model_kind_name(ModelKind k);
ModelKind model_kind_from_name(const std::string& s);

struct ModelConfig {
    ModelKind kind = ModelKind::homo_ode;
    ArchKind arch = ArchKind::conv;
    int in_channels = 1;   // conv input channels
    int image_hw = 28;     // conv input spatial size (square)
    int in_features = 2;   // mlp input width
    int channels = 32;     // state width c
    int augment_dim = 0;   // anode extra channels p
    int num_classes = 10;
    int groups = 8;
    double dropout_rate = 0.0;
    double t0 = 0.0;
    double t1 = 1.0;
    SolverConfig solver;
    // DEQ forward solver
    int deq_max_iter = 50;
    double deq_tol = 1e-4;
    int deq_anderson_depth = 5;

    // spatial size of the state feature map
    std::int64_t state_hw() const { return arch == ArchKind::conv ? image_hw / 4 : 1; }
    // channel count of the state (anode states carry the augmentation)
    std::int64_t state_channels() const {
        return kind == ModelKind::anode ? channels + augment_dim : channels;
    }
};

struct ForwardRecord {
    Tensor z_final;
    std::int64_t nfe = 0;
    std::optional<OdeSolution<Tensor>> trajectory;
    Tensor condition;  // extracted features, tape-connected
    Tensor z0;         // initial state actually used
    Tensor dropout_mask;  // empty when dropout is off
};

// Feature extractor + dynamics/equilibrium core + linear classifier head,
// shared across the four model kinds.
class ImplicitModel {
public:
    ImplicitModel(ModelConfig cfg, std::mt19937_64& rng);

    const ModelConfig& config() const { return cfg_; }
    ModelConfig& config() { return cfg_; }

    std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
    Tensor param(const std::string& name) const;
    void set_param(const std::string& name, const Tensor& t);
    // flattened size of all dynamics parameters
    std::int64_t dynamics_param_size() const;
    std::vector<Tensor> dynamics_params() const;
    std::vector<Tensor> extractor_params() const;

    // g(x; omega)
    Tensor extract(const Tensor& x_batch) const;

    // One dynamics / core evaluation. For homo_ode and deq the time is
    // ignored (the dynamics has no explicit t input); for neural_ode and
    // anode it is injected as an extra channel.
    Tensor dynamics_eval(const Tensor& z, const Tensor& cond, double t,
                         const Tensor* dropout_mask) const;

    // Forward passes per kind. `dropout_rng` null => dropout disabled.
    ForwardRecord homoode_forward(const Tensor& x_batch, const Tensor* z0 = nullptr,
                                  bool record_trajectory = false,
                                  std::mt19937_64* dropout_rng = nullptr) const;
    ForwardRecord neural_ode_forward(const Tensor& x_batch, bool record_trajectory = false,
                                     std::mt19937_64* dropout_rng = nullptr) const;
    ForwardRecord anode_forward(const Tensor& x_batch, bool record_trajectory = false,
                                std::mt19937_64* dropout_rng = nullptr) const;
    ForwardRecord deq_forward(const Tensor& x_batch,
                              std::mt19937_64* dropout_rng = nullptr) const;
    // Dispatch on cfg.kind.
    ForwardRecord forward(const Tensor& x_batch, const Tensor* z0 = nullptr,
                          bool record_trajectory = false,
                          std::mt19937_64* dropout_rng = nullptr) const;

    Tensor classify(const Tensor& z_final) const;

    // DEQ implicit backward: given dL/dz* (already in z_star.grad of the
    // record's z_final leaf), accumulates parameter gradients and continues
    // the flow into the extractor through `condition`.
    void deq_backward(const ForwardRecord& rec, Tensor& outer_tape_condition,
                      Tape& outer_tape) const;

private:
    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;

    Tensor conv_block(const Tensor& x, const std::string& prefix, int stride, int pad,
                      bool norm_relu) const;
};

Tensor model_loss(const Tensor& logits, const std::vector<int>& labels);

// flatten / unflatten helpers used by solvers that work on plain vectors
Eigen::VectorXd tensor_to_vec(const Tensor& t);
Tensor vec_to_tensor(const Eigen::VectorXd& v, const Shape& shape);

}  // namespace homoode
