#pragma once

#include <cstdint>
#include <vector>

#include "homoode/tensor.hpp"

namespace homoode {

// Learnable initial point shared across all samples: a (1,1,c) tensor
// broadcast to the full state shape at the start of every forward pass.
struct SharedInit {
    Tensor z_tilde;  // shape (1,1,c)
    double lr_init = 0.02;
    int update_every = 20;
    int step_counter = 0;

    std::int64_t channels() const { return z_tilde.dim(2); }
    double alpha(std::int64_t h, std::int64_t w) const;  // 2*lr_init/(h*w), clamped to <= 1
};

SharedInit make_shared_init(std::int64_t channels, double lr_init = 0.02, int update_every = 20);

// Tile z_tilde into a [batch, c, h, w] (or [batch, c] when h=w=1 and the
// caller reshapes) initial state. Detached: the task loss never reaches
// z_tilde through this tensor.
Tensor broadcast_init(const SharedInit& si, std::int64_t h, std::int64_t w, std::int64_t batch);

// L(z_tilde) = (1/hw) * mean over batch and spatial positions of the
// channel-summed squared deviation. Differentiable w.r.t. z_tilde when a
// tape is active and z_tilde requires grad. z_star_batch: [n,c,h,w] or [n,c].
Tensor init_loss(const SharedInit& si, const Tensor& z_star_batch);

// One SGD step on init_loss. Closed form: z_tilde <- alpha*m + (1-alpha)*z_tilde
// where m is the per-channel batch-and-spatial mean of z_star and
// alpha = 2*lr_init/(h*w).
void update_init(SharedInit& si, const Tensor& z_star_batch);

// Per-channel batch-and-spatial mean of z_star, shape [c].
std::vector<double> channel_centroid(const Tensor& z_star_batch);

// Call once per optimizer step; updates z_tilde every `update_every` steps.
// Returns true when an update happened.
bool maybe_update_init(SharedInit& si, const Tensor& z_star_batch);

struct CentroidReport {
    std::vector<double> minimizer;    // argmin of the empirical init loss
    std::vector<double> sample_mean;  // per-channel centroid
    double max_abs_diff = 0.0;
    double grad_norm_at_mean = 0.0;
    bool ok = false;
};

// Verifies that the minimizer of the empirical init loss is the sample
// centroid (per channel, spatially averaged), within `tol`.
CentroidReport centroid_equivalence_check(const std::vector<Tensor>& z_star_samples,
                                          double tol = 1e-10);

}  // namespace homoode
