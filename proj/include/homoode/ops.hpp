#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "homoode/tensor.hpp"

namespace homoode::ops {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double a);
Tensor relu(const Tensor& x);
Tensor tanh_act(const Tensor& x);

// y = sum_i coeffs[i] * xs[i], all same shape. The workhorse of RK stages.
Tensor lincomb(const std::vector<double>& coeffs, const std::vector<Tensor>& xs);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);                     // [m,k]x[k,n]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);    // x[m,k] w[k,n] b[n]

// ---- convolution (NCHW) ----
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);

// ---- normalization / activations over axes ----
Tensor softmax(const Tensor& x);  // over last axis
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups);

// ---- reductions ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);  // [n,c,h,w] -> [n,c]

// ---- shape / channel plumbing ----
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat_channels(const Tensor& a, const Tensor& b);            // along dim 1
Tensor slice_channels(const Tensor& x, std::int64_t from, std::int64_t to);
Tensor scale_channels(const Tensor& x, const Tensor& m);             // m: [c]
Tensor add_channel_bias(const Tensor& x, const Tensor& b);           // b: [c]
Tensor broadcast_channels(const Tensor& v, std::int64_t n, std::int64_t h, std::int64_t w);

// ---- loss ----
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Channel-wise Bernoulli(1-rate)/(1-rate) mask, sampled once per forward
// pass and reused across every solver evaluation within that pass.
Tensor variational_dropout_mask(std::int64_t channels, double rate, std::mt19937_64& rng);

}  // namespace homoode::ops
