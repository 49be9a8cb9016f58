#include "homoode/shared_init.hpp"

#include <algorithm>
#include <cmath>

#include "homoode/ops.hpp"

namespace homoode {

namespace {

// Accepts [n,c,h,w] or [n,c]; returns a 4-D view shape.
Shape as4d(const Tensor& z) {
    if (z.ndim() == 4) return z.shape();
    if (z.ndim() == 2) return {z.dim(0), z.dim(1), 1, 1};
    throw DimensionError("shared-init: z_star must be [n,c,h,w] or [n,c], got " +
                         shape_str(z.shape()));
}

}  // namespace

double SharedInit::alpha(std::int64_t h, std::int64_t w) const {
    return std::min(1.0, 2.0 * lr_init / static_cast<double>(h * w));
}

SharedInit make_shared_init(std::int64_t channels, double lr_init, int update_every) {
    if (channels <= 0) throw ParameterError("make_shared_init: channels must be > 0");
    if (update_every <= 0) throw ParameterError("make_shared_init: update_every must be > 0");
    SharedInit si;
    si.z_tilde = Tensor::zeros({1, 1, channels});
    si.lr_init = lr_init;
    si.update_every = update_every;
    return si;
}

Tensor broadcast_init(const SharedInit& si, std::int64_t h, std::int64_t w, std::int64_t batch) {
    if (h <= 0 || w <= 0) throw ParameterError("broadcast_init: h, w must be > 0");
    const std::int64_t c = si.channels();
    std::vector<double> out(static_cast<size_t>(batch * c * h * w));
    const auto& v = si.z_tilde.value();
    size_t i = 0;
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t p = 0; p < h * w; ++p) out[i++] = v[static_cast<size_t>(ch)];
    return Tensor::from({batch, c, h, w}, std::move(out));
}

Tensor init_loss(const SharedInit& si, const Tensor& z_star_batch) {
    const Shape s = as4d(z_star_batch);
    const std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    if (c != si.channels())
        throw DimensionError("init_loss: channel mismatch, z_star has " + std::to_string(c) +
                             ", z_tilde has " + std::to_string(si.channels()));
    Tensor zs = z_star_batch.ndim() == 4 ? z_star_batch : ops::reshape(z_star_batch, s);
    Tensor v = ops::reshape(si.z_tilde, {c});
    Tensor b = ops::broadcast_channels(v, n, h, w);
    Tensor diff = ops::sub(zs, b);
    Tensor sq = ops::mul(diff, diff);
    const double hw = static_cast<double>(h * w);
    return ops::scale(ops::sum_all(sq), 1.0 / (static_cast<double>(n) * hw * hw));
}

std::vector<double> channel_centroid(const Tensor& z_star_batch) {
    const Shape s = as4d(z_star_batch);
    const std::int64_t n = s[0], c = s[1], hw = s[2] * s[3];
    std::vector<double> m(static_cast<size_t>(c), 0.0);
    const auto& v = z_star_batch.value();
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double* p = v.data() + (b * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; ++i) m[static_cast<size_t>(ch)] += p[i];
        }
    for (auto& x : m) x /= static_cast<double>(n * hw);
    return m;
}

void update_init(SharedInit& si, const Tensor& z_star_batch) {
    const Shape s = as4d(z_star_batch);
    const double a = si.alpha(s[2], s[3]);
    const std::vector<double> m = channel_centroid(z_star_batch);
    auto& v = si.z_tilde.value();
    if (v.size() != m.size()) throw DimensionError("update_init: channel mismatch");
    for (size_t i = 0; i < v.size(); ++i) v[i] = (1.0 - a) * v[i] + a * m[i];
}

bool maybe_update_init(SharedInit& si, const Tensor& z_star_batch) {
    ++si.step_counter;
    if (si.step_counter % si.update_every != 0) return false;
    update_init(si, z_star_batch);
    return true;
}

CentroidReport centroid_equivalence_check(const std::vector<Tensor>& z_star_samples,
                                          double tol) {
    if (z_star_samples.empty())
        throw ParameterError("centroid_equivalence_check: empty sample set");
    // Stack samples (each [c,h,w] or [n,c,h,w] or [n,c]) into one batch.
    Shape s0 = z_star_samples[0].ndim() == 3
                   ? Shape{1, z_star_samples[0].dim(0), z_star_samples[0].dim(1),
                           z_star_samples[0].dim(2)}
                   : as4d(z_star_samples[0]);
    const std::int64_t c = s0[1], h = s0[2], w = s0[3];
    std::vector<double> all;
    std::int64_t n = 0;
    for (const auto& t : z_star_samples) {
        Shape s = t.ndim() == 3 ? Shape{1, t.dim(0), t.dim(1), t.dim(2)} : as4d(t);
        if (s[1] != c || s[2] != h || s[3] != w)
            throw DimensionError("centroid_equivalence_check: inconsistent sample shapes");
        all.insert(all.end(), t.value().begin(), t.value().end());
        n += s[0];
    }
    Tensor batch = Tensor::from({n, c, h, w}, std::move(all));

    CentroidReport rep;
    rep.sample_mean = channel_centroid(batch);

    // Minimize the empirical loss by gradient descent on the autodiff
    // gradient, an independent route to the argmin.
    SharedInit si = make_shared_init(c);
    si.z_tilde.set_requires_grad(true);
    const double lr = static_cast<double>(h * w) / 2.0;  // matches the loss curvature
    for (int it = 0; it < 64; ++it) {
        Tape tape;
        TapeScope scope(tape);
        si.z_tilde.zero_grad();
        Tensor loss = init_loss(si, batch);
        tape.backward(loss);
        double gmax = 0.0;
        for (std::int64_t i = 0; i < c; ++i) {
            si.z_tilde.value()[static_cast<size_t>(i)] -= lr * si.z_tilde.grad()[static_cast<size_t>(i)];
            gmax = std::max(gmax, std::abs(si.z_tilde.grad()[static_cast<size_t>(i)]));
        }
        if (gmax < tol * 1e-2) break;
    }
    rep.minimizer = si.z_tilde.value();

    for (std::int64_t i = 0; i < c; ++i)
        rep.max_abs_diff = std::max(
            rep.max_abs_diff,
            std::abs(rep.minimizer[static_cast<size_t>(i)] - rep.sample_mean[static_cast<size_t>(i)]));

    // Gradient of the loss at the sample mean.
    SharedInit sm = make_shared_init(c);
    sm.z_tilde.value() = rep.sample_mean;
    sm.z_tilde.set_requires_grad(true);
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = init_loss(sm, batch);
        tape.backward(loss);
    }
    double acc = 0.0;
    for (double g : sm.z_tilde.grad()) acc += g * g;
    rep.grad_norm_at_mean = std::sqrt(acc);
    rep.ok = rep.max_abs_diff <= tol && rep.grad_norm_at_mean <= 1e-10;
    return rep;
}

}  // namespace homoode
