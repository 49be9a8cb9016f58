#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "homoode/ops.hpp"
#include "homoode/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
    const double d = std::max(std::abs(a), std::abs(b));
    return d < 1e-12 ? 0.0 : std::abs(a - b) / d;
}

inline homoode::Tensor randt(const homoode::Shape& shape, std::mt19937_64& rng,
                             double scale = 1.0, bool param = true) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> v(static_cast<size_t>(homoode::shape_numel(shape)));
    for (auto& x : v) x = dist(rng);
    return param ? homoode::Tensor::param(shape, std::move(v))
                 : homoode::Tensor::from(shape, std::move(v));
}

// Central finite differences against reverse-mode gradients. `make_loss`
// must rebuild the scalar loss from the current parameter values each call.
inline void fd_check(std::vector<homoode::Tensor> params,
                     const std::function<homoode::Tensor()>& make_loss, double rel_tol = 1e-4,
                     double h = 1e-5, double abs_floor = 1e-7) {
    using namespace homoode;
    for (auto& p : params) p.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = make_loss();
        REQUIRE(loss.size() == 1);
        tape.backward(loss);
    }
    std::vector<std::vector<double>> grads;
    for (auto& p : params) grads.push_back(p.grad());
    NoGradScope ng;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& val = params[pi].value();
        for (size_t i = 0; i < val.size(); ++i) {
            const double orig = val[i];
            val[i] = orig + h;
            const double lp = make_loss().item();
            val[i] = orig - h;
            const double lm = make_loss().item();
            val[i] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double ad = grads[pi][i];
            const double denom = std::max({std::abs(fd), std::abs(ad), abs_floor / rel_tol});
            INFO("param ", pi, " elem ", i, " fd ", fd, " ad ", ad);
            CHECK(std::abs(fd - ad) <= rel_tol * denom);
        }
    }
}

}  // namespace testutil
