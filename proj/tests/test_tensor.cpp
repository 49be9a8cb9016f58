#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "homoode/ops.hpp"
#include "homoode/tensor.hpp"

using namespace homoode;
using testutil::fd_check;
using testutil::randt;

namespace {

// direct nested-loop cross-correlation, the correctness anchor for conv2d
Tensor conv2d_naive(const Tensor& x, const Tensor& k, int stride, int padding) {
    const std::int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const std::int64_t oh = (h + 2 * padding - kh) / stride + 1;
    const std::int64_t ow = (w + 2 * padding - kw) / stride + 1;
    Tensor out = Tensor::zeros({n, cout, oh, ow});
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t co = 0; co < cout; ++co)
            for (std::int64_t oy = 0; oy < oh; ++oy)
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (std::int64_t ci = 0; ci < cin; ++ci)
                        for (std::int64_t ky = 0; ky < kh; ++ky)
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                const std::int64_t iy = oy * stride + ky - padding;
                                const std::int64_t ix = ox * stride + kx - padding;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += x.at(((s * cin + ci) * h + iy) * w + ix) *
                                       k.at(((co * cin + ci) * kh + ky) * kw + kx);
                            }
                    out.value()[static_cast<size_t>(((s * cout + co) * oh + oy) * ow + ox)] = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("tensor basics") {
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.dim(1) == 3);
    CHECK(t.at(4) == 5.0);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(t.item(), DimensionError);
    CHECK(Tensor::scalar(7.5).item() == 7.5);
    CHECK(t.all_finite());
    t.value()[0] = std::nan("");
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("detached tensors never receive gradients") {
    Tensor w = Tensor::param({3}, {1, 2, 3});
    Tensor d = w.detach();
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = ops::sum_all(ops::mul(d, d));
    tape.backward(loss);
    CHECK_FALSE(d.has_grad());
    CHECK_FALSE(w.has_grad());
}

TEST_CASE("backward: hand examples") {
    Tensor w = Tensor::param({3}, {1, 2, 3});
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(ops::sum_all(w));
    }
    CHECK(w.grad() == std::vector<double>{1, 1, 1});
    w.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(ops::sum_all(ops::mul(w, w)));
    }
    CHECK(w.grad() == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward requires scalar output") {
    Tensor w = Tensor::param({2}, {1, 2});
    Tape tape;
    TapeScope scope(tape);
    Tensor y = ops::mul(w, w);
    CHECK_THROWS_AS(tape.backward(y), NumericError);
}

TEST_CASE("backward linearity: scaling the loss scales gradients exactly") {
    std::mt19937_64 rng(7);
    Tensor w = randt({4}, rng);
    auto grad_of = [&](double alpha) {
        w.zero_grad();
        Tape tape;
        TapeScope scope(tape);
        tape.backward(ops::scale(ops::sum_all(ops::mul(w, ops::tanh_act(w))), alpha));
        return w.grad();
    };
    auto g1 = grad_of(1.0);
    auto g3 = grad_of(3.0);
    for (size_t i = 0; i < g1.size(); ++i)
        CHECK(g3[i] == doctest::Approx(3.0 * g1[i]).epsilon(1e-14));
}

TEST_CASE("NoGradScope suppresses recording") {
    Tensor w = Tensor::param({2}, {1, 2});
    Tape tape;
    TapeScope scope(tape);
    {
        NoGradScope ng;
        Tensor y = ops::mul(w, w);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(tape.num_nodes() == 0);
}

TEST_CASE("matmul examples") {
    Tensor I = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor A = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(ops::matmul(I, A).value() == A.value());
    Tensor b = Tensor::from({2, 1}, {1, 1});
    Tensor r = ops::matmul(A, b);
    CHECK(r.value() == std::vector<double>{3, 7});
    CHECK_THROWS_AS(ops::matmul(A, Tensor::from({3, 1}, {1, 1, 1})), DimensionError);
}

TEST_CASE("matmul gradient: sum(a*b) w.r.t. a is ones*b^T") {
    std::mt19937_64 rng(11);
    Tensor a = randt({5, 7}, rng);
    Tensor b = randt({7, 3}, rng);
    a.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(ops::sum_all(ops::matmul(a, b)));
    }
    // d sum(ab)/da = ones(5,3) * b^T
    for (std::int64_t i = 0; i < 5; ++i)
        for (std::int64_t j = 0; j < 7; ++j) {
            double expect = 0.0;
            for (std::int64_t k = 0; k < 3; ++k) expect += b.at(j * 3 + k);
            CHECK(testutil::rel_err(a.grad()[static_cast<size_t>(i * 7 + j)], expect) < 1e-12);
        }
    fd_check({a, b}, [&] { return ops::sum_all(ops::tanh_act(ops::matmul(a, b))); });
}

TEST_CASE("conv2d: trivial identities") {
    // 1x1 all-ones kernel sums channels
    Tensor x = Tensor::from({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
    Tensor k1 = Tensor::from({1, 2, 1, 1}, {1, 1});
    Tensor y = ops::conv2d(x, k1, 1, 0);
    CHECK(y.value() == std::vector<double>{11, 22, 33, 44});
    // 3x3 ones kernel on constant image: interior = 9c
    Tensor c = Tensor::full({1, 1, 5, 5}, 2.0);
    Tensor k9 = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor yc = ops::conv2d(c, k9, 1, 0);
    for (double v : yc.value()) CHECK(v == doctest::Approx(18.0));
    // (4 - 3) is not divisible by stride 2
    Tensor bad = Tensor::full({1, 1, 4, 4}, 1.0);
    CHECK_THROWS_AS(ops::conv2d(bad, k9, 2, 0), DimensionError);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
    std::mt19937_64 rng(13);
    for (auto [stride, pad] : {std::pair{1, 0}, {1, 1}, {2, 1}}) {
        Tensor x = randt({1, 2, 6, 6}, rng);
        Tensor k = randt({3, 2, 3, 3}, rng);
        if ((6 + 2 * pad - 3) % stride != 0) continue;
        Tensor got = ops::conv2d(x, k, stride, pad);
        Tensor want = conv2d_naive(x, k, stride, pad);
        REQUIRE(got.shape() == want.shape());
        for (size_t i = 0; i < got.value().size(); ++i)
            CHECK(std::abs(got.value()[i] - want.value()[i]) < 1e-12);
    }
}

TEST_CASE("conv2d gradients vs finite differences") {
    std::mt19937_64 rng(17);
    Tensor x = randt({2, 2, 4, 4}, rng, 0.5);
    Tensor k = randt({3, 2, 3, 3}, rng, 0.5);
    fd_check({x, k}, [&] { return ops::mean_all(ops::tanh_act(ops::conv2d(x, k, 1, 1))); });
}

TEST_CASE("activations: relu, tanh, softmax") {
    Tensor x = Tensor::from({3}, {-1, 0, 2});
    CHECK(ops::relu(x).value() == std::vector<double>{0, 0, 2});
    Tensor c = Tensor::full({1, 4}, 3.7);
    Tensor sm = ops::softmax(c);
    for (double v : sm.value()) CHECK(v == doctest::Approx(0.25));
    std::mt19937_64 rng(19);
    Tensor r = randt({2, 5}, rng);
    Tensor s = ops::softmax(r);
    for (std::int64_t i = 0; i < 2; ++i) {
        double sum = 0.0;
        for (std::int64_t j = 0; j < 5; ++j) sum += s.at(i * 5 + j);
        CHECK(sum == doctest::Approx(1.0));
    }
    Tensor m = Tensor::from({2}, {1.0, 2.0});
    fd_check({r}, [&] { return ops::sum_all(ops::matmul(ops::softmax(r), Tensor::from({5, 1}, {1, 2, 3, 4, 5}))); });
}

TEST_CASE("group_norm: per-group statistics and gradient") {
    std::mt19937_64 rng(23);
    Tensor x = randt({2, 4, 3, 3}, rng, 2.0);
    Tensor gamma = Tensor::param({4}, {1, 1, 1, 1});
    Tensor beta = Tensor::param({4}, {0, 0, 0, 0});
    Tensor y = ops::group_norm(x, gamma, beta, 2);
    // each (sample, group) slice: mean ~0, var ~1
    const std::int64_t group_sz = 2 * 9;
    for (std::int64_t s = 0; s < 2; ++s)
        for (std::int64_t g = 0; g < 2; ++g) {
            double mean = 0.0, var = 0.0;
            const double* p = y.value().data() + (s * 4 + g * 2) * 9;
            for (std::int64_t i = 0; i < group_sz; ++i) mean += p[i];
            mean /= static_cast<double>(group_sz);
            for (std::int64_t i = 0; i < group_sz; ++i) var += (p[i] - mean) * (p[i] - mean);
            var /= static_cast<double>(group_sz);
            CHECK(std::abs(mean) < 1e-10);
            CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
        }
    CHECK_THROWS_AS(ops::group_norm(x, gamma, beta, 3), DimensionError);
    std::mt19937_64 rng2(29);
    Tensor g2 = randt({4}, rng2, 0.5);
    Tensor b2 = randt({4}, rng2, 0.5);
    fd_check({x, g2, b2},
             [&] { return ops::mean_all(ops::tanh_act(ops::group_norm(x, g2, b2, 2))); }, 2e-4);
}

TEST_CASE("variational dropout mask") {
    std::mt19937_64 rng(31);
    Tensor m0 = ops::variational_dropout_mask(8, 0.0, rng);
    for (double v : m0.value()) CHECK(v == 1.0);
    CHECK_THROWS_AS(ops::variational_dropout_mask(8, 1.0, rng), ParameterError);
    std::int64_t zeros = 0, total = 0;
    for (int rep = 0; rep < 12500; ++rep) {
        Tensor m = ops::variational_dropout_mask(8, 0.1, rng);
        for (double v : m.value()) {
            CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.9)));
            zeros += v == 0.0;
            ++total;
        }
    }
    const double frac = static_cast<double>(zeros) / static_cast<double>(total);
    CHECK(frac == doctest::Approx(0.1).epsilon(0.1));
}

TEST_CASE("cross entropy: uniform and perfect logits, gradient identity") {
    Tensor u = Tensor::zeros({2, 10});
    CHECK(ops::cross_entropy(u, {3, 7}).item() == doctest::Approx(std::log(10.0)));
    Tensor sharp = Tensor::zeros({1, 4});
    sharp.value()[2] = 100.0;
    CHECK(ops::cross_entropy(sharp, {2}).item() < 1e-10);
    // gradient = (softmax - onehot)/n
    std::mt19937_64 rng(37);
    Tensor logits = randt({3, 5}, rng);
    logits.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(ops::cross_entropy(logits, {0, 2, 4}));
    }
    Tensor sm = ops::softmax(logits);
    const std::vector<int> labels{0, 2, 4};
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 5; ++j) {
            const double expect =
                (sm.at(i * 5 + j) - (j == labels[static_cast<size_t>(i)] ? 1.0 : 0.0)) / 3.0;
            CHECK(std::abs(logits.grad()[static_cast<size_t>(i * 5 + j)] - expect) < 1e-10);
        }
    CHECK_THROWS_AS(ops::cross_entropy(logits, {0, 2, 9}), ParameterError);
}

TEST_CASE("channel plumbing ops") {
    Tensor a = Tensor::from({1, 2, 1, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({1, 1, 1, 2}, {9, 9});
    Tensor cat = ops::concat_channels(a, b);
    CHECK(cat.shape() == Shape{1, 3, 1, 2});
    CHECK(cat.value() == std::vector<double>{1, 2, 3, 4, 9, 9});
    Tensor back = ops::slice_channels(cat, 0, 2);
    CHECK(back.value() == a.value());
    Tensor m = Tensor::from({2}, {2.0, 0.0});
    CHECK(ops::scale_channels(a, m).value() == std::vector<double>{2, 4, 0, 0});
    Tensor bias = Tensor::from({2}, {10, 20});
    CHECK(ops::add_channel_bias(a, bias).value() == std::vector<double>{11, 12, 23, 24});
    Tensor v = Tensor::from({2}, {5, 6});
    Tensor bc = ops::broadcast_channels(v, 2, 1, 2);
    CHECK(bc.shape() == Shape{2, 2, 1, 2});
    CHECK(bc.value() == std::vector<double>{5, 5, 6, 6, 5, 5, 6, 6});
    Tensor g = ops::global_avg_pool(a);
    CHECK(g.value() == std::vector<double>{1.5, 3.5});
}

TEST_CASE("reductions, reshape, lincomb gradients") {
    std::mt19937_64 rng(41);
    Tensor a = randt({2, 3}, rng);
    Tensor b = randt({2, 3}, rng);
    Tensor c = randt({2, 3}, rng);
    fd_check({a, b, c}, [&] {
        Tensor l = ops::lincomb({0.5, -1.5, 2.0}, {a, b, c});
        return ops::mean_all(
            ops::mul(l, ops::reshape(ops::relu(ops::reshape(l, {6})), {2, 3})));
    });
    fd_check({a, b}, [&] {
        return ops::sum_all(
            ops::tanh_act(ops::sub(ops::add(a, b), ops::scale(ops::mul(a, b), 0.3))));
    });
}

TEST_CASE("randomized gradient sweep over registered ops") {
    std::mt19937_64 rng(43);
    for (int rep = 0; rep < 3; ++rep) {
        Tensor x = randt({2, 4, 3, 3}, rng, 0.7);
        Tensor k = randt({4, 4, 3, 3}, rng, 0.4);
        Tensor gamma = randt({4}, rng, 0.3);
        Tensor beta = randt({4}, rng, 0.3);
        Tensor w = randt({4, 3}, rng, 0.5);
        Tensor bias = randt({3}, rng, 0.5);
        fd_check({x, k, gamma, beta, w, bias}, [&] {
            Tensor h = ops::conv2d(x, k, 1, 1);
            h = ops::group_norm(h, gamma, beta, 2);
            h = ops::relu(h);
            Tensor pooled = ops::global_avg_pool(h);
            Tensor logits = ops::linear(pooled, w, bias);
            return ops::cross_entropy(logits, {0, 2});
        }, 2e-4);
    }
}

TEST_CASE("three-layer MLP gradients vs finite differences") {
    std::mt19937_64 rng(47);
    Tensor x = randt({4, 3}, rng, 1.0, false);
    Tensor w1 = randt({3, 8}, rng, 0.5);
    Tensor b1 = randt({8}, rng, 0.2);
    Tensor w2 = randt({8, 8}, rng, 0.5);
    Tensor b2 = randt({8}, rng, 0.2);
    Tensor w3 = randt({8, 2}, rng, 0.5);
    Tensor b3 = randt({2}, rng, 0.2);
    fd_check({w1, b1, w2, b2, w3, b3}, [&] {
        Tensor h = ops::tanh_act(ops::linear(x, w1, b1));
        h = ops::relu(ops::linear(h, w2, b2));
        return ops::cross_entropy(ops::linear(h, w3, b3), {0, 1, 0, 1});
    }, 1e-5);
}

TEST_CASE("gradients accumulate across backward calls") {
    Tensor w = Tensor::param({2}, {1, 2});
    for (int i = 0; i < 2; ++i) {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(ops::sum_all(w));
    }
    CHECK(w.grad() == std::vector<double>{2, 2});
}
