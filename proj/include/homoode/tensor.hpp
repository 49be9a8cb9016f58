#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "homoode/errors.hpp"

namespace homoode {

class Tape;

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s);

struct TensorData {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first gradient contribution
    bool requires_grad = false;
    Tape* tape = nullptr;  // tape that produced this tensor (null for leaves)
    int node = -1;         // producing node id on `tape`

    std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// Dense tensor with optional reverse-mode gradient. Value semantics on the
// handle; the payload is shared, so copies alias the same storage.
class Tensor {
public:
    Tensor() : d_(std::make_shared<TensorData>()) {}
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double v);
    static Tensor from(const Shape& shape, std::vector<double> values);
    static Tensor scalar(double v) { return from({1}, {v}); }
    // Leaf with requires_grad=true (a trainable parameter).
    static Tensor param(const Shape& shape, std::vector<double> values);

    const Shape& shape() const { return d_->shape; }
    std::int64_t size() const { return d_->size(); }
    std::int64_t dim(int i) const { return d_->shape.at(i); }
    int ndim() const { return static_cast<int>(d_->shape.size()); }

    std::vector<double>& value() { return d_->value; }
    const std::vector<double>& value() const { return d_->value; }
    std::vector<double>& grad() {
        d_->ensure_grad();
        return d_->grad;
    }
    bool has_grad() const { return !d_->grad.empty(); }
    void zero_grad() { d_->grad.assign(d_->value.size(), 0.0); }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }
    bool on_tape() const { return d_->node >= 0; }

    double item() const {
        if (size() != 1) throw DimensionError("item() on non-scalar tensor of shape " + shape_str(shape()));
        return d_->value[0];
    }
    double at(std::int64_t i) const { return d_->value[static_cast<size_t>(i)]; }

    // Copy of the values with no tape linkage and no grad.
    Tensor detach() const;
    // Deep copy (values only), keeps requires_grad flag off.
    Tensor clone_values() const;

    bool all_finite() const;

    std::shared_ptr<TensorData> data_ptr() const { return d_; }

private:
    std::shared_ptr<TensorData> d_;
};

// Reverse-mode tape. Nodes are recorded in topological order; backward walks
// the reachable subgraph from the requested output in reverse.
class Tape {
public:
    struct Node {
        std::vector<std::shared_ptr<TensorData>> inputs;
        std::shared_ptr<TensorData> output;
        std::function<void()> backward;
    };

    int record(std::vector<std::shared_ptr<TensorData>> inputs,
               const std::shared_ptr<TensorData>& output,
               std::function<void()> backward);

    // Seeds d(out)/d(out) = 1 (scalar out) and accumulates into leaf grads.
    void backward(const Tensor& out);
    // Seeds an arbitrary upstream gradient at `out`.
    void backward_from(const Tensor& out, const std::vector<double>& seed);

    std::size_t num_nodes() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

// Thread-local active tape. Ops record onto it when set.
Tape* active_tape();

// RAII: makes `t` the active tape for the current thread.
class TapeScope {
public:
    explicit TapeScope(Tape& t);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

// RAII: disables recording within the scope.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* prev_;
};

}  // namespace homoode
