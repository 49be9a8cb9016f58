#include "homoode/tensor.hpp"

#include <cmath>
#include <sstream>

namespace homoode {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

Tensor Tensor::zeros(const Shape& shape) {
    auto d = std::make_shared<TensorData>();
    d->shape = shape;
    d->value.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    return Tensor(std::move(d));
}

Tensor Tensor::full(const Shape& shape, double v) {
    auto d = std::make_shared<TensorData>();
    d->shape = shape;
    d->value.assign(static_cast<size_t>(shape_numel(shape)), v);
    return Tensor(std::move(d));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
        throw DimensionError("Tensor::from: " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    auto d = std::make_shared<TensorData>();
    d->shape = shape;
    d->value = std::move(values);
    return Tensor(std::move(d));
}

Tensor Tensor::param(const Shape& shape, std::vector<double> values) {
    Tensor t = from(shape, std::move(values));
    t.set_requires_grad(true);
    return t;
}

Tensor Tensor::detach() const {
    auto d = std::make_shared<TensorData>();
    d->shape = d_->shape;
    d->value = d_->value;
    return Tensor(std::move(d));
}

Tensor Tensor::clone_values() const { return detach(); }

bool Tensor::all_finite() const {
    for (double v : d_->value)
        if (!std::isfinite(v)) return false;
    return true;
}

int Tape::record(std::vector<std::shared_ptr<TensorData>> inputs,
                 const std::shared_ptr<TensorData>& output, std::function<void()> backward) {
    int id = static_cast<int>(nodes_.size());
    output->tape = this;
    output->node = id;
    nodes_.push_back(Node{std::move(inputs), output, std::move(backward)});
    return id;
}

void Tape::backward(const Tensor& out) {
    if (out.size() != 1) throw NumericError("backward: output must be scalar");
    backward_from(out, {1.0});
}

void Tape::backward_from(const Tensor& out, const std::vector<double>& seed) {
    auto od = out.data_ptr();
    if (seed.size() != od->value.size())
        throw DimensionError("backward_from: seed shape mismatch");
    od->ensure_grad();
    for (size_t i = 0; i < seed.size(); ++i) od->grad[i] += seed[i];
    if (od->tape != this || od->node < 0) return;  // leaf: nothing to propagate

    // Mark the subgraph reachable (backwards) from `out`.
    std::vector<char> reach(nodes_.size(), 0);
    std::vector<int> stack{od->node};
    reach[static_cast<size_t>(od->node)] = 1;
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        for (const auto& in : nodes_[static_cast<size_t>(id)].inputs) {
            if (in->tape == this && in->node >= 0 && !reach[static_cast<size_t>(in->node)]) {
                reach[static_cast<size_t>(in->node)] = 1;
                stack.push_back(in->node);
            }
        }
    }
    for (int id = od->node; id >= 0; --id) {
        if (!reach[static_cast<size_t>(id)]) continue;
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.output->grad.empty()) continue;  // no upstream contribution reached it
        n.backward();
    }
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

NoGradScope::NoGradScope() : prev_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = prev_; }

}  // namespace homoode
