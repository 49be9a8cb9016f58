#include "homoode/model.hpp"

#include <algorithm>
#include <cmath>

#include "homoode/equilibrium.hpp"

namespace homoode {

std::string model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::homo_ode: return "homoode";
        case ModelKind::neural_ode: return "node";
        case ModelKind::anode: return "anode";
        case ModelKind::deq: return "deq";
    }
    return "?";
}

ModelKind model_kind_from_name(const std::string& s) {
    if (s == "homoode" || s == "homo_ode") return ModelKind::homo_ode;
    if (s == "node" || s == "neural_ode") return ModelKind::neural_ode;
    if (s == "anode") return ModelKind::anode;
    if (s == "deq") return ModelKind::deq;
    throw ParameterError("unknown model kind: " + s);
}

namespace {

Tensor gaussian(const Shape& shape, double std, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std);
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = dist(rng);
    return Tensor::param(shape, std::move(v));
}

}  // namespace

ImplicitModel::ImplicitModel(ModelConfig cfg, std::mt19937_64& rng) : cfg_(std::move(cfg)) {
    const std::int64_t c = cfg_.channels;
    if (cfg_.arch == ArchKind::conv && c % cfg_.groups != 0)
        throw ParameterError("ImplicitModel: groups must divide channels");
    const std::int64_t sc = cfg_.state_channels();
    std::int64_t dyn_in;
    switch (cfg_.kind) {
        case ModelKind::homo_ode:
        case ModelKind::deq: dyn_in = sc + c; break;
        case ModelKind::neural_ode:
        case ModelKind::anode: dyn_in = sc + 1; break;
        default: dyn_in = sc + c;
    }
    auto add = [&](const std::string& name, Tensor t) { params_.emplace_back(name, std::move(t)); };
    if (cfg_.arch == ArchKind::conv) {
        const std::int64_t in = cfg_.in_channels;
        // 4x4 stride-2 kernels halve the spatial size exactly
        add("extractor.conv1.w", gaussian({c, in, 4, 4}, std::sqrt(2.0 / (in * 16.0)), rng));
        add("extractor.conv1.b", Tensor::param({c}, std::vector<double>(c, 0.0)));
        add("extractor.gn1.gamma", Tensor::param({c}, std::vector<double>(c, 1.0)));
        add("extractor.gn1.beta", Tensor::param({c}, std::vector<double>(c, 0.0)));
        add("extractor.conv2.w", gaussian({c, c, 4, 4}, std::sqrt(2.0 / (c * 16.0)), rng));
        add("extractor.conv2.b", Tensor::param({c}, std::vector<double>(c, 0.0)));
        add("extractor.gn2.gamma", Tensor::param({c}, std::vector<double>(c, 1.0)));
        add("extractor.gn2.beta", Tensor::param({c}, std::vector<double>(c, 0.0)));
        add("dynamics.conv1.w", gaussian({c, dyn_in, 3, 3}, std::sqrt(2.0 / (dyn_in * 9.0)), rng));
        add("dynamics.conv1.b", Tensor::param({c}, std::vector<double>(c, 0.0)));
        add("dynamics.gn1.gamma", Tensor::param({c}, std::vector<double>(c, 1.0)));
        add("dynamics.gn1.beta", Tensor::param({c}, std::vector<double>(c, 0.0)));
        add("dynamics.conv2.w", gaussian({c, c, 3, 3}, std::sqrt(2.0 / (c * 9.0)), rng));
        add("dynamics.conv2.b", Tensor::param({c}, std::vector<double>(c, 0.0)));
        add("dynamics.gn2.gamma", Tensor::param({c}, std::vector<double>(c, 1.0)));
        add("dynamics.gn2.beta", Tensor::param({c}, std::vector<double>(c, 0.0)));
        add("dynamics.conv3.w", gaussian({sc, c, 1, 1}, std::sqrt(1.0 / c), rng));
        add("dynamics.conv3.b", Tensor::param({sc}, std::vector<double>(sc, 0.0)));
        add("head.w", gaussian({sc, cfg_.num_classes}, std::sqrt(1.0 / sc), rng));
        add("head.b",
            Tensor::param({cfg_.num_classes}, std::vector<double>(cfg_.num_classes, 0.0)));
    } else {
        const std::int64_t in = cfg_.in_features;
        add("extractor.fc1.w", gaussian({in, c}, std::sqrt(2.0 / in), rng));
        add("extractor.fc1.b", Tensor::param({c}, std::vector<double>(c, 0.0)));
        add("extractor.fc2.w", gaussian({c, c}, std::sqrt(2.0 / c), rng));
        add("extractor.fc2.b", Tensor::param({c}, std::vector<double>(c, 0.0)));
        add("dynamics.fc1.w", gaussian({dyn_in, c}, std::sqrt(2.0 / dyn_in), rng));
        add("dynamics.fc1.b", Tensor::param({c}, std::vector<double>(c, 0.0)));
        add("dynamics.fc2.w", gaussian({c, sc}, std::sqrt(1.0 / c), rng));
        add("dynamics.fc2.b", Tensor::param({sc}, std::vector<double>(sc, 0.0)));
        add("head.w", gaussian({sc, cfg_.num_classes}, std::sqrt(1.0 / sc), rng));
        add("head.b",
            Tensor::param({cfg_.num_classes}, std::vector<double>(cfg_.num_classes, 0.0)));
    }
}

Tensor ImplicitModel::param(const std::string& name) const {
    for (const auto& [n, t] : params_)
        if (n == name) return t;
    throw ParameterError("no such parameter: " + name);
}

void ImplicitModel::set_param(const std::string& name, const Tensor& t) {
    for (auto& [n, p] : params_)
        if (n == name) {
            if (p.shape() != t.shape())
                throw DimensionError("set_param: shape mismatch for " + name);
            p.value() = t.value();
            return;
        }
    throw ParameterError("no such parameter: " + name);
}

std::vector<Tensor> ImplicitModel::dynamics_params() const {
    std::vector<Tensor> out;
    for (const auto& [n, t] : params_)
        if (n.rfind("dynamics.", 0) == 0) out.push_back(t);
    return out;
}

std::vector<Tensor> ImplicitModel::extractor_params() const {
    std::vector<Tensor> out;
    for (const auto& [n, t] : params_)
        if (n.rfind("extractor.", 0) == 0) out.push_back(t);
    return out;
}

std::int64_t ImplicitModel::dynamics_param_size() const {
    std::int64_t s = 0;
    for (const auto& t : dynamics_params()) s += t.size();
    return s;
}

Tensor ImplicitModel::extract(const Tensor& x) const {
    if (cfg_.arch == ArchKind::conv) {
        Tensor h = ops::conv2d(x, param("extractor.conv1.w"), 2, 1);
        h = ops::add_channel_bias(h, param("extractor.conv1.b"));
        h = ops::group_norm(h, param("extractor.gn1.gamma"), param("extractor.gn1.beta"),
                            cfg_.groups);
        h = ops::relu(h);
        h = ops::conv2d(h, param("extractor.conv2.w"), 2, 1);
        h = ops::add_channel_bias(h, param("extractor.conv2.b"));
        h = ops::group_norm(h, param("extractor.gn2.gamma"), param("extractor.gn2.beta"),
                            cfg_.groups);
        return ops::relu(h);
    }
    Tensor h = ops::linear(x, param("extractor.fc1.w"), param("extractor.fc1.b"));
    h = ops::tanh_act(h);
    return ops::linear(h, param("extractor.fc2.w"), param("extractor.fc2.b"));
}

Tensor ImplicitModel::dynamics_eval(const Tensor& z, const Tensor& cond, double t,
                                    const Tensor* mask) const {
    const bool time_input =
        cfg_.kind == ModelKind::neural_ode || cfg_.kind == ModelKind::anode;
    Tensor in;
    if (time_input) {
        Tensor tc = cfg_.arch == ArchKind::conv
                        ? Tensor::full({z.dim(0), 1, z.dim(2), z.dim(3)}, t)
                        : Tensor::full({z.dim(0), 1}, t);
        in = ops::concat_channels(z, tc);
    } else {
        in = ops::concat_channels(z, cond);
    }
    if (cfg_.arch == ArchKind::conv) {
        Tensor h = ops::conv2d(in, param("dynamics.conv1.w"), 1, 1);
        h = ops::add_channel_bias(h, param("dynamics.conv1.b"));
        h = ops::group_norm(h, param("dynamics.gn1.gamma"), param("dynamics.gn1.beta"),
                            cfg_.groups);
        h = ops::relu(h);
        if (mask) h = ops::scale_channels(h, *mask);
        h = ops::conv2d(h, param("dynamics.conv2.w"), 1, 1);
        h = ops::add_channel_bias(h, param("dynamics.conv2.b"));
        h = ops::group_norm(h, param("dynamics.gn2.gamma"), param("dynamics.gn2.beta"),
                            cfg_.groups);
        h = ops::relu(h);
        h = ops::conv2d(h, param("dynamics.conv3.w"), 1, 0);
        h = ops::add_channel_bias(h, param("dynamics.conv3.b"));
        return ops::tanh_act(h);
    }
    Tensor h = ops::linear(in, param("dynamics.fc1.w"), param("dynamics.fc1.b"));
    h = ops::tanh_act(h);
    if (mask) h = ops::scale_channels(h, *mask);
    h = ops::linear(h, param("dynamics.fc2.w"), param("dynamics.fc2.b"));
    return ops::tanh_act(h);
}

namespace {

Tensor sample_mask(const ModelConfig& cfg, std::mt19937_64* rng) {
    if (!rng || cfg.dropout_rate <= 0.0) return Tensor();
    std::int64_t mc = cfg.channels;  // the hidden layer the mask applies to
    return ops::variational_dropout_mask(mc, cfg.dropout_rate, *rng);
}

}  // namespace

ForwardRecord ImplicitModel::homoode_forward(const Tensor& x, const Tensor* z0_in,
                                             bool record_trajectory,
                                             std::mt19937_64* rng) const {
    ForwardRecord rec;
    rec.condition = extract(x);
    const std::int64_t n = x.dim(0);
    const std::int64_t hw = cfg_.state_hw();
    Tensor z0 = z0_in ? *z0_in
                      : (cfg_.arch == ArchKind::conv
                             ? Tensor::zeros({n, cfg_.state_channels(), hw, hw})
                             : Tensor::zeros({n, cfg_.state_channels()}));
    rec.z0 = z0;
    rec.dropout_mask = sample_mask(cfg_, rng);
    const Tensor* mask = rec.dropout_mask.size() ? &rec.dropout_mask : nullptr;
    auto f = [this, &rec, mask](const Tensor& z, double t) {
        return dynamics_eval(z, rec.condition, t, mask);
    };
    SolverConfig cfg = cfg_.solver;
    cfg.store_trajectory = record_trajectory;
    auto sol = ode_solve<Tensor>(f, z0, cfg_.t0, cfg_.t1, cfg);
    rec.z_final = sol.final_state();
    rec.nfe = sol.nfe;
    if (record_trajectory) rec.trajectory = std::move(sol);
    return rec;
}

ForwardRecord ImplicitModel::neural_ode_forward(const Tensor& x, bool record_trajectory,
                                                std::mt19937_64* rng) const {
    ForwardRecord rec;
    rec.condition = extract(x);
    rec.z0 = rec.condition;  // input information lives in the initial point
    rec.dropout_mask = sample_mask(cfg_, rng);
    const Tensor* mask = rec.dropout_mask.size() ? &rec.dropout_mask : nullptr;
    auto f = [this, &rec, mask](const Tensor& z, double t) {
        return dynamics_eval(z, rec.condition, t, mask);
    };
    SolverConfig cfg = cfg_.solver;
    cfg.store_trajectory = record_trajectory;
    auto sol = ode_solve<Tensor>(f, rec.z0, cfg_.t0, cfg_.t1, cfg);
    rec.z_final = sol.final_state();
    rec.nfe = sol.nfe;
    if (record_trajectory) rec.trajectory = std::move(sol);
    return rec;
}

ForwardRecord ImplicitModel::anode_forward(const Tensor& x, bool record_trajectory,
                                           std::mt19937_64* rng) const {
    ForwardRecord rec;
    rec.condition = extract(x);
    Tensor z0 = rec.condition;
    if (cfg_.augment_dim > 0) {
        Tensor aug = cfg_.arch == ArchKind::conv
                         ? Tensor::zeros({x.dim(0), cfg_.augment_dim, rec.condition.dim(2),
                                          rec.condition.dim(3)})
                         : Tensor::zeros({x.dim(0), cfg_.augment_dim});
        z0 = ops::concat_channels(rec.condition, aug);
    }
    rec.z0 = z0;
    rec.dropout_mask = sample_mask(cfg_, rng);
    const Tensor* mask = rec.dropout_mask.size() ? &rec.dropout_mask : nullptr;
    auto f = [this, &rec, mask](const Tensor& z, double t) {
        return dynamics_eval(z, rec.condition, t, mask);
    };
    SolverConfig cfg = cfg_.solver;
    cfg.store_trajectory = record_trajectory;
    auto sol = ode_solve<Tensor>(f, z0, cfg_.t0, cfg_.t1, cfg);
    rec.z_final = sol.final_state();
    rec.nfe = sol.nfe;
    if (record_trajectory) rec.trajectory = std::move(sol);
    return rec;
}

ForwardRecord ImplicitModel::deq_forward(const Tensor& x, std::mt19937_64* rng) const {
    ForwardRecord rec;
    rec.condition = extract(x);
    rec.dropout_mask = sample_mask(cfg_, rng);
    const Tensor* mask = rec.dropout_mask.size() ? &rec.dropout_mask : nullptr;
    const std::int64_t n = x.dim(0), hw = cfg_.state_hw();
    const Shape zshape = cfg_.arch == ArchKind::conv
                             ? Shape{n, cfg_.state_channels(), hw, hw}
                             : Shape{n, cfg_.state_channels()};
    Tensor cond_d = rec.condition.detach();
    std::int64_t evals = 0;
    EquilibriumProblem p;
    p.f = [&](const Eigen::VectorXd& zv) {
        NoGradScope ng;
        ++evals;
        Tensor z = vec_to_tensor(zv, zshape);
        return tensor_to_vec(dynamics_eval(z, cond_d, 0.0, mask));
    };
    p.tol = cfg_.deq_tol;
    p.max_iter = cfg_.deq_max_iter;
    Eigen::VectorXd z_star;
    try {
        z_star = fixed_point_iterate(p, Eigen::VectorXd::Zero(shape_numel(zshape)),
                                     cfg_.deq_anderson_depth)
                     .z_star;
    } catch (const NonConvergenceError& e) {
        // exhausted solver budget: proceed with the best iterate, as usual
        // for equilibrium models mid-training
        if (!e.last_iterate.allFinite()) throw;
        z_star = e.last_iterate;
    }
    rec.z0 = Tensor::zeros(zshape);
    rec.z_final = vec_to_tensor(z_star, zshape);
    rec.z_final.set_requires_grad(true);  // implicit-function leaf for the outer tape
    rec.nfe = evals;
    return rec;
}

ForwardRecord ImplicitModel::forward(const Tensor& x, const Tensor* z0, bool record_trajectory,
                                     std::mt19937_64* rng) const {
    switch (cfg_.kind) {
        case ModelKind::homo_ode: return homoode_forward(x, z0, record_trajectory, rng);
        case ModelKind::neural_ode: return neural_ode_forward(x, record_trajectory, rng);
        case ModelKind::anode: return anode_forward(x, record_trajectory, rng);
        case ModelKind::deq: return deq_forward(x, rng);
    }
    throw ParameterError("forward: bad model kind");
}

Tensor ImplicitModel::classify(const Tensor& z_final) const {
    Tensor pooled = cfg_.arch == ArchKind::conv ? ops::global_avg_pool(z_final) : z_final;
    return ops::linear(pooled, param("head.w"), param("head.b"));
}

void ImplicitModel::deq_backward(const ForwardRecord& rec, Tensor& outer_condition,
                                 Tape& outer_tape) const {
    if (!rec.z_final.has_grad())
        throw NumericError("deq_backward: no upstream gradient on z_final");
    const Eigen::VectorXd upstream = Eigen::Map<const Eigen::VectorXd>(
        rec.z_final.data_ptr()->grad.data(), rec.z_final.size());
    Tensor cond_d = outer_condition.detach();
    const Tensor* mask = rec.dropout_mask.size() ? &rec.dropout_mask : nullptr;
    const Shape zshape = rec.z_final.shape();

    // While solving for the adjoint only z receives gradients; freeze the
    // parameters so their grad buffers are not polluted.
    std::vector<Tensor> frozen;
    for (auto& [n, t] : const_cast<ImplicitModel*>(this)->params_)
        if (t.requires_grad()) {
            t.set_requires_grad(false);
            frozen.push_back(t);
        }
    auto vjp_z = [&](const Eigen::VectorXd& a) {
        Tape tape;
        TapeScope scope(tape);
        Tensor z_leaf = rec.z_final.detach();
        z_leaf.set_requires_grad(true);
        Tensor out = dynamics_eval(z_leaf, cond_d, 0.0, mask);
        tape.backward_from(out, std::vector<double>(a.data(), a.data() + a.size()));
        return Eigen::Map<const Eigen::VectorXd>(z_leaf.data_ptr()->grad.data(), z_leaf.size())
            .eval();
    };
    Eigen::VectorXd a;
    try {
        a = adjoint_fixed_point(vjp_z, upstream, cfg_.deq_tol, 4 * cfg_.deq_max_iter,
                                cfg_.deq_anderson_depth);
        for (auto& t : frozen) t.set_requires_grad(true);
    } catch (const NonConvergenceError& e) {
        for (auto& t : frozen) t.set_requires_grad(true);
        // solver budget exhausted: fall back to the best adjoint iterate
        if (!e.last_iterate.allFinite()) throw;
        a = e.last_iterate;
    } catch (...) {
        for (auto& t : frozen) t.set_requires_grad(true);
        throw;
    }

    // One more VJP accumulates a^T df/dtheta into the parameters and
    // a^T df/dx into the condition, which continues through the extractor.
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor z_leaf = rec.z_final.detach();
        Tensor cond_leaf = cond_d;
        cond_leaf.set_requires_grad(true);
        Tensor out = dynamics_eval(z_leaf, cond_leaf, 0.0, mask);
        tape.backward_from(out, std::vector<double>(a.data(), a.data() + a.size()));
        outer_tape.backward_from(outer_condition, cond_leaf.data_ptr()->grad);
    }
}

Tensor model_loss(const Tensor& logits, const std::vector<int>& labels) {
    return ops::cross_entropy(logits, labels);
}

Eigen::VectorXd tensor_to_vec(const Tensor& t) {
    return Eigen::Map<const Eigen::VectorXd>(t.value().data(), t.size());
}

Tensor vec_to_tensor(const Eigen::VectorXd& v, const Shape& shape) {
    return Tensor::from(shape, std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace homoode
