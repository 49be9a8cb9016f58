#include "homoode/adjoint.hpp"

#include <utility>
#include <vector>

namespace homoode {

AdjointResult adjoint_backward(const ImplicitModel& m, const ForwardRecord& record,
                               const Tensor& dL_dzT, const SolverConfig& cfg) {
    const auto kind = m.config().kind;
    if (kind != ModelKind::homo_ode && kind != ModelKind::neural_ode && kind != ModelKind::anode)
        throw ParameterError("adjoint_backward: ODE model kinds only");
    if (dL_dzT.shape() != record.z_final.shape())
        throw DimensionError("adjoint_backward: dL_dzT shape mismatch");

    const std::int64_t nz = record.z_final.size();
    const std::int64_t nx = record.condition.size();
    std::vector<Tensor> theta = m.dynamics_params();
    std::int64_t nth = 0;
    for (const auto& t : theta) nth += t.size();

    Tensor cond_d = record.condition.detach();
    const Tensor* mask = record.dropout_mask.size() ? &record.dropout_mask : nullptr;
    const Shape zshape = record.z_final.shape();

    // The dynamics parameters double as scratch space for the per-step VJPs;
    // park any gradients already accumulated on them and restore at the end.
    std::vector<std::vector<double>> saved;
    saved.reserve(theta.size());
    for (auto& t : theta) {
        saved.push_back(std::move(t.data_ptr()->grad));
        t.data_ptr()->grad.clear();
    }
    auto restore = [&] {
        for (size_t i = 0; i < theta.size(); ++i) theta[i].data_ptr()->grad = std::move(saved[i]);
    };

    auto field = [&](const Eigen::VectorXd& s, double t) {
        Tape tape;
        TapeScope scope(tape);
        Tensor z_leaf = Tensor::from(zshape, std::vector<double>(s.data(), s.data() + nz));
        z_leaf.set_requires_grad(true);
        Tensor cond_leaf = cond_d.clone_values();
        cond_leaf.set_requires_grad(true);
        for (auto& th : theta) th.data_ptr()->grad.clear();
        Tensor F = m.dynamics_eval(z_leaf, cond_leaf, t, mask);
        tape.backward_from(F, std::vector<double>(s.data() + nz, s.data() + 2 * nz));
        Eigen::VectorXd ds(2 * nz + nx + nth);
        for (std::int64_t i = 0; i < nz; ++i) ds[i] = F.value()[static_cast<size_t>(i)];
        const auto& zg = z_leaf.grad();
        for (std::int64_t i = 0; i < nz; ++i) ds[nz + i] = -zg[static_cast<size_t>(i)];
        const auto& cg = cond_leaf.grad();
        for (std::int64_t i = 0; i < nx; ++i) ds[2 * nz + i] = -cg[static_cast<size_t>(i)];
        std::int64_t off = 2 * nz + nx;
        for (auto& th : theta) {
            const auto& g = th.grad();
            for (std::int64_t i = 0; i < th.size(); ++i) ds[off + i] = -g[static_cast<size_t>(i)];
            off += th.size();
        }
        return ds;
    };

    Eigen::VectorXd s0 = Eigen::VectorXd::Zero(2 * nz + nx + nth);
    for (std::int64_t i = 0; i < nz; ++i) {
        s0[i] = record.z_final.value()[static_cast<size_t>(i)];
        s0[nz + i] = dL_dzT.value()[static_cast<size_t>(i)];
    }

    SolverConfig rcfg = cfg;
    rcfg.store_trajectory = false;
    OdeSolution<Eigen::VectorXd> sol;
    try {
        sol = ode_solve<Eigen::VectorXd>(field, s0, m.config().t1, m.config().t0, rcfg);
    } catch (const NumericError& e) {
        restore();
        throw AdjointError("adjoint_backward: reverse solve failed: " + std::string(e.what()));
    }
    restore();

    const Eigen::VectorXd& sT = sol.final_state();
    AdjointResult out;
    out.grad_x = Tensor::from(record.condition.shape(),
                              std::vector<double>(sT.data() + 2 * nz, sT.data() + 2 * nz + nx));
    out.grad_theta = sT.segment(2 * nz + nx, nth);
    out.nfe = sol.nfe;
    return out;
}

void accumulate_theta_grads(const ImplicitModel& m, const Eigen::VectorXd& grad_theta) {
    std::int64_t off = 0;
    for (auto& t : m.dynamics_params()) {
        if (off + t.size() > grad_theta.size())
            throw DimensionError("accumulate_theta_grads: flat gradient too short");
        auto& g = t.grad();
        for (std::int64_t i = 0; i < t.size(); ++i)
            g[static_cast<size_t>(i)] += grad_theta[off + i];
        off += t.size();
    }
    if (off != grad_theta.size())
        throw DimensionError("accumulate_theta_grads: flat gradient size mismatch");
}

void grad_route_to_extractor(const ImplicitModel& m, const Tensor& x, const Tensor& grad_x) {
    Tape tape;
    TapeScope scope(tape);
    Tensor cond = m.extract(x);
    if (cond.shape() != grad_x.shape())
        throw DimensionError("grad_route_to_extractor: grad_x shape mismatch");
    tape.backward_from(cond, grad_x.value());
}

}  // namespace homoode
