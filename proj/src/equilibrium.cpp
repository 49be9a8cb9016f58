#include "homoode/equilibrium.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <deque>

namespace homoode {

namespace {

Eigen::MatrixXd numeric_jf(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                           const Eigen::VectorXd& z) {
    const Eigen::Index n = z.size();
    Eigen::MatrixXd J(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double h = 1e-7 * (1.0 + std::abs(z[j]));
        Eigen::VectorXd zp = z, zm = z;
        zp[j] += h;
        zm[j] -= h;
        J.col(j) = (f(zp) - f(zm)) / (2.0 * h);
    }
    return J;
}

// Anderson mixing over the residual history g(z) = f(z) - z.
class AndersonMixer {
public:
    explicit AndersonMixer(int depth) : depth_(depth) {}

    Eigen::VectorXd next(const Eigen::VectorXd& z, const Eigen::VectorXd& g) {
        if (depth_ <= 0 || zs_.empty()) {
            push(z, g);
            return z + g;
        }
        const int m = static_cast<int>(zs_.size());
        Eigen::MatrixXd dG(g.size(), m), dZ(g.size(), m);
        for (int i = 0; i < m; ++i) {
            dG.col(i) = g - gs_[static_cast<size_t>(i)];
            dZ.col(i) = z - zs_[static_cast<size_t>(i)];
        }
        Eigen::VectorXd gamma = dG.colPivHouseholderQr().solve(g);
        Eigen::VectorXd z_next = z + g - (dZ + dG) * gamma;
        push(z, g);
        return z_next;
    }

private:
    void push(const Eigen::VectorXd& z, const Eigen::VectorXd& g) {
        zs_.push_back(z);
        gs_.push_back(g);
        if (static_cast<int>(zs_.size()) > depth_) {
            zs_.pop_front();
            gs_.pop_front();
        }
    }
    int depth_;
    std::deque<Eigen::VectorXd> zs_, gs_;
};

}  // namespace

EqResult newton_solve(const EquilibriumProblem& p, const Eigen::VectorXd& z0) {
    Eigen::VectorXd z = z0;
    Eigen::VectorXd r = z - p.f(z);
    for (int it = 0; it < p.max_iter; ++it) {
        if (r.lpNorm<Eigen::Infinity>() <= p.tol)
            return {z, it, r.lpNorm<Eigen::Infinity>()};
        Eigen::MatrixXd Jf = p.jacobian_f ? p.jacobian_f(z) : numeric_jf(p.f, z);
        Eigen::MatrixXd Jr = Eigen::MatrixXd::Identity(z.size(), z.size()) - Jf;
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(Jr);
        if (!(lu.rcond() > 1e-14))
            throw SingularityError("newton_solve: singular I - df/dz", 1.0, lu.rcond());
        Eigen::VectorXd step = lu.solve(r);
        const double n0 = r.norm();
        double alpha = 1.0;
        for (int ls = 0; ls < 40; ++ls) {
            Eigen::VectorXd zt = z - alpha * step;
            Eigen::VectorXd rt = zt - p.f(zt);
            if (rt.norm() < n0 || alpha < 1e-10) {
                z = zt;
                r = rt;
                break;
            }
            alpha *= 0.5;
        }
    }
    if (r.lpNorm<Eigen::Infinity>() <= p.tol)
        return {z, p.max_iter, r.lpNorm<Eigen::Infinity>()};
    throw NonConvergenceError("newton_solve: max_iter exceeded, residual " +
                                  std::to_string(r.lpNorm<Eigen::Infinity>()),
                              z, r.lpNorm<Eigen::Infinity>());
}

EqResult fixed_point_iterate(const EquilibriumProblem& p, const Eigen::VectorXd& z0,
                             int anderson_depth) {
    if (anderson_depth < 0) throw ParameterError("fixed_point_iterate: anderson_depth >= 0");
    Eigen::VectorXd z = z0;
    AndersonMixer mixer(anderson_depth);
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    for (int it = 0; it < p.max_iter; ++it) {
        Eigen::VectorXd fz = p.f(z);
        Eigen::VectorXd g = fz - z;
        const double res = g.lpNorm<Eigen::Infinity>();
        if (res <= p.tol) return {z, it, res};
        if (!std::isfinite(res) || (res > 10.0 * best && since_best >= 20))
            throw NonConvergenceError("fixed_point_iterate: divergence, residual " +
                                          std::to_string(res),
                                      z, res);
        if (res < best) {
            best = res;
            since_best = 0;
        } else {
            ++since_best;
        }
        z = mixer.next(z, g);
    }
    Eigen::VectorXd g = p.f(z) - z;
    const double res = g.lpNorm<Eigen::Infinity>();
    if (res <= p.tol) return {z, p.max_iter, res};
    throw NonConvergenceError("fixed_point_iterate: max_iter exceeded, residual " +
                                  std::to_string(res),
                              z, res);
}

Eigen::VectorXd adjoint_fixed_point(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& vjp,
    const Eigen::VectorXd& upstream, double tol, int max_iter, int anderson_depth) {
    EquilibriumProblem p;
    p.f = [&](const Eigen::VectorXd& a) { return Eigen::VectorXd(upstream + vjp(a)); };
    p.tol = tol;
    p.max_iter = max_iter;
    try {
        return fixed_point_iterate(p, upstream, anderson_depth).z_star;
    } catch (const NonConvergenceError& e) {
        throw NonConvergenceError("adjoint_fixed_point: " + std::string(e.what()),
                                  e.last_iterate, e.residual);
    }
}

}  // namespace homoode
