#include "homoode/homotopy.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <memory>

namespace homoode {

namespace {

Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& r,
                                 const Eigen::VectorXd& z) {
    const Eigen::Index n = z.size();
    Eigen::VectorXd r0 = r(z);
    Eigen::MatrixXd J(r0.size(), n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double h = 1e-7 * (1.0 + std::abs(z[j]));
        Eigen::VectorXd zp = z, zm = z;
        zp[j] += h;
        zm[j] -= h;
        J.col(j) = (r(zp) - r(zm)) / (2.0 * h);
    }
    return J;
}

Eigen::MatrixXd homotopy_dz(const HomotopyProblem& p, const Eigen::VectorXd& z, double lambda) {
    Eigen::MatrixXd J = p.jac(z);
    if (p.kind == HomotopyKind::newton) return J;
    Eigen::MatrixXd Hz = lambda * J;
    Hz.diagonal().array() += 1.0 - lambda;
    return Hz;
}

Eigen::VectorXd homotopy_dlambda(const HomotopyProblem& p, const Eigen::VectorXd& z) {
    if (p.kind == HomotopyKind::newton) return p.residual(p.z0);
    return p.residual(z) - (z - p.z0);
}

// Newton projection onto H(.,lambda) = 0 with lambda held fixed.
void correct_onto_path(const HomotopyProblem& p, Eigen::VectorXd& z, double lambda,
                       double path_tol, double rcond_threshold, std::int64_t& nfe) {
    for (int it = 0; it < 30; ++it) {
        Eigen::VectorXd H = homotopy_eval(p, z, lambda);
        ++nfe;
        if (H.lpNorm<Eigen::Infinity>() <= path_tol) return;
        Eigen::MatrixXd Hz = homotopy_dz(p, z, lambda);
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(Hz);
        const double rc = lu.rcond();
        if (!(rc > rcond_threshold))
            throw SingularityError("corrector: singular Jacobian at lambda=" +
                                       std::to_string(lambda),
                                   lambda, rc);
        z -= lu.solve(H);
    }
    Eigen::VectorXd H = homotopy_eval(p, z, lambda);
    if (H.lpNorm<Eigen::Infinity>() > path_tol)
        throw NumericError("corrector: failed to reach path_tol at lambda=" +
                           std::to_string(lambda));
}

// Damped Newton on r(z) = 0 used to polish the endpoint.
Eigen::VectorXd polish_root(const HomotopyProblem& p, Eigen::VectorXd z, double solve_tol,
                            std::int64_t& nfe) {
    Eigen::VectorXd r = p.residual(z);
    ++nfe;
    for (int it = 0; it < 60; ++it) {
        if (r.lpNorm<Eigen::Infinity>() <= solve_tol) return z;
        Eigen::MatrixXd J = p.jac(z);
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
        if (!(lu.rcond() > 1e-14))
            throw SingularityError("polish: singular Jacobian", 1.0, lu.rcond());
        Eigen::VectorXd step = lu.solve(r);
        double alpha = 1.0;
        const double n0 = r.norm();
        for (int ls = 0; ls < 30; ++ls) {
            Eigen::VectorXd zt = z - alpha * step;
            Eigen::VectorXd rt = p.residual(zt);
            ++nfe;
            if (rt.norm() < n0 || alpha < 1e-8) {
                z = zt;
                r = rt;
                break;
            }
            alpha *= 0.5;
        }
    }
    if (r.lpNorm<Eigen::Infinity>() > solve_tol)
        throw NumericError("polish: failed to reach solve_tol");
    return z;
}

}  // namespace

Eigen::MatrixXd HomotopyProblem::jac(const Eigen::VectorXd& z) const {
    if (jacobian) return jacobian(z);
    return numeric_jacobian(residual, z);
}

Eigen::VectorXd homotopy_eval(const HomotopyProblem& p, const Eigen::VectorXd& z, double lambda) {
    if (p.kind == HomotopyKind::newton) return p.residual(z) - (1.0 - lambda) * p.residual(p.z0);
    return lambda * p.residual(z) + (1.0 - lambda) * (z - p.z0);
}

std::pair<Eigen::VectorXd, double> tangent(const HomotopyProblem& p, const Eigen::VectorXd& z,
                                           double lambda, const Eigen::VectorXd* prev_dir,
                                           double rcond_threshold) {
    const Eigen::Index n = z.size();
    Eigen::MatrixXd A(n, n + 1);
    A.leftCols(n) = homotopy_dz(p, z, lambda);
    A.col(n) = homotopy_dlambda(p, z);
    // Null space of the n x (n+1) augmented Jacobian via QR of its transpose.
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A.transpose());
    const Eigen::MatrixXd& R = qr.matrixR();
    const double r00 = std::abs(R(0, 0));
    const double rnn = std::abs(R(n - 1, n - 1));
    if (!(r00 > 0.0) || rnn / r00 < rcond_threshold)
        throw SingularityError("tangent: rank-deficient augmented Jacobian at lambda=" +
                                   std::to_string(lambda),
                               lambda, r00 > 0.0 ? rnn / r00 : 0.0);
    Eigen::MatrixXd Q = qr.householderQ();
    Eigen::VectorXd u = Q.col(n);
    u /= u.norm();
    const bool flip = prev_dir ? (prev_dir->dot(u) < 0.0) : (u[n] < 0.0);
    if (flip) u = -u;
    return {u.head(n), u[n]};
}

TraceResult trace_zero_path(const HomotopyProblem& p, const SolverConfig& cfg,
                            const PathOptions& opt) {
    cfg.validate();
    const Eigen::Index n = p.z0.size();
    const double v = opt.velocity;
    if (!(v > 0.0)) throw ParameterError("trace_zero_path: velocity must be > 0");

    TraceResult res;
    auto last_dir = std::make_shared<Eigen::VectorXd>();
    auto field = [&p, &res, last_dir, v, &opt](const Eigen::VectorXd& u, double) {
        const Eigen::Index nn = u.size() - 1;
        const Eigen::VectorXd* prev = last_dir->size() ? last_dir.get() : nullptr;
        auto [dz, dl] = tangent(p, u.head(nn), u[nn], prev, opt.rcond_threshold);
        Eigen::VectorXd ut(nn + 1);
        ut << dz, dl;
        *last_dir = ut;
        ++res.nfe;
        return Eigen::VectorXd(v * ut);
    };

    Eigen::VectorXd u(n + 1);
    u << p.z0, 0.0;
    res.trace.push_back(PathState{p.z0, 0.0, 0.0, v});

    double tau = 0.0;
    const double tau_max = opt.max_arc_length / v;
    Eigen::VectorXd k1 = field(u, tau);
    std::int64_t hnw_extra = 0;  // field already counts its own calls
    double h = cfg.initial_step > 0.0
                   ? cfg.initial_step
                   : detail::initial_step_hnw(field, u, k1, tau, 1.0, tau_max, cfg.atol, cfg.rtol,
                                              hnw_extra);
    double errold = 1e-4;
    bool rejected_last = false;
    std::int64_t steps = 0;
    bool reached = false;

    while (!reached) {
        if (++steps > cfg.max_steps || tau > tau_max)
            throw PathFailureError("trace_zero_path: lambda failed to reach 1 (arc length " +
                                       std::to_string(tau * v) + ")",
                                   res.trace);
        auto [u_next, err] = dopri5_step(field, u, tau, h);
        if (!u_next.allFinite())
            throw PathFailureError("trace_zero_path: non-finite path state", res.trace);
        const double en = OdeState<Eigen::VectorXd>::error_norm(err, u, u_next, cfg.atol, cfg.rtol);
        if (en > 1.0) {
            rejected_last = true;
            h *= std::clamp(0.9 * std::pow(en, -0.2), 0.1, 1.0);
            if (h < 1e-15) throw PathFailureError("trace_zero_path: step underflow", res.trace);
            continue;
        }
        double h_used = h;
        const double fac = 0.9 * std::pow(std::max(en, 1e-10), -0.7 / 5.0) *
                           std::pow(errold, 0.4 / 5.0);
        h *= std::clamp(fac, 0.2, rejected_last ? 1.0 : 5.0);
        errold = std::max(en, 1e-10);
        rejected_last = false;

        if (u_next[n] >= 1.0) {
            // Event: lambda crossed 1 inside this step. Bisect the step size
            // until the endpoint lands on lambda = 1.
            double lo = 0.0, hi = h_used;
            Eigen::VectorXd u_hit = u_next;
            while (hi - lo > 1e-10 / v) {
                const double mid = 0.5 * (lo + hi);
                auto [um, em] = dopri5_step(field, u, tau, mid);
                if (um[n] >= 1.0) {
                    hi = mid;
                    u_hit = um;
                } else {
                    lo = mid;
                }
                if (std::abs(um[n] - 1.0) < 1e-12) {
                    u_hit = um;
                    hi = mid;
                    break;
                }
            }
            tau += hi;
            u = u_hit;
            u[n] = 1.0;
            Eigen::VectorXd z = u.head(n);
            if (opt.corrector)
                correct_onto_path(p, z, 1.0, opt.path_tol, opt.rcond_threshold, res.nfe);
            z = polish_root(p, z, opt.solve_tol, res.nfe);
            res.trace.push_back(PathState{z, 1.0, tau * v, v});
            res.solution = z;
            reached = true;
            break;
        }

        tau += h_used;
        u = u_next;
        if (opt.corrector) {
            Eigen::VectorXd z = u.head(n);
            correct_onto_path(p, z, u[n], opt.path_tol, opt.rcond_threshold, res.nfe);
            u.head(n) = z;
        }
        res.trace.push_back(PathState{u.head(n), u[n], tau * v, v});
    }
    return res;
}

Eigen::VectorXd velocity_dynamics(const HomotopyProblem& p, const Eigen::VectorXd& z,
                                  double lambda, double v) {
    if (!(v > 0.0)) throw ParameterError("velocity_dynamics: v must be > 0");
    auto [dz, dl] = tangent(p, z, lambda);
    (void)dl;
    return v * dz;
}

std::vector<double> recover_lambda(const std::vector<double>& F_norms, double v) {
    if (F_norms.size() < 2) throw ParameterError("recover_lambda: need at least 2 samples");
    double fmax = 0.0;
    for (double f : F_norms) fmax = std::max(fmax, f);
    if (v < fmax)
        throw NumericError("recover_lambda: v < max ||F||, no real lambda dynamics");
    const size_t n = F_norms.size();
    const double dt = 1.0 / static_cast<double>(n - 1);
    std::vector<double> lam(n, 0.0);
    auto g = [&](size_t i) {
        const double d = v * v - F_norms[i] * F_norms[i];
        return d > 0.0 ? std::sqrt(d) : 0.0;
    };
    for (size_t i = 1; i < n; ++i) lam[i] = lam[i - 1] + 0.5 * dt * (g(i - 1) + g(i));
    return lam;
}

double solve_v(const std::vector<double>& F_norms) {
    double fmax = 0.0;
    for (double f : F_norms) fmax = std::max(fmax, f);
    auto lam1 = [&](double v) { return recover_lambda(F_norms, v).back(); };
    double lo = fmax;
    if (lam1(lo) >= 1.0) return lo;  // already feasible at the minimum velocity
    double hi = std::max(1.0, 2.0 * fmax + 1.0);
    int grow = 0;
    while (lam1(hi) < 1.0) {
        hi *= 2.0;
        if (++grow > 60) throw NumericError("solve_v: no bracketing velocity found");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (lam1(mid) < 1.0)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-13 * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi);
}

Eigen::VectorXd newton_homotopy_ode(const HomotopyProblem& p, const SolverConfig& cfg,
                                    std::int64_t* nfe_out) {
    const Eigen::VectorXd r0 = p.residual(p.z0);
    auto field = [&p, &r0](const Eigen::VectorXd& z, double) {
        Eigen::MatrixXd J = p.jac(z);
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
        if (!(lu.rcond() > 1e-12))
            throw SingularityError("newton_homotopy_ode: singular Jacobian", 0.0, lu.rcond());
        return Eigen::VectorXd(-lu.solve(r0));
    };
    auto sol = ode_solve<Eigen::VectorXd>(field, p.z0, 0.0, 1.0, cfg);
    if (nfe_out) *nfe_out = sol.nfe;
    return sol.final_state();
}

Eigen::VectorXd newton_homotopy_euler_step(const HomotopyProblem& p) {
    Eigen::MatrixXd J = p.jac(p.z0);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
    if (!(lu.rcond() > 1e-12))
        throw SingularityError("newton_homotopy_euler_step: singular Jacobian", 0.0, lu.rcond());
    return p.z0 - lu.solve(p.residual(p.z0));
}

std::vector<NfeRow> nfe_vs_distance_experiment(const HomotopyProblem& p,
                                               const std::vector<double>& distances,
                                               const SolverConfig& cfg, const PathOptions& opt) {
    Eigen::VectorXd z_star;
    try {
        z_star = trace_zero_path(p, cfg, opt).solution;
    } catch (const std::exception&) {
        // no reachable root: restart rows from z0 and let each record its failure
        z_star = p.z0;
    }
    Eigen::VectorXd dir = Eigen::VectorXd::Ones(z_star.size());
    dir /= dir.norm();

    std::vector<NfeRow> rows;
    for (double d : distances) {
        NfeRow row;
        row.inv_distance = d > 0.0 ? 1.0 / d : std::numeric_limits<double>::infinity();
        HomotopyProblem pd = p;
        pd.z0 = z_star + d * dir;
        try {
            TraceResult r = trace_zero_path(pd, cfg, opt);
            row.nfe = r.nfe;
            row.ok = true;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

HomotopyProblem benchmark_equation(double z0, HomotopyKind kind) {
    HomotopyProblem p;
    p.residual = [](const Eigen::VectorXd& z) {
        Eigen::VectorXd r(1);
        r[0] = 2.0 * z[0] + std::exp(-0.1 * z[0]) + 5.0 * std::sin(4.0 * z[0]) - 16.0;
        return r;
    };
    p.jacobian = [](const Eigen::VectorXd& z) {
        Eigen::MatrixXd J(1, 1);
        J(0, 0) = 2.0 - 0.1 * std::exp(-0.1 * z[0]) + 20.0 * std::cos(4.0 * z[0]);
        return J;
    };
    p.z0 = Eigen::VectorXd::Constant(1, z0);
    p.kind = kind;
    return p;
}

}  // namespace homoode
