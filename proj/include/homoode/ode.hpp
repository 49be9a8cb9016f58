#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "homoode/errors.hpp"
#include "homoode/ops.hpp"
#include "homoode/tensor.hpp"

namespace homoode {

enum class OdeMethod { rk4, dopri5 };

struct SolverConfig {
    OdeMethod method = OdeMethod::dopri5;
    double atol = 1e-3;
    double rtol = 1e-3;
    std::int64_t max_steps = 1000;
    double initial_step = 0.0;  // 0 => automatic selection
    bool store_trajectory = false;

    void validate() const {
        if (atol <= 0.0 || rtol <= 0.0) throw ParameterError("SolverConfig: atol, rtol must be > 0");
        if (max_steps <= 0) throw ParameterError("SolverConfig: max_steps must be > 0");
    }
};

template <class S>
struct OdeSolution {
    std::vector<double> times;
    std::vector<S> states;
    std::int64_t nfe = 0;
    std::int64_t accepted_steps = 0;
    std::int64_t rejected_steps = 0;

    const S& final_state() const { return states.back(); }
    double final_time() const { return times.back(); }
};

struct OdeDivergenceError : NumericError {
    OdeDivergenceError(const std::string& msg, double t_reached, std::int64_t nfe)
        : NumericError(msg), t_reached(t_reached), nfe(nfe) {}
    double t_reached;
    std::int64_t nfe;
};

// State-space adapter. Error norms always read plain values; lincomb may
// record on the active tape (Tensor specialization) so the solve stays
// differentiable.
template <class S>
struct OdeState;

template <>
struct OdeState<Eigen::VectorXd> {
    static Eigen::VectorXd lincomb(const std::vector<double>& c,
                                   const std::vector<const Eigen::VectorXd*>& xs) {
        Eigen::VectorXd y = Eigen::VectorXd::Zero(xs[0]->size());
        for (size_t j = 0; j < xs.size(); ++j)
            if (c[j] != 0.0) y += c[j] * (*xs[j]);
        return y;
    }
    static double error_norm(const Eigen::VectorXd& e, const Eigen::VectorXd& y0,
                             const Eigen::VectorXd& y1, double atol, double rtol) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < e.size(); ++i) {
            const double sc = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
            const double q = e[i] / sc;
            acc += q * q;
        }
        return std::sqrt(acc / static_cast<double>(e.size()));
    }
    static double weighted_rms(const Eigen::VectorXd& v, const Eigen::VectorXd& ref, double atol,
                               double rtol) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            const double sc = atol + rtol * std::abs(ref[i]);
            const double q = v[i] / sc;
            acc += q * q;
        }
        return std::sqrt(acc / static_cast<double>(v.size()));
    }
    static bool finite(const Eigen::VectorXd& v) { return v.allFinite(); }
};

template <>
struct OdeState<Tensor> {
    static Tensor lincomb(const std::vector<double>& c, const std::vector<const Tensor*>& xs) {
        std::vector<Tensor> ts;
        ts.reserve(xs.size());
        for (auto* p : xs) ts.push_back(*p);
        return ops::lincomb(c, ts);
    }
    static double error_norm(const Tensor& e, const Tensor& y0, const Tensor& y1, double atol,
                             double rtol) {
        double acc = 0.0;
        const auto& ev = e.value();
        for (size_t i = 0; i < ev.size(); ++i) {
            const double sc =
                atol + rtol * std::max(std::abs(y0.value()[i]), std::abs(y1.value()[i]));
            const double q = ev[i] / sc;
            acc += q * q;
        }
        return std::sqrt(acc / static_cast<double>(ev.size()));
    }
    static double weighted_rms(const Tensor& v, const Tensor& ref, double atol, double rtol) {
        double acc = 0.0;
        for (size_t i = 0; i < v.value().size(); ++i) {
            const double sc = atol + rtol * std::abs(ref.value()[i]);
            const double q = v.value()[i] / sc;
            acc += q * q;
        }
        return std::sqrt(acc / static_cast<double>(v.value().size()));
    }
    static bool finite(const Tensor& v) { return v.all_finite(); }
};

namespace detail {

// Dormand-Prince 5(4) tableau.
inline constexpr double kDpC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
inline constexpr double kDpA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
inline constexpr double kDpB5[7] = {35.0 / 384,      0.0,        500.0 / 1113, 125.0 / 192,
                                    -2187.0 / 6784,  11.0 / 84,  0.0};
inline constexpr double kDpErr[7] = {71.0 / 57600,       0.0,          -71.0 / 16695, 71.0 / 1920,
                                     -17253.0 / 339200,  22.0 / 525,   -1.0 / 40};

}  // namespace detail

// One Dormand-Prince 5(4) step. Returns the 5th-order solution and the
// embedded error estimate. If k1 (= f(z,t)) is supplied it is reused (FSAL);
// if k7_out is non-null the last stage is written there for reuse.
template <class S, class F>
std::pair<S, S> dopri5_step(F&& f, const S& z, double t, double h, const S* k1 = nullptr,
                            S* k7_out = nullptr) {
    using Ops = OdeState<S>;
    std::vector<S> k;
    k.reserve(7);
    k.push_back(k1 ? *k1 : f(z, t));
    for (int st = 1; st < 7; ++st) {
        std::vector<double> c{1.0};
        std::vector<const S*> xs{&z};
        for (int j = 0; j < st; ++j) {
            c.push_back(h * detail::kDpA[st][j]);
            xs.push_back(&k[static_cast<size_t>(j)]);
        }
        S zs = Ops::lincomb(c, xs);
        k.push_back(f(zs, t + detail::kDpC[st] * h));
    }
    std::vector<double> cb{1.0};
    std::vector<const S*> xb{&z};
    std::vector<double> ce;
    std::vector<const S*> xe;
    for (int j = 0; j < 7; ++j) {
        cb.push_back(h * detail::kDpB5[j]);
        xb.push_back(&k[static_cast<size_t>(j)]);
        ce.push_back(h * detail::kDpErr[j]);
        xe.push_back(&k[static_cast<size_t>(j)]);
    }
    S z_next = Ops::lincomb(cb, xb);
    S err = Ops::lincomb(ce, xe);
    if (k7_out) *k7_out = k[6];
    return {std::move(z_next), std::move(err)};
}

// Classical RK4 step.
template <class S, class F>
S rk4_step(F&& f, const S& z, double t, double h) {
    using Ops = OdeState<S>;
    S k1 = f(z, t);
    S z2 = Ops::lincomb({1.0, h / 2}, {&z, &k1});
    S k2 = f(z2, t + h / 2);
    S z3 = Ops::lincomb({1.0, h / 2}, {&z, &k2});
    S k3 = f(z3, t + h / 2);
    S z4 = Ops::lincomb({1.0, h}, {&z, &k3});
    S k4 = f(z4, t + h);
    return Ops::lincomb({1.0, h / 6, h / 3, h / 3, h / 6}, {&z, &k1, &k2, &k3, &k4});
}

namespace detail {

// Hairer-Norsett-Wanner automatic initial step selection (order 5).
template <class S, class F>
double initial_step_hnw(F&& f, const S& z0, const S& f0, double t0, double dir, double span,
                        double atol, double rtol, std::int64_t& nfe) {
    using Ops = OdeState<S>;
    const double d0 = Ops::weighted_rms(z0, z0, atol, rtol);
    const double d1 = Ops::weighted_rms(f0, z0, atol, rtol);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, span);
    S y1 = Ops::lincomb({1.0, dir * h0}, {&z0, &f0});
    S f1 = f(y1, t0 + dir * h0);
    ++nfe;
    S df = Ops::lincomb({1.0, -1.0}, {&f1, &f0});
    const double d2 = Ops::weighted_rms(df, z0, atol, rtol) / h0;
    const double dmax = std::max(d1, d2);
    double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                              : std::pow(0.01 / dmax, 1.0 / 5.0);
    return std::min({100.0 * h0, h1, span});
}

}  // namespace detail

// Adaptive Dormand-Prince driver with the conventional safety-factored PI
// controller. Exposes per-step state so callers can do event handling.
template <class S, class F>
class Dopri5Driver {
public:
    Dopri5Driver(F f, S z0, double t0, double t1, const SolverConfig& cfg)
        : f_(std::move(f)), y_(std::move(z0)), yprev_(y_), t_(t0), tprev_(t0), t1_(t1), cfg_(cfg) {
        cfg_.validate();
        if (t0 == t1) throw ParameterError("ode_solve: t0 must differ from t1");
        dir_ = t1 > t0 ? 1.0 : -1.0;
        k1_ = f_(y_, t_);
        ++nfe;
        if (cfg_.initial_step > 0.0) {
            h_ = cfg_.initial_step;
        } else {
            h_ = detail::initial_step_hnw(f_, y_, k1_, t_, dir_, std::abs(t1 - t0), cfg_.atol,
                                          cfg_.rtol, nfe);
        }
    }

    bool done() const { return done_; }
    double t() const { return t_; }
    const S& y() const { return y_; }
    double t_prev() const { return tprev_; }
    const S& y_prev() const { return yprev_; }
    double last_accepted_h() const { return last_h_; }

    // Advances by one accepted step (possibly after rejections).
    // Returns false once t1 has been reached.
    bool step() {
        if (done_) return false;
        while (true) {
            if (accepted_steps + rejected_steps >= cfg_.max_steps)
                throw OdeDivergenceError("ode_solve: max_steps exceeded at t=" + std::to_string(t_),
                                         t_, nfe);
            double h = std::min(h_, std::abs(t1_ - t_));
            bool last = std::abs(t1_ - t_) <= h_ * (1.0 + 1e-12);
            S k7;
            auto [y_next, err] = dopri5_step(f_, y_, t_, dir_ * h, &k1_, &k7);
            nfe += 6;
            if (!OdeState<S>::finite(y_next))
                throw NumericError("ode_solve: non-finite state at t=" + std::to_string(t_));
            const double en = OdeState<S>::error_norm(err, y_, y_next, cfg_.atol, cfg_.rtol);
            if (en <= 1.0) {
                ++accepted_steps;
                tprev_ = t_;
                yprev_ = y_;
                last_h_ = h;
                t_ = last ? t1_ : t_ + dir_ * h;
                y_ = std::move(y_next);
                k1_ = std::move(k7);
                // PI controller (beta = 0.04-style damped update)
                const double fac =
                    0.9 * std::pow(std::max(en, 1e-10), -0.7 / 5.0) * std::pow(errold_, 0.4 / 5.0);
                h_ = h * std::clamp(fac, 0.2, rejected_last_ ? 1.0 : 5.0);
                errold_ = std::max(en, 1e-10);
                rejected_last_ = false;
                if (last || std::abs(t1_ - t_) <= 1e-14 * std::max(1.0, std::abs(t1_))) done_ = true;
                return true;
            }
            ++rejected_steps;
            rejected_last_ = true;
            h_ = h * std::clamp(0.9 * std::pow(en, -1.0 / 5.0), 0.1, 1.0);
            if (h_ < 1e-14 * std::max(1.0, std::abs(t_)))
                throw OdeDivergenceError("ode_solve: step size underflow at t=" + std::to_string(t_),
                                         t_, nfe);
        }
    }

    std::int64_t nfe = 0;
    std::int64_t accepted_steps = 0;
    std::int64_t rejected_steps = 0;

private:
    F f_;
    S y_, yprev_;
    S k1_;
    double t_, tprev_, t1_, dir_, h_ = 0.0, last_h_ = 0.0;
    double errold_ = 1e-4;
    bool rejected_last_ = false;
    bool done_ = false;
    SolverConfig cfg_;
};

// Integrates dz/dt = f(z, t) from t0 to t1 (either direction).
template <class S, class F>
OdeSolution<S> ode_solve(F f, const S& z0, double t0, double t1, const SolverConfig& cfg,
                         OdeSolution<S>* partial_out = nullptr) {
    cfg.validate();
    OdeSolution<S> sol;
    sol.times.push_back(t0);
    sol.states.push_back(z0);
    auto keep = [&](double t, const S& y) {
        if (cfg.store_trajectory) {
            sol.times.push_back(t);
            sol.states.push_back(y);
        } else {
            sol.times.back() = t;
            sol.states.back() = y;
        }
    };
    if (cfg.method == OdeMethod::rk4) {
        if (t0 == t1) throw ParameterError("ode_solve: t0 must differ from t1");
        const double span = t1 - t0;
        double h = cfg.initial_step > 0.0 ? cfg.initial_step : std::abs(span) / 100.0;
        const std::int64_t nsteps = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::ceil(std::abs(span) / h - 1e-12)));
        if (nsteps > cfg.max_steps)
            throw OdeDivergenceError("ode_solve(rk4): step count exceeds max_steps", t0, 0);
        const double hs = span / static_cast<double>(nsteps);
        S y = z0;
        double t = t0;
        for (std::int64_t i = 0; i < nsteps; ++i) {
            y = rk4_step(f, y, t, hs);
            sol.nfe += 4;
            t = (i + 1 == nsteps) ? t1 : t0 + hs * static_cast<double>(i + 1);
            if (!OdeState<S>::finite(y))
                throw NumericError("ode_solve(rk4): non-finite state at t=" + std::to_string(t));
            ++sol.accepted_steps;
            keep(t, y);
        }
        return sol;
    }
    Dopri5Driver<S, F> drv(std::move(f), z0, t0, t1, cfg);
    try {
        while (!drv.done()) {
            drv.step();
            keep(drv.t(), drv.y());
        }
    } catch (const OdeDivergenceError&) {
        sol.nfe = drv.nfe;
        sol.accepted_steps = drv.accepted_steps;
        sol.rejected_steps = drv.rejected_steps;
        if (partial_out) *partial_out = sol;
        throw;
    }
    sol.nfe = drv.nfe;
    sol.accepted_steps = drv.accepted_steps;
    sol.rejected_steps = drv.rejected_steps;
    return sol;
}

}  // namespace homoode
