#include "homoode/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace homoode::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool wants_grad(std::initializer_list<const Tensor*> ins) {
    if (!active_tape()) return false;
    for (const Tensor* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

void record(std::vector<std::shared_ptr<TensorData>> ins, Tensor& out, std::function<void()> bw) {
    out.set_requires_grad(true);
    active_tape()->record(std::move(ins), out.data_ptr(), std::move(bw));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> y(a.value().size());
    for (size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
    Tensor out = Tensor::from(a.shape(), std::move(y));
    if (wants_grad({&a, &b})) {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        record({ad, bd}, out, [ad, bd, od] {
            if (ad->requires_grad) {
                ad->ensure_grad();
                for (size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] += od->grad[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> y(a.value().size());
    for (size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] - b.value()[i];
    Tensor out = Tensor::from(a.shape(), std::move(y));
    if (wants_grad({&a, &b})) {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        record({ad, bd}, out, [ad, bd, od] {
            if (ad->requires_grad) {
                ad->ensure_grad();
                for (size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] -= od->grad[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> y(a.value().size());
    for (size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
    Tensor out = Tensor::from(a.shape(), std::move(y));
    if (wants_grad({&a, &b})) {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        record({ad, bd}, out, [ad, bd, od] {
            if (ad->requires_grad) {
                ad->ensure_grad();
                for (size_t i = 0; i < od->grad.size(); ++i)
                    ad->grad[i] += od->grad[i] * bd->value[i];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (size_t i = 0; i < od->grad.size(); ++i)
                    bd->grad[i] += od->grad[i] * ad->value[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double a) {
    std::vector<double> y(x.value().size());
    for (size_t i = 0; i < y.size(); ++i) y[i] = a * x.value()[i];
    Tensor out = Tensor::from(x.shape(), std::move(y));
    if (wants_grad({&x})) {
        auto xd = x.data_ptr(), od = out.data_ptr();
        record({xd}, out, [xd, od, a] {
            xd->ensure_grad();
            for (size_t i = 0; i < od->grad.size(); ++i) xd->grad[i] += a * od->grad[i];
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    std::vector<double> y(x.value().size());
    for (size_t i = 0; i < y.size(); ++i) y[i] = x.value()[i] > 0.0 ? x.value()[i] : 0.0;
    Tensor out = Tensor::from(x.shape(), std::move(y));
    if (wants_grad({&x})) {
        auto xd = x.data_ptr(), od = out.data_ptr();
        record({xd}, out, [xd, od] {
            xd->ensure_grad();
            for (size_t i = 0; i < od->grad.size(); ++i)
                if (xd->value[i] > 0.0) xd->grad[i] += od->grad[i];
        });
    }
    return out;
}

Tensor tanh_act(const Tensor& x) {
    std::vector<double> y(x.value().size());
    for (size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(x.value()[i]);
    Tensor out = Tensor::from(x.shape(), std::move(y));
    if (wants_grad({&x})) {
        auto xd = x.data_ptr(), od = out.data_ptr();
        record({xd}, out, [xd, od] {
            xd->ensure_grad();
            for (size_t i = 0; i < od->grad.size(); ++i)
                xd->grad[i] += od->grad[i] * (1.0 - od->value[i] * od->value[i]);
        });
    }
    return out;
}

Tensor lincomb(const std::vector<double>& coeffs, const std::vector<Tensor>& xs) {
    if (coeffs.size() != xs.size() || xs.empty())
        throw ParameterError("lincomb: need equally many coefficients and tensors");
    for (const auto& t : xs) check_same_shape(xs[0], t, "lincomb");
    std::vector<double> y(xs[0].value().size(), 0.0);
    for (size_t j = 0; j < xs.size(); ++j) {
        const double c = coeffs[j];
        if (c == 0.0) continue;
        const auto& v = xs[j].value();
        for (size_t i = 0; i < y.size(); ++i) y[i] += c * v[i];
    }
    Tensor out = Tensor::from(xs[0].shape(), std::move(y));
    bool need = false;
    for (const auto& t : xs) need = need || t.requires_grad();
    if (need && active_tape()) {
        std::vector<std::shared_ptr<TensorData>> ins;
        for (const auto& t : xs) ins.push_back(t.data_ptr());
        auto od = out.data_ptr();
        auto cs = coeffs;
        auto ins_copy = ins;
        record(std::move(ins), out, [ins_copy, od, cs] {
            for (size_t j = 0; j < ins_copy.size(); ++j) {
                if (!ins_copy[j]->requires_grad || cs[j] == 0.0) continue;
                ins_copy[j]->ensure_grad();
                for (size_t i = 0; i < od->grad.size(); ++i)
                    ins_copy[j]->grad[i] += cs[j] * od->grad[i];
            }
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    CMapMat A(a.value().data(), m, k), B(b.value().data(), k, n);
    MapMat(out.value().data(), m, n) = A * B;
    if (wants_grad({&a, &b})) {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        record({ad, bd}, out, [ad, bd, od, m, k, n] {
            CMapMat G(od->grad.data(), m, n);
            if (ad->requires_grad) {
                ad->ensure_grad();
                MapMat(ad->grad.data(), m, k).noalias() +=
                    G * CMapMat(bd->value.data(), k, n).transpose();
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                MapMat(bd->grad.data(), k, n).noalias() +=
                    CMapMat(ad->value.data(), m, k).transpose() * G;
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(x, w);
    if (b.ndim() != 1 || b.dim(0) != y.dim(1)) throw DimensionError("linear: bad bias shape");
    const auto m = y.dim(0), n = y.dim(1);
    std::vector<double> v = y.value();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) v[static_cast<size_t>(i * n + j)] += b.at(j);
    Tensor out = Tensor::from(y.shape(), std::move(v));
    if (wants_grad({&y, &b})) {
        auto yd = y.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        record({yd, bd}, out, [yd, bd, od, m, n] {
            if (yd->requires_grad) {
                yd->ensure_grad();
                for (size_t i = 0; i < od->grad.size(); ++i) yd->grad[i] += od->grad[i];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j)
                        bd->grad[static_cast<size_t>(j)] += od->grad[static_cast<size_t>(i * n + j)];
            }
        });
    }
    return out;
}

namespace {

struct ConvGeom {
    std::int64_t n, cin, h, w, cout, kh, kw, oh, ow;
};

ConvGeom conv_geom(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    if (input.ndim() != 4 || kernel.ndim() != 4)
        throw DimensionError("conv2d: input and kernel must be 4-D");
    ConvGeom g;
    g.n = input.dim(0);
    g.cin = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.cout = kernel.dim(0);
    g.kh = kernel.dim(2);
    g.kw = kernel.dim(3);
    if (kernel.dim(1) != g.cin) throw DimensionError("conv2d: channel mismatch");
    if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding)
        throw DimensionError("conv2d: kernel larger than padded input");
    if ((g.h + 2 * padding - g.kh) % stride != 0 || (g.w + 2 * padding - g.kw) % stride != 0)
        throw DimensionError("conv2d: stride does not divide the output geometry");
    g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
    g.ow = (g.w + 2 * padding - g.kw) / stride + 1;
    return g;
}

// col: (cin*kh*kw) x (oh*ow), row-major
void im2col(const double* x, const ConvGeom& g, int stride, int padding, double* col) {
    const std::int64_t cols = g.oh * g.ow;
    for (std::int64_t c = 0; c < g.cin; ++c) {
        for (std::int64_t ki = 0; ki < g.kh; ++ki) {
            for (std::int64_t kj = 0; kj < g.kw; ++kj) {
                double* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
                for (std::int64_t oy = 0; oy < g.oh; ++oy) {
                    const std::int64_t iy = oy * stride + ki - padding;
                    for (std::int64_t ox = 0; ox < g.ow; ++ox) {
                        const std::int64_t ix = ox * stride + kj - padding;
                        row[oy * g.ow + ox] =
                            (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                                ? x[(c * g.h + iy) * g.w + ix]
                                : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvGeom& g, int stride, int padding, double* gx) {
    const std::int64_t cols = g.oh * g.ow;
    for (std::int64_t c = 0; c < g.cin; ++c) {
        for (std::int64_t ki = 0; ki < g.kh; ++ki) {
            for (std::int64_t kj = 0; kj < g.kw; ++kj) {
                const double* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
                for (std::int64_t oy = 0; oy < g.oh; ++oy) {
                    const std::int64_t iy = oy * stride + ki - padding;
                    if (iy < 0 || iy >= g.h) continue;
                    for (std::int64_t ox = 0; ox < g.ow; ++ox) {
                        const std::int64_t ix = ox * stride + kj - padding;
                        if (ix < 0 || ix >= g.w) continue;
                        gx[(c * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    const ConvGeom g = conv_geom(input, kernel, stride, padding);
    Tensor out = Tensor::zeros({g.n, g.cout, g.oh, g.ow});
    const std::int64_t krows = g.cin * g.kh * g.kw, cols = g.oh * g.ow;
    std::vector<double> col(static_cast<size_t>(krows * cols));
    CMapMat K(kernel.value().data(), g.cout, krows);
    for (std::int64_t s = 0; s < g.n; ++s) {
        im2col(input.value().data() + s * g.cin * g.h * g.w, g, stride, padding, col.data());
        MapMat(out.value().data() + s * g.cout * cols, g.cout, cols).noalias() =
            K * CMapMat(col.data(), krows, cols);
    }
    if (wants_grad({&input, &kernel})) {
        auto xd = input.data_ptr(), kd = kernel.data_ptr(), od = out.data_ptr();
        record({xd, kd}, out, [xd, kd, od, g, stride, padding] {
            const std::int64_t krows = g.cin * g.kh * g.kw, cols = g.oh * g.ow;
            std::vector<double> col(static_cast<size_t>(krows * cols));
            std::vector<double> gcol(static_cast<size_t>(krows * cols));
            if (xd->requires_grad) xd->ensure_grad();
            if (kd->requires_grad) kd->ensure_grad();
            CMapMat K(kd->value.data(), g.cout, krows);
            for (std::int64_t s = 0; s < g.n; ++s) {
                CMapMat G(od->grad.data() + s * g.cout * cols, g.cout, cols);
                if (kd->requires_grad) {
                    im2col(xd->value.data() + s * g.cin * g.h * g.w, g, stride, padding,
                           col.data());
                    MapMat(kd->grad.data(), g.cout, krows).noalias() +=
                        G * CMapMat(col.data(), krows, cols).transpose();
                }
                if (xd->requires_grad) {
                    MapMat(gcol.data(), krows, cols).noalias() = K.transpose() * G;
                    col2im_add(gcol.data(), g, stride, padding,
                               xd->grad.data() + s * g.cin * g.h * g.w);
                }
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x) {
    if (x.ndim() < 1) throw DimensionError("softmax: rank-0 input");
    const std::int64_t k = x.dim(x.ndim() - 1);
    const std::int64_t rows = x.size() / k;
    std::vector<double> y(x.value().size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = x.value().data() + r * k;
        double* yr = y.data() + r * k;
        double mx = xr[0];
        for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < k; ++j) sum += (yr[j] = std::exp(xr[j] - mx));
        for (std::int64_t j = 0; j < k; ++j) yr[j] /= sum;
    }
    Tensor out = Tensor::from(x.shape(), std::move(y));
    if (wants_grad({&x})) {
        auto xd = x.data_ptr(), od = out.data_ptr();
        record({xd}, out, [xd, od, rows, k] {
            xd->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* yr = od->value.data() + r * k;
                const double* gy = od->grad.data() + r * k;
                double dot = 0.0;
                for (std::int64_t j = 0; j < k; ++j) dot += gy[j] * yr[j];
                for (std::int64_t j = 0; j < k; ++j)
                    xd->grad[static_cast<size_t>(r * k + j)] += yr[j] * (gy[j] - dot);
            }
        });
    }
    return out;
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups) {
    if (x.ndim() != 4 && x.ndim() != 2) throw DimensionError("group_norm: expects 2-D or 4-D");
    const std::int64_t n = x.dim(0), c = x.dim(1);
    const std::int64_t sp = x.ndim() == 4 ? x.dim(2) * x.dim(3) : 1;
    if (groups <= 0 || c % groups != 0)
        throw DimensionError("group_norm: group count must divide channels");
    if (gamma.size() != c || beta.size() != c) throw DimensionError("group_norm: affine shape");
    const std::int64_t cg = c / groups;     // channels per group
    const std::int64_t m = cg * sp;         // elements per (sample, group)
    const double eps = 1e-5;
    std::vector<double> y(x.value().size());
    std::vector<double> means(static_cast<size_t>(n * groups)), istds(static_cast<size_t>(n * groups));
    for (std::int64_t s = 0; s < n; ++s) {
        for (std::int64_t g = 0; g < groups; ++g) {
            const double* base = x.value().data() + (s * c + g * cg) * sp;
            double mean = 0.0;
            for (std::int64_t i = 0; i < m; ++i) mean += base[i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (std::int64_t i = 0; i < m; ++i) var += (base[i] - mean) * (base[i] - mean);
            var /= static_cast<double>(m);
            const double istd = 1.0 / std::sqrt(var + eps);
            means[static_cast<size_t>(s * groups + g)] = mean;
            istds[static_cast<size_t>(s * groups + g)] = istd;
            for (std::int64_t ci = 0; ci < cg; ++ci) {
                const std::int64_t ch = g * cg + ci;
                const double ga = gamma.at(ch), be = beta.at(ch);
                const double* xi = x.value().data() + (s * c + ch) * sp;
                double* yi = y.data() + (s * c + ch) * sp;
                for (std::int64_t i = 0; i < sp; ++i) yi[i] = ga * (xi[i] - mean) * istd + be;
            }
        }
    }
    Tensor out = Tensor::from(x.shape(), std::move(y));
    if (wants_grad({&x, &gamma, &beta})) {
        auto xd = x.data_ptr(), gd = gamma.data_ptr(), bd = beta.data_ptr(), od = out.data_ptr();
        record({xd, gd, bd}, out, [xd, gd, bd, od, n, c, sp, groups, cg, m, means, istds] {
            if (xd->requires_grad) xd->ensure_grad();
            if (gd->requires_grad) gd->ensure_grad();
            if (bd->requires_grad) bd->ensure_grad();
            for (std::int64_t s = 0; s < n; ++s) {
                for (std::int64_t g = 0; g < groups; ++g) {
                    const double mean = means[static_cast<size_t>(s * groups + g)];
                    const double istd = istds[static_cast<size_t>(s * groups + g)];
                    // accumulate the two group-level sums for the x gradient
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (std::int64_t ci = 0; ci < cg; ++ci) {
                        const std::int64_t ch = g * cg + ci;
                        const double ga = gd->value[static_cast<size_t>(ch)];
                        const double* xi = xd->value.data() + (s * c + ch) * sp;
                        const double* gy = od->grad.data() + (s * c + ch) * sp;
                        for (std::int64_t i = 0; i < sp; ++i) {
                            const double xh = (xi[i] - mean) * istd;
                            const double dxh = gy[i] * ga;
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh;
                            if (gd->requires_grad) gd->grad[static_cast<size_t>(ch)] += gy[i] * xh;
                            if (bd->requires_grad) bd->grad[static_cast<size_t>(ch)] += gy[i];
                        }
                    }
                    if (!xd->requires_grad) continue;
                    const double inv_m = 1.0 / static_cast<double>(m);
                    for (std::int64_t ci = 0; ci < cg; ++ci) {
                        const std::int64_t ch = g * cg + ci;
                        const double ga = gd->value[static_cast<size_t>(ch)];
                        const double* xi = xd->value.data() + (s * c + ch) * sp;
                        const double* gy = od->grad.data() + (s * c + ch) * sp;
                        double* gx = xd->grad.data() + (s * c + ch) * sp;
                        for (std::int64_t i = 0; i < sp; ++i) {
                            const double xh = (xi[i] - mean) * istd;
                            const double dxh = gy[i] * ga;
                            gx[i] += istd * (dxh - inv_m * sum_dxh - xh * inv_m * sum_dxh_xh);
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.value()) s += v;
    Tensor out = Tensor::scalar(s);
    if (wants_grad({&x})) {
        auto xd = x.data_ptr(), od = out.data_ptr();
        record({xd}, out, [xd, od] {
            xd->ensure_grad();
            for (size_t i = 0; i < xd->grad.size(); ++i) xd->grad[i] += od->grad[0];
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.size())); }

Tensor global_avg_pool(const Tensor& x) {
    if (x.ndim() != 4) throw DimensionError("global_avg_pool: expects 4-D");
    const std::int64_t n = x.dim(0), c = x.dim(1), sp = x.dim(2) * x.dim(3);
    std::vector<double> y(static_cast<size_t>(n * c));
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double* xi = x.value().data() + (s * c + ch) * sp;
            double acc = 0.0;
            for (std::int64_t i = 0; i < sp; ++i) acc += xi[i];
            y[static_cast<size_t>(s * c + ch)] = acc / static_cast<double>(sp);
        }
    Tensor out = Tensor::from({n, c}, std::move(y));
    if (wants_grad({&x})) {
        auto xd = x.data_ptr(), od = out.data_ptr();
        record({xd}, out, [xd, od, n, c, sp] {
            xd->ensure_grad();
            const double inv = 1.0 / static_cast<double>(sp);
            for (std::int64_t s = 0; s < n; ++s)
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double g = od->grad[static_cast<size_t>(s * c + ch)] * inv;
                    double* gx = xd->grad.data() + (s * c + ch) * sp;
                    for (std::int64_t i = 0; i < sp; ++i) gx[i] += g;
                }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (shape_numel(shape) != x.size())
        throw DimensionError("reshape: element count mismatch");
    Tensor out = Tensor::from(shape, x.value());
    if (wants_grad({&x})) {
        auto xd = x.data_ptr(), od = out.data_ptr();
        record({xd}, out, [xd, od] {
            xd->ensure_grad();
            for (size_t i = 0; i < od->grad.size(); ++i) xd->grad[i] += od->grad[i];
        });
    }
    return out;
}

namespace {
// Per-sample channel blocks for [n,c] or [n,c,h,w] tensors.
std::int64_t spatial_of(const Tensor& x) {
    return x.ndim() == 4 ? x.dim(2) * x.dim(3) : 1;
}
}  // namespace

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.ndim() != b.ndim() || (a.ndim() != 2 && a.ndim() != 4))
        throw DimensionError("concat_channels: expects matching 2-D or 4-D tensors");
    if (a.dim(0) != b.dim(0)) throw DimensionError("concat_channels: batch mismatch");
    const std::int64_t sp = spatial_of(a);
    if (sp != spatial_of(b)) throw DimensionError("concat_channels: spatial mismatch");
    const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    Shape shape = a.shape();
    shape[1] = ca + cb;
    std::vector<double> y(static_cast<size_t>(n * (ca + cb) * sp));
    for (std::int64_t s = 0; s < n; ++s) {
        std::copy_n(a.value().data() + s * ca * sp, ca * sp, y.data() + s * (ca + cb) * sp);
        std::copy_n(b.value().data() + s * cb * sp, cb * sp,
                    y.data() + (s * (ca + cb) + ca) * sp);
    }
    Tensor out = Tensor::from(shape, std::move(y));
    if (wants_grad({&a, &b})) {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        record({ad, bd}, out, [ad, bd, od, n, ca, cb, sp] {
            for (std::int64_t s = 0; s < n; ++s) {
                if (ad->requires_grad) {
                    ad->ensure_grad();
                    const double* g = od->grad.data() + s * (ca + cb) * sp;
                    double* ga = ad->grad.data() + s * ca * sp;
                    for (std::int64_t i = 0; i < ca * sp; ++i) ga[i] += g[i];
                }
                if (bd->requires_grad) {
                    bd->ensure_grad();
                    const double* g = od->grad.data() + (s * (ca + cb) + ca) * sp;
                    double* gb = bd->grad.data() + s * cb * sp;
                    for (std::int64_t i = 0; i < cb * sp; ++i) gb[i] += g[i];
                }
            }
        });
    }
    return out;
}

Tensor slice_channels(const Tensor& x, std::int64_t from, std::int64_t to) {
    if (x.ndim() != 2 && x.ndim() != 4) throw DimensionError("slice_channels: expects 2-D or 4-D");
    const std::int64_t n = x.dim(0), c = x.dim(1), sp = spatial_of(x);
    if (from < 0 || to > c || from >= to) throw DimensionError("slice_channels: bad range");
    const std::int64_t cs = to - from;
    Shape shape = x.shape();
    shape[1] = cs;
    std::vector<double> y(static_cast<size_t>(n * cs * sp));
    for (std::int64_t s = 0; s < n; ++s)
        std::copy_n(x.value().data() + (s * c + from) * sp, cs * sp, y.data() + s * cs * sp);
    Tensor out = Tensor::from(shape, std::move(y));
    if (wants_grad({&x})) {
        auto xd = x.data_ptr(), od = out.data_ptr();
        record({xd}, out, [xd, od, n, c, sp, from, cs] {
            xd->ensure_grad();
            for (std::int64_t s = 0; s < n; ++s) {
                const double* g = od->grad.data() + s * cs * sp;
                double* gx = xd->grad.data() + (s * c + from) * sp;
                for (std::int64_t i = 0; i < cs * sp; ++i) gx[i] += g[i];
            }
        });
    }
    return out;
}

Tensor scale_channels(const Tensor& x, const Tensor& m) {
    if ((x.ndim() != 2 && x.ndim() != 4) || m.ndim() != 1 || m.dim(0) != x.dim(1))
        throw DimensionError("scale_channels: mask must be [c] matching dim 1");
    const std::int64_t n = x.dim(0), c = x.dim(1), sp = spatial_of(x);
    std::vector<double> y(x.value().size());
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double mv = m.at(ch);
            const double* xi = x.value().data() + (s * c + ch) * sp;
            double* yi = y.data() + (s * c + ch) * sp;
            for (std::int64_t i = 0; i < sp; ++i) yi[i] = mv * xi[i];
        }
    Tensor out = Tensor::from(x.shape(), std::move(y));
    if (wants_grad({&x, &m})) {
        auto xd = x.data_ptr(), md = m.data_ptr(), od = out.data_ptr();
        record({xd, md}, out, [xd, md, od, n, c, sp] {
            if (xd->requires_grad) xd->ensure_grad();
            if (md->requires_grad) md->ensure_grad();
            for (std::int64_t s = 0; s < n; ++s)
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double* g = od->grad.data() + (s * c + ch) * sp;
                    if (xd->requires_grad) {
                        const double mv = md->value[static_cast<size_t>(ch)];
                        double* gx = xd->grad.data() + (s * c + ch) * sp;
                        for (std::int64_t i = 0; i < sp; ++i) gx[i] += mv * g[i];
                    }
                    if (md->requires_grad) {
                        const double* xi = xd->value.data() + (s * c + ch) * sp;
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < sp; ++i) acc += g[i] * xi[i];
                        md->grad[static_cast<size_t>(ch)] += acc;
                    }
                }
        });
    }
    return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
    if ((x.ndim() != 2 && x.ndim() != 4) || b.ndim() != 1 || b.dim(0) != x.dim(1))
        throw DimensionError("add_channel_bias: bias must be [c] matching dim 1");
    const std::int64_t n = x.dim(0), c = x.dim(1), sp = spatial_of(x);
    std::vector<double> y(x.value().size());
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double bv = b.at(ch);
            const double* xi = x.value().data() + (s * c + ch) * sp;
            double* yi = y.data() + (s * c + ch) * sp;
            for (std::int64_t i = 0; i < sp; ++i) yi[i] = xi[i] + bv;
        }
    Tensor out = Tensor::from(x.shape(), std::move(y));
    if (wants_grad({&x, &b})) {
        auto xd = x.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        record({xd, bd}, out, [xd, bd, od, n, c, sp] {
            if (xd->requires_grad) xd->ensure_grad();
            if (bd->requires_grad) bd->ensure_grad();
            for (std::int64_t s = 0; s < n; ++s)
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double* g = od->grad.data() + (s * c + ch) * sp;
                    if (xd->requires_grad) {
                        double* gx = xd->grad.data() + (s * c + ch) * sp;
                        for (std::int64_t i = 0; i < sp; ++i) gx[i] += g[i];
                    }
                    if (bd->requires_grad) {
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < sp; ++i) acc += g[i];
                        bd->grad[static_cast<size_t>(ch)] += acc;
                    }
                }
        });
    }
    return out;
}

Tensor broadcast_channels(const Tensor& v, std::int64_t n, std::int64_t h, std::int64_t w) {
    if (v.ndim() != 1) throw DimensionError("broadcast_channels: expects [c]");
    const std::int64_t c = v.dim(0), sp = h * w;
    std::vector<double> y(static_cast<size_t>(n * c * sp));
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t ch = 0; ch < c; ++ch)
            std::fill_n(y.data() + (s * c + ch) * sp, sp, v.at(ch));
    Tensor out = Tensor::from({n, c, h, w}, std::move(y));
    if (wants_grad({&v})) {
        auto vd = v.data_ptr(), od = out.data_ptr();
        record({vd}, out, [vd, od, n, c, sp] {
            vd->ensure_grad();
            for (std::int64_t s = 0; s < n; ++s)
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double* g = od->grad.data() + (s * c + ch) * sp;
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < sp; ++i) acc += g[i];
                    vd->grad[static_cast<size_t>(ch)] += acc;
                }
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2) throw DimensionError("cross_entropy: logits must be [n,k]");
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n)
        throw DimensionError("cross_entropy: label count mismatch");
    for (int l : labels)
        if (l < 0 || l >= k) throw ParameterError("cross_entropy: label out of range");
    // log-sum-exp stabilized
    std::vector<double> probs(logits.value().size());
    double loss = 0.0;
    for (std::int64_t r = 0; r < n; ++r) {
        const double* xr = logits.value().data() + r * k;
        double mx = xr[0];
        for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < k; ++j) sum += std::exp(xr[j] - mx);
        const double lse = mx + std::log(sum);
        for (std::int64_t j = 0; j < k; ++j)
            probs[static_cast<size_t>(r * k + j)] = std::exp(xr[j] - lse);
        loss -= xr[labels[static_cast<size_t>(r)]] - lse;
    }
    loss /= static_cast<double>(n);
    Tensor out = Tensor::scalar(loss);
    if (wants_grad({&logits})) {
        auto xd = logits.data_ptr(), od = out.data_ptr();
        record({xd}, out, [xd, od, probs, labels, n, k] {
            xd->ensure_grad();
            const double g = od->grad[0] / static_cast<double>(n);
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t j = 0; j < k; ++j) {
                    double p = probs[static_cast<size_t>(r * k + j)];
                    if (j == labels[static_cast<size_t>(r)]) p -= 1.0;
                    xd->grad[static_cast<size_t>(r * k + j)] += g * p;
                }
        });
    }
    return out;
}

Tensor variational_dropout_mask(std::int64_t channels, double rate, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ParameterError("variational_dropout_mask: rate must be in [0,1)");
    std::vector<double> m(static_cast<size_t>(channels), 1.0);
    if (rate > 0.0) {
        std::bernoulli_distribution keep(1.0 - rate);
        const double s = 1.0 / (1.0 - rate);
        for (auto& v : m) v = keep(rng) ? s : 0.0;
    }
    return Tensor::from({channels}, std::move(m));
}

}  // namespace homoode::ops
