#include "homoode/data.hpp"

#include "homoode/adjoint.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>

namespace homoode {

namespace {

constexpr double kMnistMean = 0.1307;
constexpr double kMnistStd = 0.3081;

std::uint32_t read_be32(std::ifstream& f, const std::string& what) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw IoError("idx: truncated file while reading " + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

void write_be32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    f.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

Dataset Dataset::slice(std::int64_t from, std::int64_t to) const {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = from; i < to; ++i) idx.push_back(i);
    return gather(idx);
}

Dataset Dataset::gather(const std::vector<std::int64_t>& idx) const {
    const std::int64_t row = images.size() / images.dim(0);
    Shape s = images.shape();
    s[0] = static_cast<std::int64_t>(idx.size());
    std::vector<double> out(static_cast<size_t>(row) * idx.size());
    Dataset d;
    d.labels.reserve(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) {
        const std::int64_t i = idx[k];
        if (i < 0 || i >= size()) throw DimensionError("Dataset::gather: index out of range");
        std::memcpy(out.data() + k * static_cast<size_t>(row),
                    images.value().data() + static_cast<size_t>(i * row),
                    static_cast<size_t>(row) * sizeof(double));
        d.labels.push_back(labels[static_cast<size_t>(i)]);
    }
    d.images = Tensor::from(s, std::move(out));
    d.split = split;
    d.num_classes = num_classes;
    return d;
}

void MetricLog::append(MetricRow r) {
    if (!rows.empty() && r.epoch < rows.back().epoch)
        throw ParameterError("MetricLog: epochs must be monotone");
    rows.push_back(std::move(r));
}

void MetricLog::write_csv(std::ostream& os, const std::string& comment) const {
    if (!comment.empty()) os << "# " << comment << "\n";
    os << "epoch,split,accuracy,mean_nfe,loss,wall_time_s\n";
    for (const auto& r : rows)
        os << r.epoch << "," << r.split << "," << r.accuracy << "," << r.mean_nfe << "," << r.loss
           << "," << r.wall_time_s << "\n";
}

IdxImages read_idx_images(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("idx: cannot open " + path);
    const std::uint32_t magic = read_be32(f, "magic");
    if (magic != 0x00000803)
        throw FormatError("idx: bad image magic in " + path);
    IdxImages im;
    im.n = read_be32(f, "count");
    im.h = read_be32(f, "rows");
    im.w = read_be32(f, "cols");
    im.pixels.resize(static_cast<size_t>(im.n * im.h * im.w));
    f.read(reinterpret_cast<char*>(im.pixels.data()),
           static_cast<std::streamsize>(im.pixels.size()));
    if (!f) throw IoError("idx: truncated pixel data in " + path);
    return im;
}

std::vector<std::uint8_t> read_idx_labels(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("idx: cannot open " + path);
    const std::uint32_t magic = read_be32(f, "magic");
    if (magic != 0x00000801)
        throw FormatError("idx: bad label magic in " + path);
    const std::uint32_t n = read_be32(f, "count");
    std::vector<std::uint8_t> labels(n);
    f.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(n));
    if (!f) throw IoError("idx: truncated label data in " + path);
    return labels;
}

void write_idx_images(const std::string& path, const IdxImages& im) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("idx: cannot open " + path + " for writing");
    write_be32(f, 0x00000803);
    write_be32(f, static_cast<std::uint32_t>(im.n));
    write_be32(f, static_cast<std::uint32_t>(im.h));
    write_be32(f, static_cast<std::uint32_t>(im.w));
    f.write(reinterpret_cast<const char*>(im.pixels.data()),
            static_cast<std::streamsize>(im.pixels.size()));
    if (!f) throw IoError("idx: write failed for " + path);
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("idx: cannot open " + path + " for writing");
    write_be32(f, 0x00000801);
    write_be32(f, static_cast<std::uint32_t>(labels.size()));
    f.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
    if (!f) throw IoError("idx: write failed for " + path);
}

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       const std::string& split) {
    IdxImages im = read_idx_images(images_path);
    std::vector<std::uint8_t> lab = read_idx_labels(labels_path);
    if (static_cast<std::int64_t>(lab.size()) != im.n)
        throw FormatError("idx: image/label count mismatch");
    std::vector<double> v(im.pixels.size());
    for (size_t i = 0; i < im.pixels.size(); ++i)
        v[i] = (static_cast<double>(im.pixels[i]) / 255.0 - kMnistMean) / kMnistStd;
    Dataset d;
    d.images = Tensor::from({im.n, 1, im.h, im.w}, std::move(v));
    d.labels.assign(lab.begin(), lab.end());
    for (int l : d.labels)
        if (l < 0 || l > 9) throw FormatError("idx: label out of range");
    d.split = split;
    d.num_classes = 10;
    return d;
}

Dataset synth_circles(std::int64_t n, double noise, std::uint64_t seed) {
    if (n % 2 != 0) throw ParameterError("synth_circles: n must be even");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ang(0.0, 2.0 * M_PI);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> pts(static_cast<size_t>(2 * n));
    std::vector<int> labels(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const int cls = i < n / 2 ? 0 : 1;
        const double r = cls == 0 ? 0.5 : 1.0;
        const double a = ang(rng);
        pts[static_cast<size_t>(2 * i)] = r * std::cos(a) + noise * g(rng);
        pts[static_cast<size_t>(2 * i + 1)] = r * std::sin(a) + noise * g(rng);
        labels[static_cast<size_t>(i)] = cls;
    }
    // shuffle rows so batches are class-balanced in expectation
    std::vector<std::int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    Dataset d;
    d.images = Tensor::from({n, 2}, std::move(pts));
    d.labels = std::move(labels);
    d.num_classes = 2;
    d.split = "train";
    return d.gather(idx);
}

Dataset synth_moons(std::int64_t n, double noise, std::uint64_t seed) {
    if (n % 2 != 0) throw ParameterError("synth_moons: n must be even");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ang(0.0, M_PI);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> pts(static_cast<size_t>(2 * n));
    std::vector<int> labels(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const int cls = i < n / 2 ? 0 : 1;
        const double t = ang(rng);
        double x = cls == 0 ? std::cos(t) : 1.0 - std::cos(t);
        double y = cls == 0 ? std::sin(t) : 0.5 - std::sin(t);
        pts[static_cast<size_t>(2 * i)] = x + noise * g(rng);
        pts[static_cast<size_t>(2 * i + 1)] = y + noise * g(rng);
        labels[static_cast<size_t>(i)] = cls;
    }
    std::vector<std::int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    Dataset d;
    d.images = Tensor::from({n, 2}, std::move(pts));
    d.labels = std::move(labels);
    d.num_classes = 2;
    d.split = "train";
    return d.gather(idx);
}

Tensor augment(const Tensor& images, int pad, bool flip, std::mt19937_64& rng) {
    if (pad < 0) throw ParameterError("augment: pad must be >= 0");
    if (images.ndim() != 4) throw DimensionError("augment: expected [n,c,h,w]");
    const std::int64_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    std::vector<double> out(images.value().size(), 0.0);
    std::uniform_int_distribution<int> off(0, 2 * pad);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const auto& in = images.value();
    for (std::int64_t b = 0; b < n; ++b) {
        const int dy = pad > 0 ? off(rng) : 0;
        const int dx = pad > 0 ? off(rng) : 0;
        const bool do_flip = flip && coin(rng) < 0.5;
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double* src = in.data() + ((b * c + ch) * h) * w;
            double* dst = out.data() + ((b * c + ch) * h) * w;
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x) {
                    // coordinates in the padded image that the crop reads
                    const std::int64_t sy = y + dy - pad;
                    const std::int64_t sx = x + dx - pad;
                    double v = 0.0;
                    if (sy >= 0 && sy < h && sx >= 0 && sx < w)
                        v = src[sy * w + sx];
                    dst[y * w + (do_flip ? w - 1 - x : x)] = v;
                }
        }
    }
    return Tensor::from(images.shape(), std::move(out));
}

std::mt19937_64 seed_stream(std::uint64_t seed, const std::string& name) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char ch : name) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return std::mt19937_64(seed ^ h);
}

namespace {

Tensor initial_state(const ImplicitModel& m, const SharedInit* si, std::int64_t batch,
                     bool* have) {
    *have = false;
    if (!si || m.config().kind != ModelKind::homo_ode) return Tensor();
    *have = true;
    const std::int64_t hw = m.config().state_hw();
    Tensor z0 = broadcast_init(*si, hw, hw, batch);
    if (m.config().arch == ArchKind::mlp)
        z0 = ops::reshape(z0, {batch, si->channels()});
    return z0;
}

std::int64_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    std::int64_t correct = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = logits.value().data() + i * k;
        std::int64_t arg = 0;
        for (std::int64_t j = 1; j < k; ++j)
            if (row[j] > row[arg]) arg = j;
        if (arg == labels[static_cast<size_t>(i)]) ++correct;
    }
    return correct;
}

}  // namespace

EvalResult evaluate(const ImplicitModel& m, const Dataset& data, int batch_size,
                    const SharedInit* si) {
    EvalResult res;
    std::int64_t correct = 0, forwards = 0;
    double loss_sum = 0.0, nfe_sum = 0.0;
    const std::int64_t n = data.size();
    for (std::int64_t b = 0; b < n; b += batch_size) {
        Dataset batch = data.slice(b, std::min<std::int64_t>(b + batch_size, n));
        bool have_z0 = false;
        Tensor z0 = initial_state(m, si, batch.size(), &have_z0);
        ForwardRecord rec = m.forward(batch.images, have_z0 ? &z0 : nullptr);
        Tensor logits = m.classify(rec.z_final);
        loss_sum += model_loss(logits, batch.labels).item() * static_cast<double>(batch.size());
        correct += count_correct(logits, batch.labels);
        nfe_sum += static_cast<double>(rec.nfe);
        ++forwards;
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    res.loss = loss_sum / static_cast<double>(n);
    res.mean_nfe = forwards ? nfe_sum / static_cast<double>(forwards) : 0.0;
    return res;
}

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, Tensor>>& params, double lr,
                             double beta1, double beta2, double eps)
    : params_(&params), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto& [n, t] : params) {
        m_.emplace_back(t.value().size(), 0.0);
        v_.emplace_back(t.value().size(), 0.0);
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& [n, t] : *params_) t.zero_grad();
}

void AdamOptimizer::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t p = 0; p < params_->size(); ++p) {
        auto& t = (*params_)[p].second;
        if (!t.has_grad()) continue;
        auto& val = t.value();
        const auto& g = t.value().size() == t.data_ptr()->grad.size() ? t.data_ptr()->grad
                                                                      : t.grad();
        for (size_t i = 0; i < val.size(); ++i) {
            m_[p][i] = b1_ * m_[p][i] + (1.0 - b1_) * g[i];
            v_[p][i] = b2_ * v_[p][i] + (1.0 - b2_) * g[i] * g[i];
            val[i] -= lr_ * (m_[p][i] / bc1) / (std::sqrt(v_[p][i] / bc2) + eps_);
        }
    }
}

MetricLog train_loop(ImplicitModel& m, const Dataset& train, const Dataset& test,
                     const TrainOptions& opt, SharedInit* si) {
    MetricLog log;
    if (opt.epochs <= 0) return log;
    AdamOptimizer adam(m.params(), opt.lr, opt.beta1, opt.beta2, opt.eps);
    std::mt19937_64 shuffle_rng = seed_stream(opt.seed, "data");
    std::mt19937_64 dropout_rng = seed_stream(opt.seed, "dropout");
    std::mt19937_64* drng = opt.dropout_rate > 0.0 ? &dropout_rng : nullptr;
    m.config().dropout_rate = opt.dropout_rate;
    const auto t_start = std::chrono::steady_clock::now();

    std::vector<std::int64_t> order(static_cast<size_t>(train.size()));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        std::int64_t correct = 0, seen = 0, forwards = 0;
        double loss_sum = 0.0, nfe_sum = 0.0;
        for (std::int64_t b = 0; b < train.size(); b += opt.batch_size) {
            std::vector<std::int64_t> idx(
                order.begin() + b,
                order.begin() + std::min<std::int64_t>(b + opt.batch_size, train.size()));
            Dataset batch = train.gather(idx);
            try {
                adam.zero_grad();
                bool have_z0 = false;
                Tensor z0 = initial_state(m, si, batch.size(), &have_z0);
                ForwardRecord rec;
                Tensor logits, loss;
                if (opt.use_adjoint && m.config().kind != ModelKind::deq) {
                    // forward untaped; gradients come from the reverse-time solve
                    rec = m.forward(batch.images, have_z0 ? &z0 : nullptr, false, drng);
                    Tensor z_leaf = rec.z_final.detach();
                    z_leaf.set_requires_grad(true);
                    Tape tape;
                    TapeScope scope(tape);
                    logits = m.classify(z_leaf);
                    loss = model_loss(logits, batch.labels);
                    tape.backward(loss);
                    Tensor dLdzT = Tensor::from(z_leaf.shape(), z_leaf.grad());
                    AdjointResult adj = adjoint_backward(m, rec, dLdzT, m.config().solver);
                    accumulate_theta_grads(m, adj.grad_theta);
                    grad_route_to_extractor(m, batch.images, adj.grad_x);
                } else {
                    Tape tape;
                    TapeScope scope(tape);
                    rec = m.forward(batch.images, have_z0 ? &z0 : nullptr, false, drng);
                    logits = m.classify(rec.z_final);
                    loss = model_loss(logits, batch.labels);
                    tape.backward(loss);
                    if (m.config().kind == ModelKind::deq)
                        m.deq_backward(rec, rec.condition, tape);
                }
                adam.step();
                if (si && m.config().kind == ModelKind::homo_ode)
                    maybe_update_init(*si, rec.z_final.detach());
                loss_sum += loss.item() * static_cast<double>(batch.size());
                correct += count_correct(logits, batch.labels);
                seen += batch.size();
                nfe_sum += static_cast<double>(rec.nfe);
                ++forwards;
            } catch (const NumericError& e) {
                ++log.skipped_batches;
                std::cerr << "train_loop: skipping batch at epoch " << epoch << ": " << e.what()
                          << "\n";
            }
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        MetricRow tr;
        tr.epoch = epoch;
        tr.split = "train";
        tr.accuracy = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
        tr.mean_nfe = forwards ? nfe_sum / static_cast<double>(forwards) : 0.0;
        tr.loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        tr.wall_time_s = elapsed;
        log.append(tr);
        if (opt.eval_each_epoch && test.size() > 0) {
            EvalResult ev = evaluate(m, test, opt.batch_size, si);
            MetricRow te;
            te.epoch = epoch;
            te.split = "test";
            te.accuracy = ev.accuracy;
            te.mean_nfe = ev.mean_nfe;
            te.loss = ev.loss;
            te.wall_time_s =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            log.append(te);
        }
        if (opt.verbose) {
            const auto& last = log.rows.back();
            std::cerr << "epoch " << epoch << " " << last.split << " acc " << last.accuracy
                      << " loss " << last.loss << " nfe " << last.mean_nfe << "\n";
        }
    }
    return log;
}

}  // namespace homoode
