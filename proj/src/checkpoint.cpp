#include "homoode/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace homoode {

namespace {

template <class T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& f, const std::string& what) {
    T v;
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw IoError("checkpoint: truncated file while reading " + what);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path + " for writing");
    f.write(kCheckpointMagic, 4);
    write_pod<std::uint32_t>(f, kCheckpointVersion);
    write_pod<std::uint64_t>(f, tensors.size());
    for (const auto& [name, t] : tensors) {
        write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(t.ndim()));
        for (auto d : t.shape()) write_pod<std::int64_t>(f, d);
        f.write(reinterpret_cast<const char*>(t.value().data()),
                static_cast<std::streamsize>(t.value().size() * sizeof(double)));
    }
    if (!f) throw IoError("checkpoint: write failed for " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic in " + path);
    const auto version = read_pod<std::uint32_t>(f, "version");
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: version " + std::to_string(version) + " unsupported");
    const auto count = read_pod<std::uint64_t>(f, "tensor count");
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint32_t>(f, "name length");
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        if (!f) throw IoError("checkpoint: truncated name");
        const auto ndim = read_pod<std::uint32_t>(f, "ndim");
        Shape shape(ndim);
        for (auto& d : shape) {
            d = read_pod<std::int64_t>(f, "dim");
            if (d <= 0) throw FormatError("checkpoint: non-positive dimension in " + name);
        }
        std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
        f.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!f) throw IoError("checkpoint: truncated tensor data for " + name);
        out.emplace_back(std::move(name), Tensor::from(shape, std::move(data)));
    }
    return out;
}

bool checkpoint_has(const std::vector<std::pair<std::string, Tensor>>& tensors,
                    const std::string& name) {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

Tensor checkpoint_get(const std::vector<std::pair<std::string, Tensor>>& tensors,
                      const std::string& name) {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw FormatError("checkpoint: no tensor named " + name);
}

void save_model_checkpoint(const std::string& path, const ImplicitModel& m,
                           const SharedInit* si) {
    const ModelConfig& c = m.config();
    std::vector<std::pair<std::string, Tensor>> out;
    auto meta = [&](const std::string& name, double v) {
        out.emplace_back("meta." + name, Tensor::scalar(v));
    };
    meta("kind", static_cast<double>(static_cast<int>(c.kind)));
    meta("arch", static_cast<double>(static_cast<int>(c.arch)));
    meta("in_channels", c.in_channels);
    meta("image_hw", c.image_hw);
    meta("in_features", c.in_features);
    meta("channels", c.channels);
    meta("augment_dim", c.augment_dim);
    meta("num_classes", c.num_classes);
    meta("groups", c.groups);
    meta("solver.method", static_cast<double>(static_cast<int>(c.solver.method)));
    meta("solver.atol", c.solver.atol);
    meta("solver.rtol", c.solver.rtol);
    meta("solver.max_steps", static_cast<double>(c.solver.max_steps));
    meta("deq_max_iter", c.deq_max_iter);
    meta("deq_tol", c.deq_tol);
    meta("deq_anderson_depth", c.deq_anderson_depth);
    for (const auto& [name, t] : m.params()) out.emplace_back(name, t);
    if (si) {
        out.emplace_back(kSharedInitName, si->z_tilde);
        meta("shared_init.lr_init", si->lr_init);
        meta("shared_init.update_every", si->update_every);
    }
    save_checkpoint(path, out);
}

LoadedModel load_model_checkpoint(const std::string& path) {
    auto tensors = load_checkpoint(path);
    auto meta = [&](const std::string& name) {
        return checkpoint_get(tensors, "meta." + name).item();
    };
    ModelConfig c;
    c.kind = static_cast<ModelKind>(static_cast<int>(meta("kind")));
    c.arch = static_cast<ArchKind>(static_cast<int>(meta("arch")));
    c.in_channels = static_cast<int>(meta("in_channels"));
    c.image_hw = static_cast<int>(meta("image_hw"));
    c.in_features = static_cast<int>(meta("in_features"));
    c.channels = static_cast<int>(meta("channels"));
    c.augment_dim = static_cast<int>(meta("augment_dim"));
    c.num_classes = static_cast<int>(meta("num_classes"));
    c.groups = static_cast<int>(meta("groups"));
    c.solver.method = static_cast<OdeMethod>(static_cast<int>(meta("solver.method")));
    c.solver.atol = meta("solver.atol");
    c.solver.rtol = meta("solver.rtol");
    c.solver.max_steps = static_cast<std::int64_t>(meta("solver.max_steps"));
    c.deq_max_iter = static_cast<int>(meta("deq_max_iter"));
    c.deq_tol = meta("deq_tol");
    c.deq_anderson_depth = static_cast<int>(meta("deq_anderson_depth"));
    std::mt19937_64 rng(0);
    LoadedModel lm{ImplicitModel(c, rng)};
    for (auto& [name, t] : lm.model.params()) t.value() = checkpoint_get(tensors, name).value();
    if (checkpoint_has(tensors, kSharedInitName)) {
        lm.has_shared_init = true;
        Tensor zt = checkpoint_get(tensors, kSharedInitName);
        lm.shared_init = make_shared_init(zt.dim(2), meta("shared_init.lr_init"),
                                          static_cast<int>(meta("shared_init.update_every")));
        lm.shared_init.z_tilde.value() = zt.value();
    }
    return lm;
}

}  // namespace homoode
