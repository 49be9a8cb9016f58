#include "homoode/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace homoode {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos;
        int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": " + v);
    }
}

std::int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
        size_t pos;
        long long r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": " + v);
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": " + v);
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ConfigError("config: bad boolean for " + key + ": " + v);
}

}  // namespace

void config_apply(RunConfig& c, const std::string& key, const std::string& value) {
    if (key == "model.kind") c.model_kind = value;
    else if (key == "model.arch") c.arch = value;
    else if (key == "model.channels") c.channels = parse_int(key, value);
    else if (key == "model.augment_dim") c.augment_dim = parse_int(key, value);
    else if (key == "model.groups") c.groups = parse_int(key, value);
    else if (key == "model.dropout_rate") c.dropout_rate = parse_double(key, value);
    else if (key == "solver.method") c.solver_method = value;
    else if (key == "solver.atol") c.atol = parse_double(key, value);
    else if (key == "solver.rtol") c.rtol = parse_double(key, value);
    else if (key == "solver.max_steps") c.max_steps = parse_int(key, value);
    else if (key == "solver.deq_max_iter") c.deq_max_iter = parse_int(key, value);
    else if (key == "solver.deq_tol") c.deq_tol = parse_double(key, value);
    else if (key == "solver.anderson_depth") c.anderson_depth = parse_int(key, value);
    else if (key == "data.name") c.dataset = value;
    else if (key == "data.dir") c.data_dir = value;
    else if (key == "data.batch_size") c.batch_size = parse_int(key, value);
    else if (key == "data.n") c.synth_n = parse_i64(key, value);
    else if (key == "data.noise") c.synth_noise = parse_double(key, value);
    else if (key == "data.augment_pad") c.augment_pad = parse_int(key, value);
    else if (key == "data.augment_flip") c.augment_flip = parse_bool(key, value);
    else if (key == "shared_init.enabled") c.shared_init_on = parse_bool(key, value);
    else if (key == "shared_init.lr_init") c.lr_init = parse_double(key, value);
    else if (key == "shared_init.update_every") c.update_every = parse_int(key, value);
    else if (key == "experiment.epochs") c.epochs = parse_int(key, value);
    else if (key == "experiment.lr") c.lr = parse_double(key, value);
    else if (key == "experiment.seed")
        c.seed = static_cast<std::uint64_t>(parse_i64(key, value));
    else if (key == "experiment.adjoint") c.use_adjoint = parse_bool(key, value);
    else throw ConfigError("config: unknown key " + key);
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " has no '='");
        config_apply(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return c;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

std::string resolved_config_text(const RunConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "data.augment_flip = " << (c.augment_flip ? "on" : "off") << "\n"
       << "data.augment_pad = " << c.augment_pad << "\n"
       << "data.batch_size = " << c.batch_size << "\n"
       << "data.dir = " << c.data_dir << "\n"
       << "data.n = " << c.synth_n << "\n"
       << "data.name = " << c.dataset << "\n"
       << "data.noise = " << c.synth_noise << "\n"
       << "experiment.adjoint = " << (c.use_adjoint ? "on" : "off") << "\n"
       << "experiment.epochs = " << c.epochs << "\n"
       << "experiment.lr = " << c.lr << "\n"
       << "experiment.seed = " << c.seed << "\n"
       << "model.arch = " << c.arch << "\n"
       << "model.augment_dim = " << c.augment_dim << "\n"
       << "model.channels = " << c.channels << "\n"
       << "model.dropout_rate = " << c.dropout_rate << "\n"
       << "model.groups = " << c.groups << "\n"
       << "model.kind = " << c.model_kind << "\n"
       << "shared_init.enabled = " << (c.shared_init_on ? "on" : "off") << "\n"
       << "shared_init.lr_init = " << c.lr_init << "\n"
       << "shared_init.update_every = " << c.update_every << "\n"
       << "solver.anderson_depth = " << c.anderson_depth << "\n"
       << "solver.atol = " << c.atol << "\n"
       << "solver.deq_max_iter = " << c.deq_max_iter << "\n"
       << "solver.deq_tol = " << c.deq_tol << "\n"
       << "solver.max_steps = " << c.max_steps << "\n"
       << "solver.method = " << c.solver_method << "\n"
       << "solver.rtol = " << c.rtol << "\n";
    return os.str();
}

std::string config_hash(const RunConfig& c) {
    const std::string text = resolved_config_text(c);
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

ModelConfig to_model_config(const RunConfig& c) {
    ModelConfig m;
    m.kind = model_kind_from_name(c.model_kind);
    if (c.arch == "conv") m.arch = ArchKind::conv;
    else if (c.arch == "mlp") m.arch = ArchKind::mlp;
    else throw ConfigError("config: unknown arch " + c.arch);
    m.channels = c.channels;
    m.augment_dim = m.kind == ModelKind::anode ? c.augment_dim : 0;
    m.groups = c.groups;
    m.dropout_rate = c.dropout_rate;
    if (c.dataset == "mnist") {
        m.in_channels = 1;
        m.image_hw = 28;
        m.num_classes = 10;
    } else if (c.dataset == "circles" || c.dataset == "moons") {
        m.arch = ArchKind::mlp;
        m.in_features = 2;
        m.num_classes = 2;
    } else {
        throw ConfigError("config: unknown dataset " + c.dataset);
    }
    if (c.solver_method == "dopri5") m.solver.method = OdeMethod::dopri5;
    else if (c.solver_method == "rk4") m.solver.method = OdeMethod::rk4;
    else throw ConfigError("config: unknown solver method " + c.solver_method);
    m.solver.atol = c.atol;
    m.solver.rtol = c.rtol;
    m.solver.max_steps = c.max_steps;
    m.deq_max_iter = c.deq_max_iter;
    m.deq_tol = c.deq_tol;
    m.deq_anderson_depth = c.anderson_depth;
    return m;
}

TrainOptions to_train_options(const RunConfig& c) {
    TrainOptions o;
    o.epochs = c.epochs;
    o.batch_size = c.batch_size;
    o.lr = c.lr;
    o.dropout_rate = c.dropout_rate;
    o.seed = c.seed;
    o.use_adjoint = c.use_adjoint;
    return o;
}

}  // namespace homoode
