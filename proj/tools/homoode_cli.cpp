#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>

#include "homoode/checkpoint.hpp"
#include "homoode/config.hpp"
#include "homoode/data.hpp"
#include "homoode/equilibrium.hpp"
#include "homoode/homotopy.hpp"
#include "homoode/model.hpp"

namespace {

using namespace homoode;

std::string fnv_hex(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

HomotopyProblem build_equation(const std::string& name, double z0, HomotopyKind kind) {
    if (name == "benchmark") return benchmark_equation(z0, kind);
    if (name.rfind("linear:c=", 0) == 0) {
        const double c = std::stod(name.substr(9));
        HomotopyProblem p;
        p.residual = [c](const Eigen::VectorXd& z) {
            return Eigen::VectorXd::Constant(1, z[0] - c).eval();
        };
        p.jacobian = [](const Eigen::VectorXd&) {
            return Eigen::MatrixXd::Identity(1, 1).eval();
        };
        p.z0 = Eigen::VectorXd::Constant(1, z0);
        p.kind = kind;
        return p;
    }
    if (name == "cubic") {
        HomotopyProblem p;
        p.residual = [](const Eigen::VectorXd& z) {
            return Eigen::VectorXd::Constant(1, z[0] * z[0] * z[0] - 2.0 * z[0] - 5.0).eval();
        };
        p.jacobian = [](const Eigen::VectorXd& z) {
            return Eigen::MatrixXd::Constant(1, 1, 3.0 * z[0] * z[0] - 2.0).eval();
        };
        p.z0 = Eigen::VectorXd::Constant(1, z0);
        p.kind = kind;
        return p;
    }
    throw ConfigError("unknown equation: " + name);
}

int cmd_solve(const std::string& equation, const std::string& method, double z0, double atol,
              double rtol, double velocity, const std::string& trace_path) {
    SolverConfig scfg;
    scfg.atol = atol;
    scfg.rtol = rtol;
    const std::string hash =
        fnv_hex("solve;" + equation + ";" + method + ";" + std::to_string(z0) + ";" +
                std::to_string(atol) + ";" + std::to_string(rtol) + ";" + std::to_string(velocity));

    if (method == "newton") {
        HomotopyProblem p = build_equation(equation, z0, HomotopyKind::newton);
        EquilibriumProblem ep;
        ep.f = [&](const Eigen::VectorXd& z) { return (z - p.residual(z)).eval(); };
        ep.tol = 1e-10;
        ep.max_iter = 100;
        EqResult r = newton_solve(ep, p.z0);
        std::cout << "root " << r.z_star[0] << "\nresidual " << p.residual(r.z_star).norm()
                  << "\niterations " << r.iterations << "\n";
        return 0;
    }
    const HomotopyKind kind =
        method == "newton_homotopy" ? HomotopyKind::newton : HomotopyKind::fixed_point;
    if (method != "fixed_point" && method != "newton_homotopy")
        throw ConfigError("unknown method: " + method);
    HomotopyProblem p = build_equation(equation, z0, kind);
    PathOptions opt;
    opt.velocity = velocity;
    TraceResult r = trace_zero_path(p, scfg, opt);
    std::cout << "root " << r.solution[0] << "\nresidual " << p.residual(r.solution).norm()
              << "\nnfe " << r.nfe << "\n";
    if (!trace_path.empty()) {
        std::ofstream f(trace_path);
        if (!f) throw IoError("cannot open " + trace_path);
        f << "# config " << hash << "\n";
        f << "s,lambda";
        for (Eigen::Index i = 0; i < p.z0.size(); ++i) f << ",z" << i;
        f << ",residual\n";
        f.precision(12);
        for (const auto& st : r.trace) {
            f << st.s << "," << st.lambda;
            for (Eigen::Index i = 0; i < st.z.size(); ++i) f << "," << st.z[i];
            f << "," << p.residual(st.z).norm() << "\n";
        }
    }
    return 0;
}

int cmd_trace_experiment(const std::string& experiment, const std::string& out) {
    std::ofstream f(out);
    if (!f) throw IoError("cannot open " + out);
    f.precision(12);
    const std::string hash = fnv_hex("trace-experiment;" + experiment);
    f << "# config " << hash << "\n";
    if (experiment == "nfe_vs_distance") {
        HomotopyProblem p = benchmark_equation(6.0, HomotopyKind::fixed_point);
        SolverConfig cfg;
        std::vector<double> distances{5.0, 1.0, 0.1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
        auto rows = nfe_vs_distance_experiment(p, distances, cfg);
        f << "inv_distance,nfe\n";
        for (const auto& row : rows) {
            if (row.ok)
                f << row.inv_distance << "," << row.nfe << "\n";
            else
                f << "# failed inv_distance=" << row.inv_distance << ": " << row.error << "\n";
        }
        return 0;
    }
    if (experiment == "velocity_invariance") {
        SolverConfig cfg;
        cfg.atol = cfg.rtol = 1e-10;
        PathOptions opt;
        opt.path_tol = 1e-12;
        const std::vector<double> vs{0.5, 1.0, 2.0};
        // z(lambda) sampled on a common grid for each velocity; the path is
        // the same geometric object, so matched-lambda states must agree.
        std::vector<double> grid;
        for (int i = 0; i <= 20; ++i) grid.push_back(i / 20.0);
        std::vector<std::vector<double>> z_at(vs.size());
        for (size_t k = 0; k < vs.size(); ++k) {
            HomotopyProblem p = benchmark_equation(6.0, HomotopyKind::fixed_point);
            PathOptions o = opt;
            o.velocity = vs[k];
            TraceResult r = trace_zero_path(p, cfg, o);
            for (double g : grid) {
                // interpolate in lambda along the recorded trace, then refine
                // onto the zero path at exactly this lambda
                double z = r.trace.back().z[0];
                for (size_t i = 1; i < r.trace.size(); ++i) {
                    const double l0 = r.trace[i - 1].lambda, l1 = r.trace[i].lambda;
                    if ((l0 <= g && g <= l1) || (l1 <= g && g <= l0)) {
                        const double w = l1 == l0 ? 0.0 : (g - l0) / (l1 - l0);
                        z = (1.0 - w) * r.trace[i - 1].z[0] + w * r.trace[i].z[0];
                        break;
                    }
                }
                for (int it = 0; it < 50; ++it) {
                    Eigen::VectorXd zv = Eigen::VectorXd::Constant(1, z);
                    const double h0 = homotopy_eval(p, zv, g)[0];
                    if (std::abs(h0) < 1e-13) break;
                    const double eps = 1e-7 * (1.0 + std::abs(z));
                    Eigen::VectorXd zp = Eigen::VectorXd::Constant(1, z + eps);
                    const double d = (homotopy_eval(p, zp, g)[0] - h0) / eps;
                    z -= h0 / d;
                }
                z_at[k].push_back(z);
            }
        }
        f << "v,lambda,z0\n";
        for (size_t k = 0; k < vs.size(); ++k)
            for (size_t i = 0; i < grid.size(); ++i)
                f << vs[k] << "," << grid[i] << "," << z_at[k][i] << "\n";
        double dev = 0.0;
        for (size_t k = 1; k < vs.size(); ++k)
            for (size_t i = 0; i < grid.size(); ++i)
                dev = std::max(dev, std::abs(z_at[k][i] - z_at[0][i]));
        f << "# max_matched_lambda_deviation," << dev << "\n";
        std::cout << "max_matched_lambda_deviation " << dev << "\n";
        return 0;
    }
    throw ConfigError("unknown experiment: " + experiment);
}

struct DataBundle {
    Dataset train, test;
};

DataBundle load_data(const RunConfig& cfg) {
    DataBundle d;
    if (cfg.dataset == "mnist") {
        const std::string dir = cfg.data_dir;
        d.train = load_mnist_idx(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte",
                                 "train");
        d.test =
            load_mnist_idx(dir + "/t2k-images-idx3-ubyte", dir + "/t2k-labels-idx1-ubyte", "test");
    } else if (cfg.dataset == "circles" || cfg.dataset == "moons") {
        auto gen = cfg.dataset == "circles" ? synth_circles : synth_moons;
        d.train = gen(cfg.synth_n, cfg.synth_noise, seed_stream(cfg.seed, "data-train")());
        d.test = gen(cfg.synth_n, cfg.synth_noise, seed_stream(cfg.seed, "data-test")());
        d.test.split = "test";
    } else {
        throw ConfigError("unknown dataset: " + cfg.dataset);
    }
    return d;
}

int cmd_train(RunConfig cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::string hash = config_hash(cfg);
    {
        std::ofstream f(out_dir + "/config.resolved.txt");
        if (!f) throw IoError("cannot write resolved config");
        f << "# config " << hash << "\n" << resolved_config_text(cfg);
    }
    std::cout << "config " << hash << "\n";

    DataBundle data = load_data(cfg);
    ModelConfig mc = to_model_config(cfg);
    std::mt19937_64 init_rng = seed_stream(cfg.seed, "init");
    ImplicitModel model(mc, init_rng);
    SharedInit si;
    SharedInit* sip = nullptr;
    if (cfg.shared_init_on) {
        si = make_shared_init(mc.state_channels(), cfg.lr_init, cfg.update_every);
        sip = &si;
    }
    TrainOptions opt = to_train_options(cfg);
    opt.verbose = true;
    MetricLog log = train_loop(model, data.train, data.test, opt, sip);
    {
        std::ofstream f(out_dir + "/metrics.csv");
        if (!f) throw IoError("cannot write metrics.csv");
        log.write_csv(f, "config " + hash);
    }
    save_model_checkpoint(out_dir + "/checkpoint.bin", model, sip);
    if (!log.rows.empty()) {
        const auto& last = log.rows.back();
        std::cout << "final " << last.split << " accuracy " << last.accuracy << " mean_nfe "
                  << last.mean_nfe << " loss " << last.loss << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset,
             const std::string& data_dir, int batch_size, std::int64_t synth_n,
             double synth_noise, std::uint64_t seed) {
    LoadedModel lm = load_model_checkpoint(checkpoint);
    RunConfig cfg;
    cfg.dataset = dataset;
    cfg.data_dir = data_dir;
    cfg.synth_n = synth_n;
    cfg.synth_noise = synth_noise;
    cfg.seed = seed;
    DataBundle data = load_data(cfg);
    EvalResult r = evaluate(lm.model, data.test, batch_size,
                            lm.has_shared_init ? &lm.shared_init : nullptr);
    std::cout << "accuracy " << r.accuracy << "\nmean_nfe " << r.mean_nfe << "\nloss " << r.loss
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"homotopy-continuation equation solving and implicit model training"};
    app.require_subcommand(1);
    std::function<int()> run;

    auto* solve = app.add_subcommand("solve", "solve an equation by homotopy or Newton");
    {
        auto equation = std::make_shared<std::string>("benchmark");
        auto method = std::make_shared<std::string>("fixed_point");
        auto z0 = std::make_shared<double>(0.0);
        auto atol = std::make_shared<double>(1e-3);
        auto rtol = std::make_shared<double>(1e-3);
        auto velocity = std::make_shared<double>(1.0);
        auto trace = std::make_shared<std::string>();
        solve->add_option("--equation", *equation, "benchmark | linear:c=<v> | cubic");
        solve->add_option("--method", *method, "fixed_point | newton_homotopy | newton");
        solve->add_option("--z0", *z0, "starting point");
        solve->add_option("--atol", *atol);
        solve->add_option("--rtol", *rtol);
        solve->add_option("--velocity", *velocity);
        solve->add_option("--trace", *trace, "write the path trace CSV here");
        solve->callback([=, &run] {
            run = [=] {
                return cmd_solve(*equation, *method, *z0, *atol, *rtol, *velocity, *trace);
            };
        });
    }

    auto* texp = app.add_subcommand("trace-experiment", "run a homotopy path experiment");
    {
        auto experiment = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        texp->add_option("--experiment", *experiment, "nfe_vs_distance | velocity_invariance")
            ->required();
        texp->add_option("--out", *out, "output CSV")->required();
        texp->callback([=, &run] { run = [=] { return cmd_trace_experiment(*experiment, *out); }; });
    }

    auto* train = app.add_subcommand("train", "train a model");
    {
        auto model = std::make_shared<std::string>();
        auto data = std::make_shared<std::string>();
        auto config = std::make_shared<std::string>();
        auto out_dir = std::make_shared<std::string>();
        auto shared_init = std::make_shared<std::string>();
        auto epochs = std::make_shared<int>(-1);
        auto seed = std::make_shared<std::int64_t>(-1);
        auto data_dir = std::make_shared<std::string>();
        train->add_option("--model", *model, "homoode | node | anode | deq");
        train->add_option("--data", *data, "mnist | circles | moons");
        train->add_option("--config", *config, "key = value config file");
        train->add_option("--out-dir", *out_dir)->required();
        train->add_option("--shared-init", *shared_init, "on | off");
        train->add_option("--epochs", *epochs);
        train->add_option("--seed", *seed);
        train->add_option("--data-dir", *data_dir);
        train->callback([=, &run] {
            run = [=] {
                RunConfig cfg = config->empty() ? RunConfig{} : parse_config_file(*config);
                if (!model->empty()) config_apply(cfg, "model.kind", *model);
                if (!data->empty()) config_apply(cfg, "data.name", *data);
                if (!shared_init->empty()) config_apply(cfg, "shared_init.enabled", *shared_init);
                if (*epochs >= 0) cfg.epochs = *epochs;
                if (*seed >= 0) cfg.seed = static_cast<std::uint64_t>(*seed);
                if (!data_dir->empty()) cfg.data_dir = *data_dir;
                if (cfg.dataset != "mnist" && cfg.arch == "conv") cfg.arch = "mlp";
                return cmd_train(cfg, *out_dir);
            };
        });
    }

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    {
        auto checkpoint = std::make_shared<std::string>();
        auto data = std::make_shared<std::string>("mnist");
        auto data_dir = std::make_shared<std::string>("data");
        auto batch = std::make_shared<int>(64);
        auto n = std::make_shared<std::int64_t>(1024);
        auto noise = std::make_shared<double>(0.05);
        auto seed = std::make_shared<std::int64_t>(0);
        eval->add_option("--checkpoint", *checkpoint)->required();
        eval->add_option("--data", *data);
        eval->add_option("--data-dir", *data_dir);
        eval->add_option("--batch-size", *batch);
        eval->add_option("--n", *n, "synthetic test set size");
        eval->add_option("--noise", *noise, "synthetic noise level");
        eval->add_option("--seed", *seed);
        eval->callback([=, &run] {
            run = [=] {
                return cmd_eval(*checkpoint, *data, *data_dir, *batch, *n, *noise,
                                static_cast<std::uint64_t>(*seed));
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        return run();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParameterError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    }
}
