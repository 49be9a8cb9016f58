// Python bindings for the core solvers, datasets and the implicit model.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

#include "homoode/data.hpp"
#include "homoode/equilibrium.hpp"
#include "homoode/homotopy.hpp"
#include "homoode/model.hpp"
#include "homoode/shared_init.hpp"

namespace py = pybind11;
using namespace homoode;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    Shape shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
    std::vector<double> vals(a.data(), a.data() + a.size());
    return Tensor::from(shape, std::move(vals));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.value().begin(), t.value().end(), out.mutable_data());
    return out;
}

HomotopyKind kind_from_name(const std::string& s) {
    if (s == "fixed_point") return HomotopyKind::fixed_point;
    if (s == "newton") return HomotopyKind::newton;
    throw ParameterError("unknown homotopy kind: " + s);
}

SolverConfig make_cfg(double tol, std::int64_t max_steps) {
    SolverConfig cfg;
    cfg.atol = cfg.rtol = tol;
    cfg.max_steps = max_steps;
    return cfg;
}

ModelConfig model_config_from_kwargs(const std::string& kind, const std::string& arch,
                                     int channels, int num_classes, int in_channels,
                                     int image_hw, int in_features, int groups, int augment_dim,
                                     double solver_tol) {
    ModelConfig mc;
    mc.kind = model_kind_from_name(kind);
    mc.arch = arch == "mlp" ? ArchKind::mlp : ArchKind::conv;
    mc.channels = channels;
    mc.num_classes = num_classes;
    mc.in_channels = in_channels;
    mc.image_hw = image_hw;
    mc.in_features = in_features;
    mc.groups = groups;
    mc.augment_dim = augment_dim;
    mc.solver.atol = mc.solver.rtol = solver_tol;
    return mc;
}

}  // namespace

PYBIND11_MODULE(_homoode, m) {
    m.doc() = "homotopy-continuation solvers and implicit models";

    py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def(
        "solve",
        [](const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& residual,
           const Eigen::VectorXd& z0, const std::string& kind, double tol,
           std::int64_t max_steps) {
            HomotopyProblem p;
            p.residual = residual;
            p.z0 = z0;
            p.kind = kind_from_name(kind);
            auto res = trace_zero_path(p, make_cfg(tol, max_steps));
            py::list trace;
            for (const auto& st : res.trace) trace.append(py::make_tuple(st.lambda, st.z));
            return py::make_tuple(res.solution, res.nfe, trace);
        },
        py::arg("residual"), py::arg("z0"), py::arg("kind") = "fixed_point",
        py::arg("tol") = 1e-8, py::arg("max_steps") = 100000,
        "Trace the zero path of the homotopy from z0; returns (solution, nfe, trace).");

    m.def(
        "solve_benchmark_equation",
        [](double z0, const std::string& kind, double tol) {
            auto res = trace_zero_path(benchmark_equation(z0, kind_from_name(kind)),
                                       make_cfg(tol, 100000));
            return py::make_tuple(res.solution[0], res.nfe);
        },
        py::arg("z0") = 6.0, py::arg("kind") = "fixed_point", py::arg("tol") = 1e-8);

    m.def(
        "newton_solve",
        [](const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
           const Eigen::VectorXd& z0, double tol, int max_iter) {
            EquilibriumProblem p;
            p.f = f;
            p.tol = tol;
            p.max_iter = max_iter;
            auto r = newton_solve(p, z0);
            return py::make_tuple(r.z_star, r.iterations, r.residual);
        },
        py::arg("f"), py::arg("z0"), py::arg("tol") = 1e-8, py::arg("max_iter") = 100,
        "Newton solve of z = f(z); returns (z_star, iterations, residual).");

    m.def(
        "fixed_point_solve",
        [](const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
           const Eigen::VectorXd& z0, double tol, int max_iter, int anderson_depth) {
            EquilibriumProblem p;
            p.f = f;
            p.tol = tol;
            p.max_iter = max_iter;
            auto r = fixed_point_iterate(p, z0, anderson_depth);
            return py::make_tuple(r.z_star, r.iterations, r.residual);
        },
        py::arg("f"), py::arg("z0"), py::arg("tol") = 1e-8, py::arg("max_iter") = 200,
        py::arg("anderson_depth") = 5);

    m.def("solve_v", &solve_v, py::arg("f_norms"),
          "Velocity making the recovered lambda reach 1 at t = 1.");
    m.def("recover_lambda", &recover_lambda, py::arg("f_norms"), py::arg("v"));

    m.def(
        "nfe_vs_distance",
        [](double tol, const std::vector<double>& distances) {
            auto base = trace_zero_path(benchmark_equation(6.0), make_cfg(tol, 100000));
            HomotopyProblem p = benchmark_equation(6.0);
            p.z0 = base.solution;
            auto rows = nfe_vs_distance_experiment(p, distances, make_cfg(tol, 100000));
            py::list out;
            for (const auto& r : rows)
                out.append(py::make_tuple(r.inv_distance, r.nfe, r.ok, r.error));
            return out;
        },
        py::arg("tol") = 1e-8,
        py::arg("distances") =
            std::vector<double>{5.0, 1.0, 0.1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6});

    m.def(
        "synth_circles",
        [](std::int64_t n, double noise, std::uint64_t seed) {
            Dataset d = synth_circles(n, noise, seed);
            return py::make_tuple(array_from_tensor(d.images), d.labels);
        },
        py::arg("n"), py::arg("noise") = 0.05, py::arg("seed") = 0);

    m.def(
        "synth_moons",
        [](std::int64_t n, double noise, std::uint64_t seed) {
            Dataset d = synth_moons(n, noise, seed);
            return py::make_tuple(array_from_tensor(d.images), d.labels);
        },
        py::arg("n"), py::arg("noise") = 0.05, py::arg("seed") = 0);

    m.def(
        "load_mnist",
        [](const std::string& images_path, const std::string& labels_path) {
            Dataset d = load_mnist_idx(images_path, labels_path);
            return py::make_tuple(array_from_tensor(d.images), d.labels);
        },
        py::arg("images_path"), py::arg("labels_path"));

    py::class_<ImplicitModel>(m, "Model")
        .def(py::init([](const std::string& kind, const std::string& arch, int channels,
                         int num_classes, int in_channels, int image_hw, int in_features,
                         int groups, int augment_dim, double solver_tol, std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 return ImplicitModel(
                     model_config_from_kwargs(kind, arch, channels, num_classes, in_channels,
                                              image_hw, in_features, groups, augment_dim,
                                              solver_tol),
                     rng);
             }),
             py::arg("kind") = "homo_ode", py::arg("arch") = "conv", py::arg("channels") = 32,
             py::arg("num_classes") = 10, py::arg("in_channels") = 1, py::arg("image_hw") = 28,
             py::arg("in_features") = 2, py::arg("groups") = 8, py::arg("augment_dim") = 0,
             py::arg("solver_tol") = 1e-3, py::arg("seed") = 0)
        .def(
            "predict",
            [](ImplicitModel& self,
               const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
                NoGradScope ng;
                auto rec = self.forward(tensor_from_array(x));
                Tensor logits = self.classify(rec.z_final);
                return py::make_tuple(array_from_tensor(logits), rec.nfe);
            },
            py::arg("x"), "Forward pass; returns (logits, nfe).")
        .def(
            "fit",
            [](ImplicitModel& self,
               const py::array_t<double, py::array::c_style | py::array::forcecast>& images,
               const std::vector<int>& labels, int epochs, int batch_size, double lr,
               bool shared_init, std::uint64_t seed) {
                Dataset train;
                train.images = tensor_from_array(images);
                train.labels = labels;
                train.num_classes = self.config().num_classes;
                Dataset empty;
                empty.images = Tensor::zeros({0, train.images.dim(1)});
                empty.num_classes = train.num_classes;
                TrainOptions opt;
                opt.epochs = epochs;
                opt.batch_size = batch_size;
                opt.lr = lr;
                opt.seed = seed;
                opt.eval_each_epoch = false;
                SharedInit si = make_shared_init(self.config().state_channels());
                MetricLog log =
                    train_loop(self, train, empty, opt, shared_init ? &si : nullptr);
                py::list rows;
                for (const auto& r : log.rows)
                    rows.append(py::dict(py::arg("epoch") = r.epoch, py::arg("split") = r.split,
                                         py::arg("accuracy") = r.accuracy,
                                         py::arg("mean_nfe") = r.mean_nfe,
                                         py::arg("loss") = r.loss));
                return rows;
            },
            py::arg("images"), py::arg("labels"), py::arg("epochs") = 10,
            py::arg("batch_size") = 64, py::arg("lr") = 1e-3, py::arg("shared_init") = false,
            py::arg("seed") = 0,
            "Adam training on the given data; returns per-epoch metric rows.");
}
