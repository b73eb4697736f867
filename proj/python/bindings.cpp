#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "metacore/coreset.hpp"
#include "metacore/errors.hpp"
#include "metacore/experiments.hpp"
#include "metacore/lqr.hpp"
#include "metacore/meta_trainer.hpp"
#include "metacore/task_generators.hpp"
#include "metacore/zeroth_order.hpp"

namespace py = pybind11;
using namespace metacore;

namespace {

GradientTable table_from(const std::vector<Matrix>& grads) {
    GradientTable t;
    t.grads = grads;
    return t;
}

TaskFunction callable_task(py::function reward, Eigen::Index rows, Eigen::Index cols) {
    TaskFunction f;
    f.dims = {rows, cols};
    f.reward = [reward](const Matrix& theta) { return reward(theta).cast<double>(); };
    return f;
}

py::dict record_dict(const TrainRecord& r) {
    py::dict d;
    d["iter"] = r.iter;
    d["theta"] = r.theta;
    d["per_task_gap"] = r.per_task_gap;
    d["grad_norm_sq"] = r.grad_norm_sq;
    d["full_grad_norm_sq"] = r.full_grad_norm_sq;
    d["cum_queries"] = r.cum_queries;
    d["all_stable"] = r.all_stable;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Coreset-accelerated zeroth-order meta-learning for LQR";
    m.attr("__version__") = experiments::version_string();

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
    py::register_exception<InstabilityError>(m, "InstabilityError", PyExc_RuntimeError);
    py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);
    py::register_exception<ProbeInstabilityError>(m, "ProbeInstabilityError", PyExc_RuntimeError);
    py::register_exception<StabilityViolation>(m, "StabilityViolation", PyExc_RuntimeError);
    py::register_exception<GenerationError>(m, "GenerationError", PyExc_RuntimeError);

    // LQR ------------------------------------------------------------------
    py::class_<LqrTask>(m, "LqrTask")
        .def(py::init<Matrix, Matrix, Matrix, Matrix>(), py::arg("A"), py::arg("B"), py::arg("Q"), py::arg("R"))
        .def_property_readonly("A", &LqrTask::A)
        .def_property_readonly("B", &LqrTask::B)
        .def_property_readonly("Q", &LqrTask::Q)
        .def_property_readonly("R", &LqrTask::R)
        .def_property_readonly("state_dim", &LqrTask::state_dim)
        .def_property_readonly("input_dim", &LqrTask::input_dim)
        .def("__eq__", &LqrTask::operator==);

    py::class_<CostReport>(m, "CostReport")
        .def_readonly("value", &CostReport::value)
        .def_readonly("P", &CostReport::P)
        .def_readonly("sigma_K", &CostReport::sigma_K)
        .def_readonly("stable", &CostReport::stable);

    m.def("spectral_radius", &spectral_radius, py::arg("M"));
    m.def("stabilizes", &stabilizes, py::arg("task"), py::arg("K"));
    m.def("solve_discrete_lyapunov", &solve_discrete_lyapunov, py::arg("A_cl"), py::arg("W"));
    m.def("lqr_cost", &lqr_cost, py::arg("task"), py::arg("K"), py::arg("Sigma0"));
    m.def("exact_gradient", &exact_gradient, py::arg("task"), py::arg("K"), py::arg("Sigma0"));
    m.def("riccati_optimal", &riccati_optimal, py::arg("task"));

    // Zeroth-order estimation --------------------------------------------------
    py::class_<ZoConfig>(m, "ZoConfig")
        .def(py::init([](std::size_t n_s, double r, double eta_inn, std::uint64_t seed) {
                 return ZoConfig{n_s, r, eta_inn, seed};
             }),
             py::arg("n_s") = 100, py::arg("r") = 1e-2, py::arg("eta_inn") = 0.0, py::arg("seed") = 0)
        .def_readwrite("n_s", &ZoConfig::n_s)
        .def_readwrite("r", &ZoConfig::r)
        .def_readwrite("eta_inn", &ZoConfig::eta_inn)
        .def_readwrite("seed", &ZoConfig::seed);

    py::class_<GradientEstimate>(m, "GradientEstimate")
        .def_readonly("g", &GradientEstimate::g)
        .def_readonly("queries_used", &GradientEstimate::queries_used)
        .def_readonly("failures", &GradientEstimate::failures);

    m.def(
        "zo2p",
        [](py::function reward, const Matrix& theta, const ZoConfig& cfg) {
            return zo2p(callable_task(reward, theta.rows(), theta.cols()), theta, cfg);
        },
        py::arg("reward"), py::arg("theta"), py::arg("cfg"),
        "Two-point estimate of the gradient of a Python reward callable. Return -inf for invalid points.");
    m.def(
        "zo2p_lqr",
        [](const LqrTask& task, const Matrix& K, const ZoConfig& cfg) {
            const Matrix S0 = Matrix::Identity(task.state_dim(), task.state_dim());
            return zo2p(lqr_task_function(task, S0), K, cfg);
        },
        py::arg("task"), py::arg("K"), py::arg("cfg"),
        "Estimate of the reward gradient (minus the cost gradient) of an LQR task, Sigma0 = I.");

    // Coreset selection ------------------------------------------------------
    py::class_<Coreset>(m, "Coreset")
        .def(py::init([](std::vector<std::size_t> indices, std::vector<std::size_t> weights, std::size_t M) {
                 Coreset c{std::move(indices), std::move(weights), M};
                 c.validate();
                 return c;
             }),
             py::arg("indices"), py::arg("weights"), py::arg("pool_size"))
        .def_readonly("indices", &Coreset::indices)
        .def_readonly("weights", &Coreset::weights)
        .def_readonly("pool_size", &Coreset::pool_size)
        .def("__repr__", [](const Coreset& c) {
            std::ostringstream os;
            os << "Coreset(indices=" << py::repr(py::cast(c.indices)).cast<std::string>()
               << ", weights=" << py::repr(py::cast(c.weights)).cast<std::string>() << ")";
            return os.str();
        });

    m.def("pairwise_distances", [](const std::vector<Matrix>& g) { return pairwise_distances(table_from(g)); },
          py::arg("gradients"));
    m.def("residual", &residual, py::arg("D"), py::arg("selected"));
    m.def("greedy_select", &greedy_select, py::arg("D"), py::arg("L"));
    m.def("allocate_weights", &allocate_weights, py::arg("D"), py::arg("indices"));
    m.def(
        "brute_force_select",
        [](const Matrix& D, std::size_t L) {
            const auto r = brute_force_select(D, L);
            return py::make_tuple(r.indices, r.residual);
        },
        py::arg("D"), py::arg("L"));

    // Pools and training -------------------------------------------------------
    py::class_<LqrPool>(m, "LqrPool")
        .def_readonly("nominal", &LqrPool::nominal)
        .def_readonly("tasks", &LqrPool::tasks);

    m.def(
        "generate_lqr_pool",
        [](std::size_t M, Eigen::Index d1, Eigen::Index d2, std::vector<double> eps, std::uint64_t seed) {
            if (eps.size() == 1) eps.assign(4, eps[0]);
            if (eps.size() != 4) throw ParameterError("eps_het takes 1 or 4 values");
            PoolSpec spec;
            spec.M = M;
            spec.d1 = d1;
            spec.d2 = d2;
            spec.eps = {eps[0], eps[1], eps[2], eps[3]};
            spec.seed = seed;
            return generate_lqr_pool(spec);
        },
        py::arg("M") = 40, py::arg("d1") = 3, py::arg("d2") = 2,
        py::arg("eps_het") = std::vector<double>{0.05}, py::arg("seed") = 0);

    m.def(
        "train_lqr",
        [](const std::vector<LqrTask>& tasks, const Matrix& K0, const std::string& mode, std::size_t L,
           std::size_t n_iters, double eta_out, const ZoConfig& zo, const std::string& grad_mode,
           bool shared_probes) {
            if (tasks.empty()) throw ParameterError("task list is empty");
            const Eigen::Index d1 = tasks.front().state_dim();
            const auto fns = lqr_task_functions(tasks, Matrix::Identity(d1, d1));
            TrainConfig cfg;
            cfg.mode = parse_selection_mode(mode);
            cfg.grad_mode = parse_grad_mode(grad_mode);
            cfg.L = L;
            cfg.n_iters = n_iters;
            cfg.eta_out = eta_out;
            cfg.zo = zo;
            cfg.shared_probe_streams = shared_probes;
            TrainResult res;
            {
                py::gil_scoped_release release;
                res = train(fns, K0, cfg);
            }
            py::dict out;
            py::list records;
            for (const auto& r : res.records) records.append(record_dict(r));
            out["records"] = records;
            out["theta_final"] = res.theta_final;
            out["coreset"] = res.coreset;
            out["selection_queries"] = res.selection_queries;
            out["total_queries"] = res.total_queries;
            out["initial_gap"] = res.initial_gap;
            return out;
        },
        py::arg("tasks"), py::arg("K0"), py::arg("mode") = "coreset", py::arg("L") = 10,
        py::arg("n_iters") = 100, py::arg("eta_out") = 1e-2, py::arg("zo") = ZoConfig{},
        py::arg("grad_mode") = "zo2p", py::arg("shared_probes") = false,
        "Meta-train a gain on LQR tasks (Sigma0 = I). mode: coreset, full, unweighted or random.");

    m.def(
        "run_cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "metacore");
            std::ostringstream out, err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = experiments::run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run a metacore subcommand; returns (exit_code, stdout, stderr).");
}
