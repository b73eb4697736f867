#include "metacore/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "metacore/errors.hpp"
#include "metacore/rng.hpp"

namespace metacore::experiments {
namespace {

constexpr std::uint64_t kUnseenTag = 0xC0FFEE;
constexpr std::uint64_t kBaselineTag = 0xBA5E;
constexpr std::uint64_t kDiagTag = 0xD1A6;
constexpr int kMaxBaselineDraws = 100;

double median(std::vector<double> v) {
    if (v.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void require(bool ok, const std::string& what) {
    if (!ok) {
        throw ParameterError(what);
    }
}

}  // namespace

std::string to_string(Command cmd) {
    switch (cmd) {
        case Command::run_lqr: return "run-lqr";
        case Command::run_synthetic: return "run-synthetic";
        case Command::estimator_diag: return "estimator-diag";
        case Command::sample_complexity: return "sample-complexity";
        case Command::meta_test: return "meta-test";
    }
    return "?";
}

void Options::validate() const {
    require(tasks >= 1, "--tasks must be at least 1");
    require(coreset >= 1, "--coreset must be at least 1");
    require(n_samples >= 1, "--n-samples must be at least 1");
    require(radius > 0.0 && std::isfinite(radius), "--radius must be positive");
    require(eta_inn >= 0.0 && std::isfinite(eta_inn), "--eta-inn must be nonnegative");
    require(eta_out > 0.0 && std::isfinite(eta_out), "--eta-out must be positive");
    require(iters >= 1, "--iters must be at least 1");
    require(!modes.empty(), "--modes must name at least one mode");
    for (const auto& m : modes) {
        parse_selection_mode(m);
    }
    parse_grad_mode(grad_mode);
    require(eps_het.A >= 0.0 && eps_het.B >= 0.0 && eps_het.Q >= 0.0 && eps_het.R >= 0.0,
            "--eps-het entries must be nonnegative");
    require(dims[0] >= 1 && dims[1] >= 1, "--dims entries must be positive");
    require(init == "zero" || init == "nominal", "--init must be 'zero' or 'nominal'");
    require(alpha >= 0.0, "--alpha must be nonnegative");
    require(curvature_min > 0.0 && curvature_max >= curvature_min,
            "curvature range must satisfy 0 < min <= max");
    require(task == "lqr" || task == "constant", "--task must be 'lqr' or 'constant'");
    require(trials >= 1, "--trials must be at least 1");
    for (const auto f : eps_grid) {
        require(f > 0.0, "--eps-grid entries must be positive");
    }
    require(test_tasks >= 1, "--test-tasks must be at least 1");
    require(eta_adapt >= 0.0, "--eta-adapt must be nonnegative");
    require(baseline_scale > 0.0, "--baseline-scale must be positive");
}

Options defaults_for(Command cmd) {
    Options o;
    switch (cmd) {
        case Command::run_synthetic:
            o.tasks = 20;
            o.coreset = 5;
            o.n_samples = 1000;
            o.radius = 1e-2;
            o.eta_inn = 0.0;
            o.eta_out = 0.25;
            o.modes = {"full", "coreset"};
            o.dims = {4, 1};
            break;
        case Command::estimator_diag:
            o.tasks = 1;
            o.radius = 1e-3;
            break;
        case Command::sample_complexity:
            o.modes = {"full", "coreset"};
            break;
        case Command::run_lqr:
        case Command::meta_test:
            break;
    }
    return o;
}

nlohmann::json options_to_json(const Options& o) {
    return {
        {"seed", o.seed},
        {"out", o.out},
        {"tasks", o.tasks},
        {"coreset", o.coreset},
        {"n-samples", o.n_samples},
        {"radius", o.radius},
        {"eta-inn", o.eta_inn},
        {"eta-out", o.eta_out},
        {"iters", o.iters},
        {"modes", o.modes},
        {"grad-mode", o.grad_mode},
        {"eps-het", {o.eps_het.A, o.eps_het.B, o.eps_het.Q, o.eps_het.R}},
        {"dims", {o.dims[0], o.dims[1]}},
        {"init", o.init},
        {"shared-probes", o.shared_probes},
        {"alpha", o.alpha},
        {"center-radius", o.center_radius},
        {"frequency-norm", o.frequency_norm},
        {"curvature-min", o.curvature_min},
        {"curvature-max", o.curvature_max},
        {"theta0", o.theta0},
        {"task", o.task},
        {"ns-grid", o.ns_grid},
        {"r-grid", o.r_grid},
        {"r-sweep-samples", o.r_sweep_samples},
        {"trials", o.trials},
        {"eps-grid", o.eps_grid},
        {"run-dir", o.run_dir},
        {"from-mode", o.from_mode},
        {"test-tasks", o.test_tasks},
        {"adapt-steps", o.adapt_steps},
        {"eta-adapt", o.eta_adapt},
        {"baseline-scale", o.baseline_scale},
    };
}

void apply_config(Options& o, const nlohmann::json& config) {
    if (!config.is_object()) {
        throw ParameterError("config file must hold a JSON object");
    }
    try {
        for (const auto& [key, value] : config.items()) {
            if (key == "seed") o.seed = value.get<std::uint64_t>();
            else if (key == "out") o.out = value.get<std::string>();
            else if (key == "tasks") o.tasks = value.get<std::size_t>();
            else if (key == "coreset") o.coreset = value.get<std::size_t>();
            else if (key == "n-samples") o.n_samples = value.get<std::size_t>();
            else if (key == "radius") o.radius = value.get<double>();
            else if (key == "eta-inn") o.eta_inn = value.get<double>();
            else if (key == "eta-out") o.eta_out = value.get<double>();
            else if (key == "iters") o.iters = value.get<std::size_t>();
            else if (key == "modes") o.modes = value.get<std::vector<std::string>>();
            else if (key == "grad-mode") o.grad_mode = value.get<std::string>();
            else if (key == "eps-het") {
                if (value.is_number()) {
                    const double e = value.get<double>();
                    o.eps_het = {e, e, e, e};
                } else {
                    const auto v = value.get<std::vector<double>>();
                    require(v.size() == 4, "eps-het needs 4 entries");
                    o.eps_het = {v[0], v[1], v[2], v[3]};
                }
            } else if (key == "dims") {
                const auto v = value.get<std::vector<long>>();
                require(v.size() == 2, "dims needs 2 entries");
                o.dims = {v[0], v[1]};
            } else if (key == "init") o.init = value.get<std::string>();
            else if (key == "shared-probes") o.shared_probes = value.get<bool>();
            else if (key == "alpha") o.alpha = value.get<double>();
            else if (key == "center-radius") o.center_radius = value.get<double>();
            else if (key == "frequency-norm") o.frequency_norm = value.get<double>();
            else if (key == "curvature-min") o.curvature_min = value.get<double>();
            else if (key == "curvature-max") o.curvature_max = value.get<double>();
            else if (key == "theta0") o.theta0 = value.get<double>();
            else if (key == "task") o.task = value.get<std::string>();
            else if (key == "ns-grid") o.ns_grid = value.get<std::vector<std::size_t>>();
            else if (key == "r-grid") o.r_grid = value.get<std::vector<double>>();
            else if (key == "r-sweep-samples") o.r_sweep_samples = value.get<std::size_t>();
            else if (key == "trials") o.trials = value.get<std::size_t>();
            else if (key == "eps-grid") o.eps_grid = value.get<std::vector<double>>();
            else if (key == "run-dir") o.run_dir = value.get<std::string>();
            else if (key == "from-mode") o.from_mode = value.get<std::string>();
            else if (key == "test-tasks") o.test_tasks = value.get<std::size_t>();
            else if (key == "adapt-steps") o.adapt_steps = value.get<std::size_t>();
            else if (key == "eta-adapt") o.eta_adapt = value.get<double>();
            else if (key == "baseline-scale") o.baseline_scale = value.get<double>();
            else throw ParameterError("unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string("bad config value: ") + e.what());
    }
}

TrainConfig train_config(const Options& o, SelectionMode mode) {
    TrainConfig cfg;
    cfg.eta_out = o.eta_out;
    cfg.n_iters = o.iters;
    cfg.zo.n_s = o.n_samples;
    cfg.zo.r = o.radius;
    cfg.zo.eta_inn = o.eta_inn;
    cfg.zo.seed = o.seed;
    cfg.mode = mode;
    cfg.L = o.coreset;
    cfg.grad_mode = parse_grad_mode(o.grad_mode);
    cfg.shared_probe_streams = o.shared_probes;
    return cfg;
}

// ---------------------------------------------------------------------------

LqrSetup make_lqr_setup(const Options& o) {
    PoolSpec spec;
    spec.M = o.tasks;
    spec.d1 = o.dims[0];
    spec.d2 = o.dims[1];
    spec.eps = o.eps_het;
    spec.seed = o.seed;
    LqrPool pool = generate_lqr_pool(spec);
    Matrix Sigma0 = Matrix::Identity(spec.d1, spec.d1);
    std::vector<TaskFunction> tasks = lqr_task_functions(pool.tasks, Sigma0);
    Matrix theta0 = o.init == "nominal" ? riccati_optimal(pool.nominal)
                                        : Matrix(Matrix::Zero(spec.d2, spec.d1));
    if (!all_tasks_stable(tasks, theta0)) {
        throw GenerationError("starting gain ('" + o.init +
                              "') does not stabilize every pool task; reduce eps_het");
    }
    return LqrSetup{spec, std::move(pool), std::move(Sigma0), std::move(tasks), std::move(theta0)};
}

std::vector<ModeRun> run_lqr_modes(const Options& o, const LqrSetup& setup) {
    std::vector<ModeRun> runs;
    for (const auto& name : o.modes) {
        const SelectionMode mode = parse_selection_mode(name);
        runs.push_back({mode, train(setup.tasks, setup.theta0, train_config(o, mode))});
    }
    return runs;
}

double mean(const std::vector<double>& v) {
    if (v.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> mean_gap_curve(const TrainResult& result) {
    std::vector<double> curve;
    curve.reserve(result.records.size());
    for (const auto& rec : result.records) {
        curve.push_back(mean(rec.per_task_gap));
    }
    return curve;
}

std::optional<std::size_t> queries_to_reach(const TrainResult& result, double target) {
    for (const auto& rec : result.records) {
        if (mean(rec.per_task_gap) <= target) {
            return rec.cum_queries;
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------

SyntheticRun run_synthetic_mode(const Options& o, SelectionMode mode) {
    SyntheticTaskSpec spec;
    spec.dims = {o.dims[0], o.dims[1]};
    spec.center_radius = o.center_radius;
    spec.curvature_min = o.curvature_min;
    spec.curvature_max = o.curvature_max;
    spec.alpha = o.alpha;
    const double per_entry = o.frequency_norm / std::sqrt(static_cast<double>(spec.dims.size()));
    spec.frequency = Matrix::Constant(spec.dims.rows, spec.dims.cols, per_entry);

    const auto pool = generate_synthetic_pool(spec, o.tasks, o.seed);
    const auto tasks = synthetic_task_functions(pool);
    const Matrix theta0 = Matrix::Constant(spec.dims.rows, spec.dims.cols, o.theta0);

    SyntheticRun run;
    run.result = train(tasks, theta0, train_config(o, mode));
    run.bias_snapshot = selection_bias_snapshot(tasks, run.result.coreset, theta0);
    double total = 0.0;
    for (std::size_t n = 0; n < run.result.records.size(); ++n) {
        const Matrix& theta = n == 0 ? theta0 : run.result.records[n - 1].theta;
        const double g2 = full_pool_oracle_gradient(tasks, theta, o.eta_inn).squaredNorm();
        total += g2;
        run.grad_norm_sq.push_back(g2);
        run.ergodic_avg.push_back(total / static_cast<double>(n + 1));
    }
    return run;
}

// ---------------------------------------------------------------------------

std::vector<DiagRow> estimator_diag(const Options& o) {
    TaskFunction f;
    Matrix theta;
    if (o.task == "constant") {
        f.dims = {o.dims[1], o.dims[0]};
        f.reward = [](const Matrix&) { return 1.0; };
        f.exact_grad = [dims = f.dims](const Matrix&) -> Matrix {
            return Matrix::Zero(dims.rows, dims.cols);
        };
        theta = Matrix::Zero(f.dims.rows, f.dims.cols);
    } else {
        Options single = o;
        single.tasks = 1;
        const LqrSetup setup = make_lqr_setup(single);
        f = setup.tasks.front();
        theta = setup.theta0;
    }
    const Matrix exact = f.exact_grad(theta);
    const double exact_norm = exact.norm();

    const auto cell = [&](const std::string& sweep, std::size_t n_s, double r,
                          std::uint64_t cell_id) {
        std::vector<double> errors;
        std::vector<double> rel;
        for (std::size_t t = 0; t < o.trials; ++t) {
            ZoConfig cfg;
            cfg.n_s = n_s;
            cfg.r = r;
            cfg.seed = o.seed;
            const std::uint64_t stream = derive_key(o.seed, {kDiagTag, cell_id, t});
            const double err = (zo2p(f, theta, cfg, stream).g - exact).norm();
            errors.push_back(err);
            rel.push_back(exact_norm > 0.0 ? err / exact_norm : err);
        }
        return DiagRow{sweep, n_s, r, median(errors), median(rel), exact_norm};
    };

    std::vector<DiagRow> rows;
    std::uint64_t cell_id = 0;
    for (const auto n_s : o.ns_grid) {
        rows.push_back(cell("n_s", n_s, o.radius, cell_id++));
    }
    for (const auto r : o.r_grid) {
        rows.push_back(cell("r", o.r_sweep_samples, r, cell_id++));
    }
    return rows;
}

// ---------------------------------------------------------------------------

SampleComplexityResult sample_complexity(const Options& o) {
    const LqrSetup setup = make_lqr_setup(o);
    SampleComplexityResult out;
    out.delta0 = mean(task_gaps(setup.tasks, setup.theta0));
    const double smallest = *std::min_element(o.eps_grid.begin(), o.eps_grid.end());

    std::vector<std::pair<std::string, TrainResult>> runs;
    for (const auto mode : {SelectionMode::full_pool, SelectionMode::coreset}) {
        const double stop_at = smallest * out.delta0;
        TrainResult res = train(setup.tasks, setup.theta0, train_config(o, mode),
                                [&](const TrainRecord& rec) { return mean(rec.per_task_gap) > stop_at; });
        runs.emplace_back(to_string(mode), std::move(res));
    }

    for (const auto frac : o.eps_grid) {
        const double eps = frac * out.delta0;
        std::optional<std::size_t> q[2];
        for (std::size_t k = 0; k < runs.size(); ++k) {
            const auto& [name, res] = runs[k];
            SampleComplexityRow row;
            row.eps_fraction = frac;
            row.eps = eps;
            row.mode = name;
            q[k] = queries_to_reach(res, eps);
            if (q[k]) {
                row.total_queries = *q[k];
                const auto it = std::find_if(res.records.begin(), res.records.end(),
                                             [&](const TrainRecord& r) { return r.cum_queries == *q[k]; });
                row.iterations = it->iter + 1;
            } else {
                row.total_queries = res.total_queries;
                row.iterations = res.records.size();
                row.censored = true;
            }
            out.rows.push_back(row);
        }
        if (q[0] && q[1]) {
            out.ratios.emplace_back(static_cast<double>(*q[0]) / static_cast<double>(*q[1]));
        } else {
            out.ratios.emplace_back(std::nullopt);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

MetaTestResult meta_test(const LqrTask& nominal, const Matrix& theta_meta, const Options& o) {
    const auto unseen = perturb_tasks(nominal, o.test_tasks, o.eps_het, derive_key(o.seed, {kUnseenTag}));
    const Matrix Sigma0 = Matrix::Identity(nominal.state_dim(), nominal.state_dim());
    const auto tasks = lqr_task_functions(unseen, Sigma0);

    MetaTestResult out;
    StreamRng rng(derive_key(o.seed, {kBaselineTag}));
    std::normal_distribution<double> normal(0.0, o.baseline_scale);
    bool found = false;
    for (int draw = 0; draw < kMaxBaselineDraws && !found; ++draw) {
        Matrix K(nominal.input_dim(), nominal.state_dim());
        for (Eigen::Index j = 0; j < K.cols(); ++j) {
            for (Eigen::Index i = 0; i < K.rows(); ++i) {
                K(i, j) = normal(rng);
            }
        }
        if (all_tasks_stable(tasks, K)) {
            out.random_gain = std::move(K);
            found = true;
        }
    }
    if (!found) {
        throw GenerationError("no random stabilizing baseline gain found in " +
                              std::to_string(kMaxBaselineDraws) + " draws");
    }
    out.meta = adapt_and_test(theta_meta, tasks, o.adapt_steps, o.eta_adapt);
    out.random = adapt_and_test(out.random_gain, tasks, o.adapt_steps, o.eta_adapt);
    return out;
}

}  // namespace metacore::experiments
