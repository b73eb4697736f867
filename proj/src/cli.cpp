#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "metacore/errors.hpp"
#include "metacore/experiments.hpp"

#ifndef METACORE_VERSION
#define METACORE_VERSION "unknown"
#endif

namespace metacore::experiments {
namespace fs = std::filesystem;

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Shortest round-trip formatting, '.' decimal regardless of locale.
std::string fmt(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

class Csv {
public:
    explicit Csv(const std::vector<std::string>& header) { row(header); }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t k = 0; k < cells.size(); ++k) {
            if (k > 0) {
                text_ += ',';
            }
            text_ += cells[k];
        }
        text_ += '\n';
    }

    void write(const fs::path& path) const {
        std::ofstream os(path, std::ios::binary);
        os << text_;
        if (!os) {
            throw std::runtime_error("cannot write " + path.string());
        }
    }

private:
    std::string text_;
};

void write_json(const fs::path& path, const nlohmann::json& doc) {
    std::ofstream os(path, std::ios::binary);
    os << doc.dump(2) << '\n';
    if (!os) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw ParameterError("cannot open " + path.string());
    }
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParameterError(path.string() + ": " + e.what());
    }
}

nlohmann::json manifest(const std::string& id, Command cmd, const Options& opts,
                        const std::string& started, nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json m = {{"experiment", id},
                        {"command", to_string(cmd)},
                        {"version", version_string()},
                        {"seed", opts.seed},
                        {"config", options_to_json(opts)},
                        {"started", started},
                        {"finished", utc_now()}};
    for (auto& [k, v] : extra.items()) {
        m[k] = v;
    }
    return m;
}

nlohmann::json train_config_json(const TrainConfig& c) {
    return {{"eta_out", c.eta_out},
            {"n_iters", c.n_iters},
            {"n_s", c.zo.n_s},
            {"r", c.zo.r},
            {"eta_inn", c.zo.eta_inn},
            {"seed", c.zo.seed},
            {"mode", to_string(c.mode)},
            {"L", c.L},
            {"grad_mode", to_string(c.grad_mode)},
            {"shared_probe_streams", c.shared_probe_streams}};
}

nlohmann::json coreset_json(const Coreset& c) {
    return {{"indices", c.indices}, {"weights", c.weights}, {"pool_size", c.pool_size}};
}

void write_trajectory(const fs::path& path, const std::string& mode, const TrainResult& result,
                      const std::vector<double>* ergodic) {
    std::vector<std::string> header{"iter", "mode", "task_id", "gap", "grad_norm_sq", "cum_queries",
                                    "all_stable"};
    if (ergodic) {
        header.push_back("ergodic_avg");
    }
    Csv csv(header);
    for (std::size_t n = 0; n < result.records.size(); ++n) {
        const auto& rec = result.records[n];
        for (std::size_t j = 0; j < rec.per_task_gap.size(); ++j) {
            std::vector<std::string> cells{std::to_string(rec.iter), mode, std::to_string(j),
                                           fmt(rec.per_task_gap[j]), fmt(rec.grad_norm_sq),
                                           std::to_string(rec.cum_queries),
                                           rec.all_stable ? "true" : "false"};
            if (ergodic) {
                cells.push_back(fmt((*ergodic)[n]));
            }
            csv.row(cells);
        }
    }
    csv.write(path);
}

fs::path prepare_out(const Options& opts) {
    fs::path out(opts.out);
    fs::create_directories(out);
    return out;
}

}  // namespace

std::string version_string() { return METACORE_VERSION; }

int cmd_run_lqr(const Options& opts, std::ostream& log) {
    opts.validate();
    const std::string started = utc_now();
    const fs::path out = prepare_out(opts);
    const LqrSetup setup = make_lqr_setup(opts);
    write_json(out / "pool.json", pool_to_json(setup.pool, setup.spec));

    const double delta0 = mean(task_gaps(setup.tasks, setup.theta0));
    log << "pool: M=" << setup.spec.M << " d1=" << setup.spec.d1 << " d2=" << setup.spec.d2
        << " initial mean gap " << delta0 << '\n';
    for (const auto& name : opts.modes) {
        const SelectionMode mode = parse_selection_mode(name);
        const std::string tag = to_string(mode);
        const TrainConfig cfg = train_config(opts, mode);
        const TrainResult res = train(setup.tasks, setup.theta0, cfg);

        write_trajectory(out / ("lqr_" + tag + ".csv"), tag, res, nullptr);
        write_json(out / ("theta_" + tag + ".json"),
                   {{"mode", tag}, {"theta", matrix_to_json(res.theta_final)}});
        write_json(out / ("lqr_" + tag + ".manifest.json"),
                   manifest("lqr_" + tag, Command::run_lqr, opts, started,
                            {{"train_config", train_config_json(cfg)},
                             {"init", opts.init},
                             {"coreset", coreset_json(res.coreset)},
                             {"selection_queries", res.selection_queries},
                             {"total_queries", res.total_queries},
                             {"initial_mean_gap", delta0},
                             {"pool", "pool.json"}}));
        log << tag << ": final mean gap " << mean(res.records.back().per_task_gap) << ", "
            << res.total_queries << " queries\n";
    }
    return kExitOk;
}

int cmd_run_synthetic(const Options& opts, std::ostream& log) {
    opts.validate();
    const std::string started = utc_now();
    const fs::path out = prepare_out(opts);
    for (const auto& name : opts.modes) {
        const SelectionMode mode = parse_selection_mode(name);
        const std::string tag = to_string(mode);
        const SyntheticRun run = run_synthetic_mode(opts, mode);
        write_trajectory(out / ("synthetic_" + tag + ".csv"), tag, run.result, &run.ergodic_avg);
        write_json(out / ("synthetic_" + tag + ".manifest.json"),
                   manifest("synthetic_" + tag, Command::run_synthetic, opts, started,
                            {{"train_config", train_config_json(train_config(opts, mode))},
                             {"coreset", coreset_json(run.result.coreset)},
                             {"total_queries", run.result.total_queries},
                             {"bias_snapshot", run.bias_snapshot}}));
        log << tag << ": ergodic average " << run.ergodic_avg.back() << " after "
            << run.ergodic_avg.size() << " iterations, selection bias snapshot "
            << run.bias_snapshot << '\n';
    }
    return kExitOk;
}

int cmd_estimator_diag(const Options& opts, std::ostream& log) {
    opts.validate();
    const std::string started = utc_now();
    const fs::path out = prepare_out(opts);
    const auto rows = estimator_diag(opts);
    Csv csv({"sweep", "n_s", "r", "trials", "median_error", "median_rel_error", "exact_grad_norm"});
    for (const auto& row : rows) {
        csv.row({row.sweep, std::to_string(row.n_s), fmt(row.r), std::to_string(opts.trials),
                 fmt(row.median_error), fmt(row.median_rel_error), fmt(row.exact_grad_norm)});
        log << row.sweep << " n_s=" << row.n_s << " r=" << row.r << " median error "
            << row.median_error << '\n';
    }
    csv.write(out / "estimator_diag.csv");
    write_json(out / "estimator_diag.manifest.json",
               manifest("estimator_diag", Command::estimator_diag, opts, started));
    return kExitOk;
}

int cmd_sample_complexity(const Options& opts, std::ostream& log) {
    opts.validate();
    const std::string started = utc_now();
    const fs::path out = prepare_out(opts);
    const auto res = sample_complexity(opts);

    Csv csv({"eps_fraction", "eps", "mode", "total_queries", "iterations", "censored"});
    bool any_censored = false;
    for (const auto& row : res.rows) {
        csv.row({fmt(row.eps_fraction), fmt(row.eps), row.mode, std::to_string(row.total_queries),
                 std::to_string(row.iterations), row.censored ? "true" : "false"});
        any_censored = any_censored || row.censored;
    }
    csv.write(out / "sample_complexity.csv");

    Csv ratios({"eps_fraction", "eps", "query_ratio"});
    for (std::size_t k = 0; k < opts.eps_grid.size(); ++k) {
        const double frac = opts.eps_grid[k];
        const auto& r = res.ratios[k];
        ratios.row({fmt(frac), fmt(frac * res.delta0), r ? fmt(*r) : "nan"});
        log << "eps=" << frac << "*delta0: full/coreset query ratio "
            << (r ? fmt(*r) : std::string("n/a (censored)")) << '\n';
    }
    ratios.write(out / "sample_complexity_ratio.csv");

    const auto m = manifest("sample_complexity", Command::sample_complexity, opts, started,
                            {{"delta0", res.delta0}});
    write_json(out / "sample_complexity.manifest.json", m);
    write_json(out / "sample_complexity_ratio.manifest.json", m);
    if (any_censored) {
        log << "warning: some targets were not reached within " << opts.iters
            << " iterations (censored rows)\n";
    }
    return kExitOk;
}

int cmd_meta_test(const Options& opts, std::ostream& log) {
    opts.validate();
    const std::string started = utc_now();
    Options resolved = opts;
    std::optional<LqrTask> nominal;
    Matrix theta;
    nlohmann::json source;

    if (!opts.run_dir.empty()) {
        const fs::path dir(opts.run_dir);
        const nlohmann::json pool_doc = read_json(dir / "pool.json");
        nominal = pool_from_json(pool_doc).nominal;
        const auto eps = pool_doc.at("spec").at("eps_het").get<std::vector<double>>();
        resolved.eps_het = {eps.at(0), eps.at(1), eps.at(2), eps.at(3)};
        const std::string tag = to_string(parse_selection_mode(opts.from_mode));
        theta = matrix_from_json(read_json(dir / ("theta_" + tag + ".json")).at("theta"));
        source = {{"run_dir", opts.run_dir}, {"from_mode", tag}};
    } else {
        const LqrSetup setup = make_lqr_setup(opts);
        const SelectionMode mode = parse_selection_mode(opts.from_mode);
        theta = train(setup.tasks, setup.theta0, train_config(opts, mode)).theta_final;
        nominal = setup.pool.nominal;
        source = {{"trained_inline", true}, {"from_mode", to_string(mode)}};
    }

    const fs::path out = prepare_out(opts);
    const MetaTestResult res = meta_test(*nominal, theta, resolved);
    Csv csv({"controller", "task_id", "k", "gap"});
    const auto emit = [&](const std::string& who, const std::vector<std::vector<double>>& gaps) {
        for (std::size_t j = 0; j < gaps.size(); ++j) {
            for (std::size_t k = 0; k < gaps[j].size(); ++k) {
                csv.row({who, std::to_string(j), std::to_string(k), fmt(gaps[j][k])});
            }
        }
    };
    emit("meta", res.meta);
    emit("random", res.random);
    csv.write(out / "meta_test.csv");

    const auto col0 = [](const std::vector<std::vector<double>>& g) {
        std::vector<double> v;
        for (const auto& row : g) v.push_back(row.front());
        return mean(v);
    };
    write_json(out / "meta_test.manifest.json",
               manifest("meta_test", Command::meta_test, resolved, started,
                        {{"source", source},
                         {"random_gain", matrix_to_json(res.random_gain)},
                         {"meta_mean_gap_k0", col0(res.meta)},
                         {"random_mean_gap_k0", col0(res.random)}}));
    log << "k=0 mean gap: meta " << col0(res.meta) << ", random baseline " << col0(res.random)
        << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------

namespace {

/// Registers a flag whose value is only applied when it was given explicitly,
/// so config files can fill in the rest.
class FlagSet {
public:
    template <class T>
    void add(CLI::App* app, const std::string& name, T Options::*field, const std::string& help) {
        auto holder = std::make_shared<T>();
        CLI::Option* opt = app->add_option(name, *holder, help);
        if constexpr (requires { holder->begin(); } && !std::is_same_v<T, std::string>) {
            opt->delimiter(',');
        }
        appliers_.push_back([opt, holder, field](Options& o) {
            if (opt->count() > 0) o.*field = *holder;
        });
    }

    void add_switch(CLI::App* app, const std::string& name, bool Options::*field,
                    const std::string& help) {
        CLI::Option* opt = app->add_flag(name, help);
        appliers_.push_back([opt, field](Options& o) {
            if (opt->count() > 0) o.*field = true;
        });
    }

    void add_custom(CLI::Option* opt, std::function<void(Options&)> apply) {
        appliers_.push_back([opt, apply = std::move(apply)](Options& o) {
            if (opt->count() > 0) apply(o);
        });
    }

    void apply(Options& o) const {
        for (const auto& f : appliers_) f(o);
    }

private:
    std::vector<std::function<void(Options&)>> appliers_;
};

struct Subcommand {
    Command cmd;
    CLI::App* app = nullptr;
    FlagSet flags;
    std::string config_path;
    std::function<int(const Options&, std::ostream&)> run;
};

void add_common(Subcommand& s) {
    CLI::App* a = s.app;
    FlagSet& f = s.flags;
    f.add(a, "--seed", &Options::seed, "master seed");
    f.add(a, "--out", &Options::out, "output directory");
    f.add(a, "--tasks", &Options::tasks, "pool size M");
    f.add(a, "--coreset", &Options::coreset, "coreset size L");
    f.add(a, "--n-samples", &Options::n_samples, "probe pairs per estimate");
    f.add(a, "--radius", &Options::radius, "smoothing radius r");
    f.add(a, "--eta-inn", &Options::eta_inn, "inner step size");
    f.add(a, "--eta-out", &Options::eta_out, "outer step size");
    f.add(a, "--iters", &Options::iters, "meta iterations N");
    f.add(a, "--modes", &Options::modes, "comma list of full,coreset,unweighted,random");
    f.add(a, "--grad-mode", &Options::grad_mode, "zo2p or oracle");

    auto eps = std::make_shared<std::vector<double>>();
    CLI::Option* eps_opt =
        a->add_option("--eps-het", *eps, "heterogeneity a,b,q,r (one value applies to all)")->delimiter(',');
    f.add_custom(eps_opt, [eps](Options& o) {
        if (eps->size() == 1) {
            o.eps_het = {(*eps)[0], (*eps)[0], (*eps)[0], (*eps)[0]};
        } else if (eps->size() == 4) {
            o.eps_het = {(*eps)[0], (*eps)[1], (*eps)[2], (*eps)[3]};
        } else {
            throw ParameterError("--eps-het takes 1 or 4 values");
        }
    });
    auto dims = std::make_shared<std::vector<long>>();
    CLI::Option* dims_opt = a->add_option("--dims", *dims, "d1,d2")->delimiter(',');
    f.add_custom(dims_opt, [dims](Options& o) {
        if (dims->size() != 2) {
            throw ParameterError("--dims takes 2 values");
        }
        o.dims = {(*dims)[0], (*dims)[1]};
    });
    a->add_option("--config", s.config_path, "JSON config mirroring the flags (flags win)");
}

void add_lqr_extras(Subcommand& s) {
    s.flags.add(s.app, "--init", &Options::init, "starting gain: zero or nominal");
    s.flags.add_switch(s.app, "--shared-probes", &Options::shared_probes,
                       "same probe directions for every task");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Coreset-accelerated zeroth-order meta-learning experiments", "metacore"};
    app.require_subcommand(1);
    app.set_version_flag("--version", version_string());

    std::vector<std::unique_ptr<Subcommand>> subs;
    const auto make = [&](Command cmd, const std::string& help,
                          std::function<int(const Options&, std::ostream&)> run) -> Subcommand& {
        auto s = std::make_unique<Subcommand>();
        s->cmd = cmd;
        s->app = app.add_subcommand(to_string(cmd), help);
        s->run = std::move(run);
        add_common(*s);
        subs.push_back(std::move(s));
        return *subs.back();
    };

    auto& lqr = make(Command::run_lqr, "train on an LQR pool in each selection mode", cmd_run_lqr);
    add_lqr_extras(lqr);

    auto& syn = make(Command::run_synthetic, "train on a synthetic smooth pool", cmd_run_synthetic);
    syn.flags.add(syn.app, "--alpha", &Options::alpha, "ripple amplitude (0 = concave)");
    syn.flags.add(syn.app, "--center-radius", &Options::center_radius, "task center ball radius");
    syn.flags.add(syn.app, "--frequency-norm", &Options::frequency_norm, "ripple frequency norm");
    syn.flags.add(syn.app, "--curvature-min", &Options::curvature_min, "smallest curvature");
    syn.flags.add(syn.app, "--curvature-max", &Options::curvature_max, "largest curvature");
    syn.flags.add(syn.app, "--theta0", &Options::theta0, "starting value of every entry");

    auto& diag = make(Command::estimator_diag, "estimator error sweeps over n_s and r", cmd_estimator_diag);
    add_lqr_extras(diag);
    diag.flags.add(diag.app, "--task", &Options::task, "lqr or constant");
    diag.flags.add(diag.app, "--ns-grid", &Options::ns_grid, "probe-count grid");
    diag.flags.add(diag.app, "--r-grid", &Options::r_grid, "radius grid");
    diag.flags.add(diag.app, "--r-sweep-samples", &Options::r_sweep_samples, "n_s used in the r sweep");
    diag.flags.add(diag.app, "--trials", &Options::trials, "trials per cell");

    auto& sc = make(Command::sample_complexity, "queries to reach target gaps, full vs coreset",
                    cmd_sample_complexity);
    add_lqr_extras(sc);
    sc.flags.add(sc.app, "--eps-grid", &Options::eps_grid, "targets as fractions of the initial gap");

    auto& mt = make(Command::meta_test, "adapt a trained gain on unseen tasks", cmd_meta_test);
    add_lqr_extras(mt);
    mt.flags.add(mt.app, "--run-dir", &Options::run_dir, "run-lqr output directory (empty: train here)");
    mt.flags.add(mt.app, "--from-mode", &Options::from_mode, "which trained gain to load");
    mt.flags.add(mt.app, "--test-tasks", &Options::test_tasks, "number of unseen tasks");
    mt.flags.add(mt.app, "--adapt-steps", &Options::adapt_steps, "exact gradient steps k");
    mt.flags.add(mt.app, "--eta-adapt", &Options::eta_adapt, "adaptation step size");
    mt.flags.add(mt.app, "--baseline-scale", &Options::baseline_scale, "std of random baseline entries");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) {
        reversed.pop_back();  // program name
    }
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
    }

    for (const auto& s : subs) {
        if (!s->app->parsed()) {
            continue;
        }
        try {
            Options opts = defaults_for(s->cmd);
            if (!s->config_path.empty()) {
                apply_config(opts, read_json(s->config_path));
            }
            s->flags.apply(opts);
            opts.validate();
            return s->run(opts, out);
        } catch (const ParameterError& e) {
            err << "config error: " << e.what() << '\n';
            return kExitConfig;
        } catch (const DimensionError& e) {
            err << "config error: " << e.what() << '\n';
            return kExitConfig;
        } catch (const StabilityViolation& e) {
            err << "stability violation: " << e.what() << '\n';
            return kExitStability;
        } catch (const ProbeInstabilityError& e) {
            err << "stability violation: " << e.what() << '\n';
            return kExitStability;
        } catch (const GenerationError& e) {
            err << "generation error: " << e.what() << '\n';
            return kExitGeneration;
        } catch (const std::exception& e) {
            err << "error: " << e.what() << '\n';
            return kExitFailure;
        }
    }
    return kExitConfig;
}

}  // namespace metacore::experiments
