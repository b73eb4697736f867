#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metacore/meta_trainer.hpp"
#include "metacore/task_generators.hpp"

namespace metacore::experiments {

enum class Command { run_lqr, run_synthetic, estimator_diag, sample_complexity, meta_test };

std::string to_string(Command cmd);

/// Fully resolved experiment settings. Field names follow the CLI flags.
struct Options {
    std::uint64_t seed = 0;
    std::string out = "out";
    std::size_t tasks = 40;
    std::size_t coreset = 10;
    std::size_t n_samples = 200;
    double radius = 0.05;
    double eta_inn = 1e-3;
    double eta_out = 1e-2;
    std::size_t iters = 200;
    std::vector<std::string> modes{"full", "coreset", "unweighted", "random"};
    std::string grad_mode = "zo2p";
    Heterogeneity eps_het{0.05, 0.05, 0.05, 0.05};
    std::array<long, 2> dims{3, 2};

    // LQR
    std::string init = "zero";  ///< theta0: "zero" gain or "nominal" Riccati gain
    bool shared_probes = false;

    // run-synthetic
    double alpha = 0.5;
    double center_radius = 1.0;
    double frequency_norm = 1.5;
    double curvature_min = 0.5;
    double curvature_max = 2.0;
    double theta0 = 1.0;  ///< every entry of the synthetic starting point

    // estimator-diag
    std::string task = "lqr";  ///< "lqr" or "constant"
    std::vector<std::size_t> ns_grid{100, 1000, 10000};
    std::vector<double> r_grid{1e-1, 1e-2, 1e-3};
    std::size_t r_sweep_samples = 100000;
    std::size_t trials = 20;

    // sample-complexity
    std::vector<double> eps_grid{0.5, 0.2, 0.1};

    // meta-test
    std::string run_dir;
    std::string from_mode = "coreset";
    std::size_t test_tasks = 10;
    std::size_t adapt_steps = 10;
    double eta_adapt = 1e-2;
    double baseline_scale = 0.5;

    void validate() const;
};

/// Per-command defaults (the synthetic family uses smaller pools, a vector
/// parameter and a larger outer step).
Options defaults_for(Command cmd);

nlohmann::json options_to_json(const Options& opts);
/// Overwrites fields present in a config document (keys are the long flag
/// names, e.g. "n-samples"). Throws ParameterError on unknown keys.
void apply_config(Options& opts, const nlohmann::json& config);

TrainConfig train_config(const Options& opts, SelectionMode mode);

// LQR experiments -----------------------------------------------------------

struct LqrSetup {
    PoolSpec spec;
    LqrPool pool;
    Matrix Sigma0;
    std::vector<TaskFunction> tasks;
    Matrix theta0;
};

/// Pool from the options plus the starting gain, verified stabilizing.
LqrSetup make_lqr_setup(const Options& opts);

struct ModeRun {
    SelectionMode mode;
    TrainResult result;
};

/// One train() per requested mode on the same pool and probe seed.
std::vector<ModeRun> run_lqr_modes(const Options& opts, const LqrSetup& setup);

double mean(const std::vector<double>& v);

/// Mean per-task gap curve of a run (entry n = after iteration n).
std::vector<double> mean_gap_curve(const TrainResult& result);

/// Cumulative queries spent when the mean gap first drops to `target`, or
/// nullopt if it never does.
std::optional<std::size_t> queries_to_reach(const TrainResult& result, double target);

// Synthetic experiments ----------------------------------------------------

struct SyntheticRun {
    TrainResult result;
    std::vector<double> grad_norm_sq;  ///< exact |grad J(theta_n)|^2, n = 0..N-1
    std::vector<double> ergodic_avg;   ///< running mean of grad_norm_sq
    double bias_snapshot = 0.0;        ///< mean-min selection distance at theta0
};

SyntheticRun run_synthetic_mode(const Options& opts, SelectionMode mode);

// Estimator diagnostics ----------------------------------------------------

struct DiagRow {
    std::string sweep;  ///< "n_s" or "r"
    std::size_t n_s = 0;
    double r = 0.0;
    double median_error = 0.0;
    double median_rel_error = 0.0;
    double exact_grad_norm = 0.0;
};

std::vector<DiagRow> estimator_diag(const Options& opts);

// Sample complexity --------------------------------------------------------

struct SampleComplexityRow {
    double eps_fraction = 0.0;
    double eps = 0.0;
    std::string mode;
    std::size_t total_queries = 0;
    std::size_t iterations = 0;
    bool censored = false;
};

struct SampleComplexityResult {
    double delta0 = 0.0;
    std::vector<SampleComplexityRow> rows;
    /// full / coreset query ratio per eps fraction; nullopt when either is censored.
    std::vector<std::optional<double>> ratios;
};

SampleComplexityResult sample_complexity(const Options& opts);

// Meta-test ----------------------------------------------------------------

struct MetaTestResult {
    std::vector<std::vector<double>> meta;    ///< [task][k] gap from the trained gain
    std::vector<std::vector<double>> random;  ///< [task][k] gap from the random baseline
    Matrix random_gain;
};

/// Unseen tasks are fresh perturbations of the pool's nominal system.
MetaTestResult meta_test(const LqrTask& nominal, const Matrix& theta_meta, const Options& opts);

// CLI ----------------------------------------------------------------------

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitStability = 3;
inline constexpr int kExitGeneration = 4;

int cmd_run_lqr(const Options& opts, std::ostream& log);
int cmd_run_synthetic(const Options& opts, std::ostream& log);
int cmd_estimator_diag(const Options& opts, std::ostream& log);
int cmd_sample_complexity(const Options& opts, std::ostream& log);
int cmd_meta_test(const Options& opts, std::ostream& log);

/// Parses argv (argv[0] is the program name), runs the subcommand and maps
/// errors to exit codes: 2 config, 3 stability, 4 generation, 1 anything else.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string version_string();

}  // namespace metacore::experiments
