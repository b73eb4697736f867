#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "metacore/coreset.hpp"
#include "metacore/zeroth_order.hpp"

namespace metacore {

enum class SelectionMode { coreset, full_pool, unweighted_coreset, random_subset };
enum class GradMode { zo2p, oracle };

std::string to_string(SelectionMode mode);
std::string to_string(GradMode mode);
/// Accepts "coreset", "full" / "full_pool", "unweighted" / "unweighted_coreset",
/// "random" / "random_subset".
SelectionMode parse_selection_mode(const std::string& name);
GradMode parse_grad_mode(const std::string& name);

/// Training configuration. The inner step and probe seed live in `zo`.
struct TrainConfig {
    double eta_out = 1e-2;
    std::size_t n_iters = 100;
    ZoConfig zo;
    SelectionMode mode = SelectionMode::coreset;
    std::size_t L = 1;  ///< coreset size; ignored by full_pool
    GradMode grad_mode = GradMode::zo2p;
    /// When true every task draws the same probe directions at a given
    /// iteration; when false the probe stream also depends on the task index.
    bool shared_probe_streams = false;

    void validate(std::size_t pool_size) const;
};

/// State after iteration `iter`: `theta` is the updated parameter, `per_task_gap`
/// is measured there (LQR: J_j - J_j*, otherwise the task reward).
/// `grad_norm_sq` is |grad_S J|_F^2 of the step just taken. `full_grad_norm_sq`
/// is the exact full-pool meta-gradient norm at the pre-step point (oracle
/// mode only, NaN otherwise; its evaluation is not counted as queries).
struct TrainRecord {
    std::size_t iter = 0;
    Matrix theta;
    std::vector<double> per_task_gap;
    double grad_norm_sq = 0.0;
    double full_grad_norm_sq = 0.0;
    std::size_t cum_queries = 0;
    bool all_stable = true;
};

struct MetaState {
    Matrix theta;
    Coreset coreset;
    std::size_t iteration = 0;
    std::size_t cum_queries = 0;
};

struct SelectionResult {
    Coreset coreset;
    std::size_t queries = 0;
    /// Gradient snapshot and distances; empty for modes that do not estimate.
    GradientTable table;
    Matrix distances;
};

/// Per-task gradient g_j at theta: inner_adapted_estimate in zo2p mode, the
/// exact gradient at theta + eta_inn * exact_grad(theta) in oracle mode (two
/// oracle calls, each counted as one query).
GradientEstimate task_gradient(const TaskFunction& f, const Matrix& theta, const TrainConfig& cfg,
                               std::uint64_t stream);

/// Probe stream for task `task` at a given phase (0 = selection, 1 = training)
/// and iteration.
std::uint64_t probe_stream(const TrainConfig& cfg, int phase, std::size_t iteration,
                           std::size_t task);

/// Coreset selection at theta0. full_pool and random_subset spend no queries.
SelectionResult select_phase(const std::vector<TaskFunction>& tasks, const Matrix& theta0,
                             const TrainConfig& cfg);

struct MetaGradient {
    Matrix g;
    std::size_t queries = 0;
};

/// (1/M) sum_{i in S} gamma_i g_i(theta). Members are visited in ascending
/// task index and each contributes gamma_i separate additions, one per pool
/// task it represents, so with coinciding g_i the result is bit-identical to
/// the full-pool sum.
MetaGradient meta_gradient(const std::vector<TaskFunction>& tasks, const Coreset& coreset,
                           const Matrix& theta, const TrainConfig& cfg, std::size_t iteration);

/// Exact first-order meta-gradient over the whole pool (oracle diagnostics).
Matrix full_pool_oracle_gradient(const std::vector<TaskFunction>& tasks, const Matrix& theta,
                                 double eta_inn);

/// One meta update theta += eta_out * grad_S J(theta). In LQR mode (tasks
/// carry a stability predicate) the new parameter is checked against every
/// pool task; a violation throws StabilityViolation.
std::pair<MetaState, TrainRecord> meta_step(const MetaState& state,
                                            const std::vector<TaskFunction>& tasks,
                                            const TrainConfig& cfg);

struct TrainResult {
    std::vector<TrainRecord> records;
    Matrix theta_final;
    Coreset coreset;
    std::size_t selection_queries = 0;
    std::size_t total_queries = 0;
    std::vector<double> initial_gap;  ///< per-task gap at theta0
};

/// Called after every record; returning false stops training early.
using RecordCallback = std::function<bool(const TrainRecord&)>;

/// Selection followed by up to n_iters meta steps.
TrainResult train(const std::vector<TaskFunction>& tasks, const Matrix& theta0,
                  const TrainConfig& cfg, const RecordCallback& on_record = {});

/// Gap (or reward, for tasks without a gap) of every task at theta.
std::vector<double> task_gaps(const std::vector<TaskFunction>& tasks, const Matrix& theta);

/// True when every task with a stability predicate accepts theta.
bool all_tasks_stable(const std::vector<TaskFunction>& tasks, const Matrix& theta);

/// k exact gradient steps of size eta from theta_meta on each task. Row j holds
/// the gap of task j before adaptation and after each step (k + 1 entries).
std::vector<std::vector<double>> adapt_and_test(const Matrix& theta_meta,
                                                const std::vector<TaskFunction>& tasks,
                                                std::size_t k_steps, double eta);

/// (1/M) sum_j min_{i in S} |grad J_i(theta) - grad J_j(theta)| from exact
/// gradients at a single theta (operator norm).
double selection_bias_snapshot(const std::vector<TaskFunction>& tasks, const Coreset& coreset,
                               const Matrix& theta);

}  // namespace metacore
