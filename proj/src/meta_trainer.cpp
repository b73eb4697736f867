#include "metacore/meta_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "metacore/errors.hpp"
#include "metacore/rng.hpp"

namespace metacore {
namespace {

constexpr std::uint64_t kRandomSubsetTag = 0x7A5D;

/// Equal apportionment of M over the (sorted) members: floor(M / L) each, the
/// remainder going one apiece to the lowest task indices.
Coreset equal_weights(std::vector<std::size_t> indices, std::size_t M) {
    std::sort(indices.begin(), indices.end());
    Coreset c;
    c.pool_size = M;
    c.indices = std::move(indices);
    const std::size_t L = c.indices.size();
    c.weights.assign(L, M / L);
    for (std::size_t k = 0; k < M % L; ++k) {
        ++c.weights[k];
    }
    return c;
}

bool lqr_mode(const std::vector<TaskFunction>& tasks) {
    return std::any_of(tasks.begin(), tasks.end(),
                       [](const TaskFunction& t) { return static_cast<bool>(t.stable); });
}

void require_grad(const TaskFunction& f) {
    if (!f.has_exact_grad()) {
        throw ParameterError("oracle mode needs tasks with an exact gradient");
    }
}

}  // namespace

std::string to_string(SelectionMode mode) {
    switch (mode) {
        case SelectionMode::coreset: return "coreset";
        case SelectionMode::full_pool: return "full";
        case SelectionMode::unweighted_coreset: return "unweighted";
        case SelectionMode::random_subset: return "random";
    }
    return "?";
}

std::string to_string(GradMode mode) { return mode == GradMode::zo2p ? "zo2p" : "oracle"; }

SelectionMode parse_selection_mode(const std::string& name) {
    if (name == "coreset") return SelectionMode::coreset;
    if (name == "full" || name == "full_pool") return SelectionMode::full_pool;
    if (name == "unweighted" || name == "unweighted_coreset") return SelectionMode::unweighted_coreset;
    if (name == "random" || name == "random_subset") return SelectionMode::random_subset;
    throw ParameterError("unknown mode '" + name + "'");
}

GradMode parse_grad_mode(const std::string& name) {
    if (name == "zo2p") return GradMode::zo2p;
    if (name == "oracle") return GradMode::oracle;
    throw ParameterError("unknown grad mode '" + name + "'");
}

void TrainConfig::validate(std::size_t pool_size) const {
    if (!(eta_out > 0.0) || !std::isfinite(eta_out)) {
        throw ParameterError("eta_out must be positive and finite");
    }
    if (n_iters < 1) {
        throw ParameterError("number of iterations must be at least 1");
    }
    zo.validate();
    if (pool_size < 1) {
        throw ParameterError("task pool is empty");
    }
    if (mode != SelectionMode::full_pool && L < 1) {
        throw ParameterError("coreset size L must be at least 1");
    }
}

std::uint64_t probe_stream(const TrainConfig& cfg, int phase, std::size_t iteration,
                           std::size_t task) {
    const std::uint64_t task_tag = cfg.shared_probe_streams ? 0 : task + 1;
    return derive_key(cfg.zo.seed, {static_cast<std::uint64_t>(phase), iteration, task_tag});
}

GradientEstimate task_gradient(const TaskFunction& f, const Matrix& theta, const TrainConfig& cfg,
                               std::uint64_t stream) {
    if (cfg.grad_mode == GradMode::zo2p) {
        return inner_adapted_estimate(f, theta, cfg.zo, stream);
    }
    require_grad(f);
    const Matrix adapted = theta + cfg.zo.eta_inn * f.exact_grad(theta);
    return GradientEstimate{f.exact_grad(adapted), 2, 0};
}

SelectionResult select_phase(const std::vector<TaskFunction>& tasks, const Matrix& theta0,
                             const TrainConfig& cfg) {
    cfg.validate(tasks.size());
    const std::size_t M = tasks.size();
    const std::size_t L = std::min(cfg.L, M);
    SelectionResult out;

    switch (cfg.mode) {
        case SelectionMode::full_pool:
            out.coreset = Coreset::identity(M);
            return out;
        case SelectionMode::random_subset: {
            std::vector<std::size_t> order(M);
            std::iota(order.begin(), order.end(), std::size_t{0});
            StreamRng rng(derive_key(cfg.zo.seed, {kRandomSubsetTag}));
            // Partial Fisher-Yates on the counter-based stream.
            for (std::size_t k = 0; k < L; ++k) {
                const std::size_t span = M - k;
                const std::size_t pick = k + static_cast<std::size_t>(rng() % span);
                std::swap(order[k], order[pick]);
            }
            order.resize(L);
            out.coreset = equal_weights(std::move(order), M);
            return out;
        }
        case SelectionMode::coreset:
        case SelectionMode::unweighted_coreset:
            break;
    }

    out.table.grads.reserve(M);
    for (std::size_t j = 0; j < M; ++j) {
        GradientEstimate est = task_gradient(tasks[j], theta0, cfg, probe_stream(cfg, 0, 0, j));
        out.queries += est.queries_used;
        out.table.grads.push_back(std::move(est.g));
    }
    out.distances = pairwise_distances(out.table);
    std::vector<std::size_t> picks = greedy_select(out.distances, L);
    if (cfg.mode == SelectionMode::coreset) {
        out.coreset = allocate_weights(out.distances, picks);
    } else {
        out.coreset = equal_weights(std::move(picks), M);
    }
    return out;
}

MetaGradient meta_gradient(const std::vector<TaskFunction>& tasks, const Coreset& coreset,
                           const Matrix& theta, const TrainConfig& cfg, std::size_t iteration) {
    std::vector<std::size_t> order(coreset.indices.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return coreset.indices[a] < coreset.indices[b];
    });

    MetaGradient out;
    out.g = Matrix::Zero(theta.rows(), theta.cols());
    for (const auto k : order) {
        const std::size_t task = coreset.indices[k];
        const GradientEstimate est =
            task_gradient(tasks[task], theta, cfg, probe_stream(cfg, 1, iteration, task));
        out.queries += est.queries_used;
        for (std::size_t rep = 0; rep < coreset.weights[k]; ++rep) {
            out.g += est.g;
        }
    }
    out.g /= static_cast<double>(coreset.pool_size);
    return out;
}

Matrix full_pool_oracle_gradient(const std::vector<TaskFunction>& tasks, const Matrix& theta,
                                 double eta_inn) {
    Matrix g = Matrix::Zero(theta.rows(), theta.cols());
    for (const auto& f : tasks) {
        require_grad(f);
        g += f.exact_grad(theta + eta_inn * f.exact_grad(theta));
    }
    return g / static_cast<double>(tasks.size());
}

std::vector<double> task_gaps(const std::vector<TaskFunction>& tasks, const Matrix& theta) {
    std::vector<double> gaps;
    gaps.reserve(tasks.size());
    for (const auto& f : tasks) {
        gaps.push_back(f.gap ? f.gap(theta) : f.reward(theta));
    }
    return gaps;
}

bool all_tasks_stable(const std::vector<TaskFunction>& tasks, const Matrix& theta) {
    return std::all_of(tasks.begin(), tasks.end(),
                       [&](const TaskFunction& f) { return !f.stable || f.stable(theta); });
}

std::pair<MetaState, TrainRecord> meta_step(const MetaState& state,
                                            const std::vector<TaskFunction>& tasks,
                                            const TrainConfig& cfg) {
    TrainRecord rec;
    rec.iter = state.iteration;
    rec.full_grad_norm_sq = std::numeric_limits<double>::quiet_NaN();
    if (cfg.grad_mode == GradMode::oracle) {
        rec.full_grad_norm_sq =
            full_pool_oracle_gradient(tasks, state.theta, cfg.zo.eta_inn).squaredNorm();
    }

    const MetaGradient mg = meta_gradient(tasks, state.coreset, state.theta, cfg, state.iteration);
    MetaState next = state;
    next.theta = state.theta + cfg.eta_out * mg.g;
    next.iteration = state.iteration + 1;
    next.cum_queries = state.cum_queries + mg.queries;

    if (lqr_mode(tasks)) {
        for (std::size_t j = 0; j < tasks.size(); ++j) {
            if (tasks[j].stable && !tasks[j].stable(next.theta)) {
                std::ostringstream os;
                os << "meta update at iteration " << state.iteration << " destabilized pool task "
                   << j << "; reduce eta_out (now " << cfg.eta_out << ") or the smoothing radius r"
                   << " (now " << cfg.zo.r << ")";
                throw StabilityViolation(os.str());
            }
        }
    }

    rec.theta = next.theta;
    rec.per_task_gap = task_gaps(tasks, next.theta);
    rec.grad_norm_sq = mg.g.squaredNorm();
    rec.cum_queries = next.cum_queries;
    rec.all_stable = true;
    return {std::move(next), std::move(rec)};
}

TrainResult train(const std::vector<TaskFunction>& tasks, const Matrix& theta0,
                  const TrainConfig& cfg, const RecordCallback& on_record) {
    cfg.validate(tasks.size());
    for (std::size_t j = 0; j < tasks.size(); ++j) {
        if (theta0.rows() != tasks[j].dims.rows || theta0.cols() != tasks[j].dims.cols) {
            throw DimensionError("initial parameter shape does not match the tasks");
        }
        if (tasks[j].stable && !tasks[j].stable(theta0)) {
            throw ParameterError("initial parameter does not stabilize pool task " +
                                 std::to_string(j));
        }
    }

    TrainResult result;
    result.initial_gap = task_gaps(tasks, theta0);
    SelectionResult sel = select_phase(tasks, theta0, cfg);
    result.selection_queries = sel.queries;
    result.coreset = sel.coreset;

    MetaState state{theta0, std::move(sel.coreset), 0, sel.queries};
    result.records.reserve(cfg.n_iters);
    for (std::size_t n = 0; n < cfg.n_iters; ++n) {
        auto [next, rec] = meta_step(state, tasks, cfg);
        const bool keep_going = !on_record || on_record(rec);
        result.records.push_back(std::move(rec));
        state = std::move(next);
        if (!keep_going) {
            break;
        }
    }
    result.theta_final = state.theta;
    result.total_queries = state.cum_queries;
    return result;
}

std::vector<std::vector<double>> adapt_and_test(const Matrix& theta_meta,
                                                const std::vector<TaskFunction>& tasks,
                                                std::size_t k_steps, double eta) {
    if (!(eta >= 0.0)) {
        throw ParameterError("adaptation step must be nonnegative");
    }
    std::vector<std::vector<double>> out;
    out.reserve(tasks.size());
    for (std::size_t j = 0; j < tasks.size(); ++j) {
        const auto& f = tasks[j];
        if (f.stable && !f.stable(theta_meta)) {
            throw StabilityViolation("meta parameter does not stabilize test task " +
                                     std::to_string(j));
        }
        std::vector<double> row;
        row.reserve(k_steps + 1);
        Matrix theta = theta_meta;
        row.push_back(f.gap ? f.gap(theta) : f.reward(theta));
        for (std::size_t k = 0; k < k_steps; ++k) {
            require_grad(f);
            theta += eta * f.exact_grad(theta);
            if (f.stable && !f.stable(theta)) {
                std::ostringstream os;
                os << "adaptation step " << k << " destabilized test task " << j
                   << "; reduce the adaptation step (now " << eta << ")";
                throw StabilityViolation(os.str());
            }
            row.push_back(f.gap ? f.gap(theta) : f.reward(theta));
        }
        out.push_back(std::move(row));
    }
    return out;
}

double selection_bias_snapshot(const std::vector<TaskFunction>& tasks, const Coreset& coreset,
                               const Matrix& theta) {
    GradientTable table;
    table.grads.reserve(tasks.size());
    for (const auto& f : tasks) {
        require_grad(f);
        table.grads.push_back(f.exact_grad(theta));
    }
    const Matrix D = pairwise_distances(table);
    return residual(D, coreset.indices) / static_cast<double>(tasks.size());
}

}  // namespace metacore
