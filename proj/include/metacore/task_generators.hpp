#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metacore/lqr.hpp"
#include "metacore/zeroth_order.hpp"

namespace metacore {

/// Uniform pairwise heterogeneity bounds on the task matrices (spectral norm).
struct Heterogeneity {
    double A = 0.0;
    double B = 0.0;
    double Q = 0.0;
    double R = 0.0;

    bool operator==(const Heterogeneity&) const = default;
};

struct PoolSpec {
    std::size_t M = 40;
    Eigen::Index d1 = 3;
    Eigen::Index d2 = 2;
    Heterogeneity eps;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LqrPool {
    LqrTask nominal;
    std::vector<LqrTask> tasks;
};

/// Spectral-norm cap of the nominal A. It bounds rho(A0) from above and keeps
/// |A_j| < 1 for every pool member while eps_A < 0.2.
inline constexpr double kNominalNormCap = 0.9;
inline constexpr double kREigenFloor = 0.01;

/// Draws a nominal system and M perturbed copies. Each matrix of each task is
/// the nominal plus a random perturbation of spectral norm at most eps / 2,
/// so every pairwise difference is at most eps. The draw is repeated (up to
/// 10 times) until the Riccati-optimal gain of the nominal stabilizes every
/// pool member; after that GenerationError.
LqrPool generate_lqr_pool(const PoolSpec& spec);

/// Perturbed copies of a given nominal system, drawn from `seed`. Used for
/// the training pool and for unseen meta-test tasks.
std::vector<LqrTask> perturb_tasks(const LqrTask& nominal, std::size_t count,
                                   const Heterogeneity& eps, std::uint64_t seed);

/// max over pairs of |X_i - X_j| (spectral norm) for each of A, B, Q, R.
Heterogeneity measured_heterogeneity(const std::vector<LqrTask>& tasks);

/// LQR task wrapped as a reward: reward(K) = -J(K) (-inf when K destabilizes),
/// exact_grad = -grad J, gap(K) = J(K) - J(K*), stable(K) = rho(A - BK) < 1.
TaskFunction lqr_task_function(const LqrTask& task, const Matrix& Sigma0);

std::vector<TaskFunction> lqr_task_functions(const std::vector<LqrTask>& tasks,
                                             const Matrix& Sigma0);

// Synthetic smooth, generally non-concave reward family.

struct SyntheticTaskSpec {
    Dims dims{4, 1};
    double center_radius = 1.0;   ///< centers drawn uniformly in this ball
    double curvature_min = 0.5;   ///< eigenvalue range of each H_i
    double curvature_max = 2.0;
    double alpha = 0.5;           ///< ripple amplitude; 0 gives a concave family
    Matrix frequency;             ///< ripple direction w, shape dims; empty = default

    void validate() const;
};

/// J(theta) = -1/2 <theta - c, H (theta - c)> + alpha cos(<w, theta>), with H
/// acting on the column-major flattening of theta.
class SyntheticTask {
public:
    SyntheticTask(Matrix center, Matrix curvature, double alpha, Matrix frequency);

    double reward(const Matrix& theta) const;
    Matrix gradient(const Matrix& theta) const;
    /// Upper bound on the gradient Lipschitz constant: lambda_max(H) + alpha |w|^2.
    double smoothness() const;

    const Matrix& center() const { return center_; }
    const Matrix& curvature() const { return curvature_; }
    double alpha() const { return alpha_; }
    const Matrix& frequency() const { return frequency_; }

    TaskFunction as_task_function() const;

private:
    Matrix center_;
    Matrix curvature_;
    double alpha_;
    Matrix frequency_;
};

std::vector<SyntheticTask> generate_synthetic_pool(const SyntheticTaskSpec& spec, std::size_t M,
                                                   std::uint64_t seed);

std::vector<TaskFunction> synthetic_task_functions(const std::vector<SyntheticTask>& tasks);

// Pool serialization ("metacore-pool-v1").

inline constexpr const char* kPoolFormat = "metacore-pool-v1";

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

nlohmann::json pool_to_json(const LqrPool& pool, const PoolSpec& spec);
/// Throws ParameterError on a wrong "format" tag or malformed document.
LqrPool pool_from_json(const nlohmann::json& j);

}  // namespace metacore
