#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace metacore {

using Matrix = Eigen::MatrixXd;

/// Per-task gradient snapshot g_j(theta_0), one entry per pool task.
struct GradientTable {
    std::vector<Matrix> grads;

    std::size_t pool_size() const { return grads.size(); }
};

/// Selected tasks and their integer weights. weights[k] counts the pool
/// tasks represented by indices[k]; the weights always sum to the pool size.
struct Coreset {
    std::vector<std::size_t> indices;
    std::vector<std::size_t> weights;
    std::size_t pool_size = 0;

    /// Throws ParameterError if an invariant does not hold.
    void validate() const;

    static Coreset identity(std::size_t pool_size);
};

/// D[j][i] = |g_j - g_i| in the operator (spectral) norm; |.| for 1x1 entries.
Matrix pairwise_distances(const GradientTable& table);

/// Sum over pool tasks of the distance to the nearest selected task.
double residual(const Matrix& D, const std::vector<std::size_t>& selected);

/// Residual of the empty selection under the facility-location convention
/// used for the approximation guarantee: M * max(D), i.e. every task served
/// by a phantom facility at the largest observed distance.
double empty_residual(const Matrix& D);

/// Greedy facility-location maximization under |S| <= L. The first pick is
/// the 1-medoid; each later pick maximizes the drop in residual. Ties go to
/// the lowest index. Requires 1 <= L <= M.
std::vector<std::size_t> greedy_select(const Matrix& D, std::size_t L);

/// Assigns every pool task to its nearest selected task and counts. A
/// selected task always represents itself; other ties go to the lowest task
/// index.
Coreset allocate_weights(const Matrix& D, const std::vector<std::size_t>& indices);

struct BruteForceResult {
    std::vector<std::size_t> indices;
    double residual = 0.0;
};

/// Exact minimizer of the residual over all C(M, L) subsets (lexicographically
/// first among ties). Refuses instances with more than 1e6 subsets.
BruteForceResult brute_force_select(const Matrix& D, std::size_t L);

}  // namespace metacore
