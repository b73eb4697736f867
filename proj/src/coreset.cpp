#include "metacore/coreset.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "metacore/errors.hpp"

namespace metacore {
namespace {

double operator_norm(const Matrix& m) {
    if (m.size() == 1) {
        return std::abs(m(0, 0));
    }
    if (m.rows() == 1 || m.cols() == 1) {
        return m.norm();
    }
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues()(0);
}

void require_square(const Matrix& D) {
    if (D.rows() != D.cols() || D.rows() == 0) {
        throw DimensionError("distance matrix must be square and nonempty");
    }
}

}  // namespace

void Coreset::validate() const {
    if (indices.empty() || indices.size() > pool_size) {
        throw ParameterError("coreset size must be within [1, M]");
    }
    if (weights.size() != indices.size()) {
        throw ParameterError("coreset needs one weight per index");
    }
    std::vector<bool> seen(pool_size, false);
    for (const auto i : indices) {
        if (i >= pool_size || seen[i]) {
            throw ParameterError("coreset indices must be distinct and below M");
        }
        seen[i] = true;
    }
    std::size_t total = 0;
    for (const auto w : weights) {
        if (w == 0) {
            throw ParameterError("coreset weights must be positive");
        }
        total += w;
    }
    if (total != pool_size) {
        throw ParameterError("coreset weights must sum to M");
    }
}

Coreset Coreset::identity(std::size_t pool_size) {
    Coreset c;
    c.pool_size = pool_size;
    c.indices.resize(pool_size);
    std::iota(c.indices.begin(), c.indices.end(), std::size_t{0});
    c.weights.assign(pool_size, 1);
    return c;
}

Matrix pairwise_distances(const GradientTable& table) {
    const auto M = static_cast<Eigen::Index>(table.pool_size());
    if (M == 0) {
        throw DimensionError("gradient table is empty");
    }
    const auto rows = table.grads.front().rows();
    const auto cols = table.grads.front().cols();
    for (const auto& g : table.grads) {
        if (g.rows() != rows || g.cols() != cols) {
            throw DimensionError("gradient table entries have mismatched shapes");
        }
    }
    Matrix D = Matrix::Zero(M, M);
    for (Eigen::Index j = 0; j < M; ++j) {
        for (Eigen::Index i = j + 1; i < M; ++i) {
            const double d = operator_norm(table.grads[j] - table.grads[i]);
            D(j, i) = d;
            D(i, j) = d;
        }
    }
    return D;
}

double residual(const Matrix& D, const std::vector<std::size_t>& selected) {
    require_square(D);
    if (selected.empty()) {
        return std::numeric_limits<double>::infinity();
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < D.rows(); ++j) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto i : selected) {
            best = std::min(best, D(j, static_cast<Eigen::Index>(i)));
        }
        total += best;
    }
    return total;
}

double empty_residual(const Matrix& D) {
    require_square(D);
    return static_cast<double>(D.rows()) * D.maxCoeff();
}

std::vector<std::size_t> greedy_select(const Matrix& D, std::size_t L) {
    require_square(D);
    const auto M = static_cast<std::size_t>(D.rows());
    if (L < 1 || L > M) {
        throw ParameterError("greedy_select: L = " + std::to_string(L) + " outside [1, " +
                             std::to_string(M) + "]");
    }
    // nearest[j] = min over selected i of D(j, i); +inf before the first pick
    // makes the first pick the 1-medoid.
    std::vector<double> nearest(M, std::numeric_limits<double>::infinity());
    std::vector<bool> chosen(M, false);
    std::vector<std::size_t> picks;
    picks.reserve(L);

    while (picks.size() < L) {
        std::size_t best = M;
        double best_cost = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < M; ++i) {
            if (chosen[i]) {
                continue;
            }
            double cost = 0.0;
            for (std::size_t j = 0; j < M; ++j) {
                cost += std::min(nearest[j], D(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)));
            }
            if (cost < best_cost) {
                best_cost = cost;
                best = i;
            }
        }
        chosen[best] = true;
        picks.push_back(best);
        for (std::size_t j = 0; j < M; ++j) {
            nearest[j] = std::min(nearest[j], D(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(best)));
        }
    }
    return picks;
}

Coreset allocate_weights(const Matrix& D, const std::vector<std::size_t>& indices) {
    require_square(D);
    const auto M = static_cast<std::size_t>(D.rows());
    if (indices.empty()) {
        throw ParameterError("allocate_weights needs at least one selected task");
    }
    std::vector<std::size_t> slot_of(M, M);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= M || slot_of[indices[k]] != M) {
            throw ParameterError("selected indices must be distinct and below M");
        }
        slot_of[indices[k]] = k;
    }

    Coreset c;
    c.pool_size = M;
    c.indices = indices;
    c.weights.assign(indices.size(), 0);
    for (std::size_t j = 0; j < M; ++j) {
        if (slot_of[j] != M) {
            ++c.weights[slot_of[j]];
            continue;
        }
        std::size_t best_slot = 0;
        std::size_t best_task = M;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < indices.size(); ++k) {
            const double d = D(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(indices[k]));
            if (d < best || (d == best && indices[k] < best_task)) {
                best = d;
                best_slot = k;
                best_task = indices[k];
            }
        }
        ++c.weights[best_slot];
    }
    return c;
}

BruteForceResult brute_force_select(const Matrix& D, std::size_t L) {
    require_square(D);
    const auto M = static_cast<std::size_t>(D.rows());
    if (L < 1 || L > M) {
        throw ParameterError("brute_force_select: L outside [1, M]");
    }
    // C(M, L) with early exit past the limit.
    constexpr double kLimit = 1e6;
    double subsets = 1.0;
    for (std::size_t k = 0; k < L; ++k) {
        subsets = subsets * static_cast<double>(M - k) / static_cast<double>(k + 1);
    }
    if (subsets > kLimit) {
        throw ParameterError("brute_force_select: C(M, L) exceeds 1e6 subsets");
    }

    std::vector<std::size_t> current(L);
    std::iota(current.begin(), current.end(), std::size_t{0});
    BruteForceResult best{current, residual(D, current)};
    while (true) {
        // Advance to the next combination in lexicographic order.
        std::size_t pos = L;
        while (pos > 0 && current[pos - 1] == M - L + (pos - 1)) {
            --pos;
        }
        if (pos == 0) {
            break;
        }
        ++current[pos - 1];
        for (std::size_t k = pos; k < L; ++k) {
            current[k] = current[k - 1] + 1;
        }
        const double r = residual(D, current);
        if (r < best.residual) {
            best = {current, r};
        }
    }
    return best;
}

}  // namespace metacore
