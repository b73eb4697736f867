#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include <Eigen/Dense>

#include "metacore/rng.hpp"

namespace metacore {

using Matrix = Eigen::MatrixXd;

/// Shape of a matrix-valued parameter.
struct Dims {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;

    Eigen::Index size() const { return rows * cols; }
    bool operator==(const Dims&) const = default;
};

/// A task seen through its reward. The trainer always maximizes reward; cost
/// minimization problems are wrapped as reward = -cost.
///
/// `reward` must be deterministic and return -inf exactly when the parameter
/// is invalid (e.g. a destabilizing gain). The remaining callables are
/// optional: `exact_grad` feeds oracle mode and diagnostics, `gap` is the
/// optimality gap reported in training records, and `stable` is the
/// stability predicate the trainer guards on every iteration.
struct TaskFunction {
    Dims dims;
    std::function<double(const Matrix&)> reward;
    std::function<Matrix(const Matrix&)> exact_grad;
    std::function<double(const Matrix&)> gap;
    std::function<bool(const Matrix&)> stable;

    double operator()(const Matrix& theta) const { return reward(theta); }
    bool has_exact_grad() const { return static_cast<bool>(exact_grad); }
};

struct ZoConfig {
    std::size_t n_s = 100;  ///< probe directions per estimate
    double r = 1e-2;        ///< smoothing radius (Frobenius norm of each probe)
    double eta_inn = 0.0;   ///< inner adaptation step
    std::uint64_t seed = 0;

    void validate() const;
};

struct GradientEstimate {
    Matrix g;
    std::size_t queries_used = 0;
    std::size_t failures = 0;
};

/// Uniform draw from the sphere {V : |V|_F = r}: Gaussian fill, then rescale.
Matrix sample_sphere(Dims dims, double r, StreamRng& rng);

/// Two-point estimate (d / (2 n_s r^2)) sum_l (f(theta + v_l) - f(theta - v_l)) v_l.
///
/// Probe l draws its direction from the sub-stream derive_key(stream, {l});
/// a probe whose reward is -inf on either side is replaced with a fresh
/// direction from a later sub-stream. More than 10 * n_s replacements raises
/// ProbeInstabilityError.
GradientEstimate zo2p(const TaskFunction& f, const Matrix& theta, const ZoConfig& cfg,
                      std::uint64_t stream);

/// zo2p on the stream derived from cfg.seed alone.
GradientEstimate zo2p(const TaskFunction& f, const Matrix& theta, const ZoConfig& cfg);

/// Key of stage 1 (plain estimate) or stage 2 (estimate at the adapted point)
/// of inner_adapted_estimate.
std::uint64_t stage_stream(std::uint64_t stream, int stage);

/// g = ZO2P at theta + eta_inn * ZO2P(theta). Query counts of both stages add.
GradientEstimate inner_adapted_estimate(const TaskFunction& f, const Matrix& theta,
                                        const ZoConfig& cfg, std::uint64_t stream);

}  // namespace metacore
