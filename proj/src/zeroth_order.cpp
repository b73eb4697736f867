#include "metacore/zeroth_order.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "metacore/errors.hpp"

namespace metacore {

void ZoConfig::validate() const {
    if (n_s < 1) {
        throw ParameterError("n_s must be at least 1");
    }
    if (!(r > 0.0) || !std::isfinite(r)) {
        throw ParameterError("smoothing radius r must be positive and finite");
    }
    if (!(eta_inn >= 0.0) || !std::isfinite(eta_inn)) {
        throw ParameterError("eta_inn must be nonnegative and finite");
    }
}

Matrix sample_sphere(Dims dims, double r, StreamRng& rng) {
    if (!(r > 0.0) || !std::isfinite(r)) {
        throw ParameterError("sphere radius must be positive and finite");
    }
    if (dims.size() <= 0) {
        throw DimensionError("sphere sample needs a nonempty shape");
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix v(dims.rows, dims.cols);
    double norm = 0.0;
    do {
        for (Eigen::Index j = 0; j < v.cols(); ++j) {
            for (Eigen::Index i = 0; i < v.rows(); ++i) {
                v(i, j) = normal(rng);
            }
        }
        norm = v.norm();
    } while (norm == 0.0);
    return v * (r / norm);
}

GradientEstimate zo2p(const TaskFunction& f, const Matrix& theta, const ZoConfig& cfg,
                      std::uint64_t stream) {
    cfg.validate();
    if (theta.rows() != f.dims.rows || theta.cols() != f.dims.cols) {
        throw DimensionError("parameter shape does not match the task");
    }
    const std::size_t max_retries = 10 * cfg.n_s;
    GradientEstimate est;
    est.g = Matrix::Zero(theta.rows(), theta.cols());

    std::uint64_t next_spare = cfg.n_s;
    for (std::size_t l = 0; l < cfg.n_s; ++l) {
        std::uint64_t sub = l;
        while (true) {
            StreamRng rng(derive_key(stream, {sub}));
            const Matrix v = sample_sphere(f.dims, cfg.r, rng);
            const double plus = f(theta + v);
            ++est.queries_used;
            double minus = -std::numeric_limits<double>::infinity();
            if (std::isfinite(plus)) {
                minus = f(theta - v);
                ++est.queries_used;
            }
            if (std::isfinite(plus) && std::isfinite(minus)) {
                est.g += (plus - minus) * v;
                break;
            }
            ++est.failures;
            if (est.failures > max_retries) {
                std::ostringstream os;
                os << "zeroth-order probes left the valid region " << est.failures
                   << " times (cap " << max_retries << "); reduce the smoothing radius r (now "
                   << cfg.r << ") so probes stay inside the stabilizing sub-level set";
                throw ProbeInstabilityError(os.str());
            }
            sub = next_spare++;
        }
    }
    const double d = static_cast<double>(f.dims.size());
    est.g *= d / (2.0 * static_cast<double>(cfg.n_s) * cfg.r * cfg.r);
    return est;
}

GradientEstimate zo2p(const TaskFunction& f, const Matrix& theta, const ZoConfig& cfg) {
    return zo2p(f, theta, cfg, derive_key(cfg.seed, {}));
}

std::uint64_t stage_stream(std::uint64_t stream, int stage) {
    return derive_key(stream, {0x5747u, static_cast<std::uint64_t>(stage)});
}

GradientEstimate inner_adapted_estimate(const TaskFunction& f, const Matrix& theta,
                                        const ZoConfig& cfg, std::uint64_t stream) {
    GradientEstimate first = zo2p(f, theta, cfg, stage_stream(stream, 1));
    GradientEstimate second = zo2p(f, theta + cfg.eta_inn * first.g, cfg, stage_stream(stream, 2));
    second.queries_used += first.queries_used;
    second.failures += first.failures;
    return second;
}

}  // namespace metacore
