#include "metacore/task_generators.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "metacore/errors.hpp"
#include "metacore/rng.hpp"

namespace metacore {
namespace {

constexpr int kMaxRedraws = 10;

enum class Part : std::uint64_t { A = 1, B = 2, Q = 3, R = 4 };

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, StreamRng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
            m(i, j) = normal(rng);
        }
    }
    return m;
}

double spectral_norm(const Matrix& m) {
    if (m.size() == 0) {
        return 0.0;
    }
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues()(0);
}

bool controllable(const Matrix& A, const Matrix& B) {
    const auto n = A.rows();
    Matrix ctrb(n, n * B.cols());
    Matrix block = B;
    for (Eigen::Index k = 0; k < n; ++k) {
        ctrb.middleCols(k * B.cols(), B.cols()) = block;
        block = A * block;
    }
    Eigen::JacobiSVD<Matrix> svd(ctrb);
    const auto& s = svd.singularValues();
    return s(n - 1) > 1e-6 * s(0);
}

/// Random perturbation with spectral norm uniform in [0, radius]; symmetric
/// when requested.
Matrix perturbation(Eigen::Index rows, Eigen::Index cols, bool symmetric, double radius,
                    StreamRng& rng) {
    Matrix delta = gaussian(rows, cols, rng);
    if (symmetric) {
        delta = 0.5 * (delta + delta.transpose()).eval();
    }
    const double scale = radius * std::generate_canonical<double, 53>(rng);
    const double norm = spectral_norm(delta);
    if (norm == 0.0) {
        return Matrix::Zero(rows, cols);
    }
    return delta * (scale / norm);
}

Matrix floor_eigenvalues(const Matrix& sym, double floor) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    if (es.eigenvalues().minCoeff() >= floor) {
        return sym;
    }
    const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(floor);
    Matrix out = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (out + out.transpose());
}

Matrix perturbed(const Matrix& base, double eps, bool symmetric, std::uint64_t key) {
    if (eps == 0.0) {
        return base;
    }
    StreamRng rng(key);
    return base + perturbation(base.rows(), base.cols(), symmetric, 0.5 * eps, rng);
}

LqrTask draw_nominal(Eigen::Index d1, Eigen::Index d2, std::uint64_t key) {
    for (std::uint64_t sub = 0;; ++sub) {
        StreamRng rng(derive_key(key, {sub}));
        Matrix A = gaussian(d1, d1, rng);
        Matrix B = gaussian(d1, d2, rng);
        A *= kNominalNormCap / spectral_norm(A);
        B /= spectral_norm(B);
        if (controllable(A, B)) {
            return LqrTask(std::move(A), std::move(B), Matrix::Identity(d1, d1),
                           Matrix::Identity(d2, d2));
        }
    }
}

void require_nonnegative(double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
        throw ParameterError(std::string("heterogeneity bound ") + name +
                             " must be nonnegative and finite");
    }
}

}  // namespace

void PoolSpec::validate() const {
    if (M < 1) {
        throw ParameterError("pool size M must be at least 1");
    }
    if (d1 < 1 || d2 < 1) {
        throw ParameterError("state and input dimensions must be positive");
    }
    require_nonnegative(eps.A, "eps_A");
    require_nonnegative(eps.B, "eps_B");
    require_nonnegative(eps.Q, "eps_Q");
    require_nonnegative(eps.R, "eps_R");
}

std::vector<LqrTask> perturb_tasks(const LqrTask& nominal, std::size_t count,
                                   const Heterogeneity& eps, std::uint64_t seed) {
    std::vector<LqrTask> tasks;
    tasks.reserve(count);
    for (std::size_t j = 0; j < count; ++j) {
        const auto part_key = [&](Part p) {
            return derive_key(seed, {j, static_cast<std::uint64_t>(p)});
        };
        Matrix A = perturbed(nominal.A(), eps.A, false, part_key(Part::A));
        Matrix B = perturbed(nominal.B(), eps.B, false, part_key(Part::B));
        Matrix Q = perturbed(nominal.Q(), eps.Q, true, part_key(Part::Q));
        Matrix R = perturbed(nominal.R(), eps.R, true, part_key(Part::R));
        if (eps.Q != 0.0) {
            Q = floor_eigenvalues(Q, 0.0);
        }
        if (eps.R != 0.0) {
            R = floor_eigenvalues(R, kREigenFloor);
        }
        tasks.emplace_back(std::move(A), std::move(B), std::move(Q), std::move(R));
    }
    return tasks;
}

LqrPool generate_lqr_pool(const PoolSpec& spec) {
    spec.validate();
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
        const auto a = static_cast<std::uint64_t>(attempt);
        LqrTask nominal = draw_nominal(spec.d1, spec.d2, derive_key(spec.seed, {a, 0}));
        std::vector<LqrTask> tasks =
            perturb_tasks(nominal, spec.M, spec.eps, derive_key(spec.seed, {a, 1}));
        Matrix K0;
        try {
            K0 = riccati_optimal(nominal);
        } catch (const SolverError&) {
            continue;
        }
        const bool all_stable = std::all_of(tasks.begin(), tasks.end(),
                                            [&](const LqrTask& t) { return stabilizes(t, K0); });
        if (all_stable) {
            return LqrPool{std::move(nominal), std::move(tasks)};
        }
    }
    throw GenerationError("could not draw a pool stabilized by the nominal optimal gain after " +
                          std::to_string(kMaxRedraws) +
                          " attempts; reduce the heterogeneity bounds eps_het");
}

Heterogeneity measured_heterogeneity(const std::vector<LqrTask>& tasks) {
    Heterogeneity h;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        for (std::size_t j = i + 1; j < tasks.size(); ++j) {
            h.A = std::max(h.A, spectral_norm(tasks[i].A() - tasks[j].A()));
            h.B = std::max(h.B, spectral_norm(tasks[i].B() - tasks[j].B()));
            h.Q = std::max(h.Q, spectral_norm(tasks[i].Q() - tasks[j].Q()));
            h.R = std::max(h.R, spectral_norm(tasks[i].R() - tasks[j].R()));
        }
    }
    return h;
}

TaskFunction lqr_task_function(const LqrTask& task, const Matrix& Sigma0) {
    const double optimal = lqr_cost(task, riccati_optimal(task), Sigma0).value;
    TaskFunction f;
    f.dims = {task.input_dim(), task.state_dim()};
    f.reward = [task, Sigma0](const Matrix& K) { return -cost_value(task, K, Sigma0); };
    f.exact_grad = [task, Sigma0](const Matrix& K) -> Matrix {
        return -exact_gradient(task, K, Sigma0);
    };
    f.gap = [task, Sigma0, optimal](const Matrix& K) {
        return cost_value(task, K, Sigma0) - optimal;
    };
    f.stable = [task](const Matrix& K) { return stabilizes(task, K); };
    return f;
}

std::vector<TaskFunction> lqr_task_functions(const std::vector<LqrTask>& tasks,
                                             const Matrix& Sigma0) {
    std::vector<TaskFunction> out;
    out.reserve(tasks.size());
    for (const auto& t : tasks) {
        out.push_back(lqr_task_function(t, Sigma0));
    }
    return out;
}

// ---------------------------------------------------------------------------

void SyntheticTaskSpec::validate() const {
    if (dims.rows < 1 || dims.cols < 1) {
        throw ParameterError("synthetic parameter shape must be nonempty");
    }
    if (!(center_radius >= 0.0)) {
        throw ParameterError("center radius must be nonnegative");
    }
    if (!(curvature_min > 0.0) || !(curvature_max >= curvature_min)) {
        throw ParameterError("curvature range must satisfy 0 < min <= max");
    }
    if (!(alpha >= 0.0)) {
        throw ParameterError("ripple amplitude must be nonnegative");
    }
    if (frequency.size() != 0 && (frequency.rows() != dims.rows || frequency.cols() != dims.cols)) {
        throw DimensionError("ripple frequency must match the parameter shape");
    }
}

SyntheticTask::SyntheticTask(Matrix center, Matrix curvature, double alpha, Matrix frequency)
    : center_(std::move(center)),
      curvature_(std::move(curvature)),
      alpha_(alpha),
      frequency_(std::move(frequency)) {
    const auto d = center_.size();
    if (curvature_.rows() != d || curvature_.cols() != d) {
        throw DimensionError("curvature must be d x d for d = number of parameters");
    }
    if (frequency_.rows() != center_.rows() || frequency_.cols() != center_.cols()) {
        throw DimensionError("ripple frequency must match the parameter shape");
    }
    if ((curvature_ - curvature_.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw ParameterError("curvature must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(curvature_, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 0.0) {
        throw ParameterError("curvature must be positive definite");
    }
    if (!(alpha_ >= 0.0)) {
        throw ParameterError("ripple amplitude must be nonnegative");
    }
}

double SyntheticTask::reward(const Matrix& theta) const {
    const Eigen::Map<const Eigen::VectorXd> x(theta.data(), theta.size());
    const Eigen::Map<const Eigen::VectorXd> c(center_.data(), center_.size());
    const Eigen::VectorXd diff = x - c;
    const double phase = (frequency_.array() * theta.array()).sum();
    return -0.5 * diff.dot(curvature_ * diff) + alpha_ * std::cos(phase);
}

Matrix SyntheticTask::gradient(const Matrix& theta) const {
    const Eigen::Map<const Eigen::VectorXd> x(theta.data(), theta.size());
    const Eigen::Map<const Eigen::VectorXd> c(center_.data(), center_.size());
    const Eigen::VectorXd g = -(curvature_ * (x - c));
    const double phase = (frequency_.array() * theta.array()).sum();
    Matrix out = Eigen::Map<const Matrix>(g.data(), theta.rows(), theta.cols());
    out -= alpha_ * std::sin(phase) * frequency_;
    return out;
}

double SyntheticTask::smoothness() const {
    Eigen::SelfAdjointEigenSolver<Matrix> es(curvature_, Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff() + alpha_ * frequency_.squaredNorm();
}

TaskFunction SyntheticTask::as_task_function() const {
    TaskFunction f;
    f.dims = {center_.rows(), center_.cols()};
    f.reward = [task = *this](const Matrix& theta) { return task.reward(theta); };
    f.exact_grad = [task = *this](const Matrix& theta) { return task.gradient(theta); };
    return f;
}

std::vector<SyntheticTask> generate_synthetic_pool(const SyntheticTaskSpec& spec, std::size_t M,
                                                   std::uint64_t seed) {
    spec.validate();
    if (M < 1) {
        throw ParameterError("pool size M must be at least 1");
    }
    const auto rows = spec.dims.rows;
    const auto cols = spec.dims.cols;
    const auto d = spec.dims.size();

    Matrix w = spec.frequency;
    if (w.size() == 0) {
        // Unit-norm default direction shared by every task.
        w = Matrix::Constant(rows, cols, 1.0 / std::sqrt(static_cast<double>(d)));
    }

    std::vector<SyntheticTask> pool;
    pool.reserve(M);
    for (std::size_t i = 0; i < M; ++i) {
        StreamRng rng(derive_key(seed, {i}));
        Matrix dir = gaussian(rows, cols, rng);
        const double u = std::generate_canonical<double, 53>(rng);
        const double radius =
            spec.center_radius * std::pow(u, 1.0 / static_cast<double>(d));
        const double n = dir.norm();
        Matrix center = n > 0.0 ? Matrix(dir * (radius / n)) : Matrix::Zero(rows, cols);

        const Matrix basis = gaussian(d, d, rng);
        const Eigen::HouseholderQR<Matrix> qr(basis);
        const Matrix Qm = qr.householderQ();
        Eigen::VectorXd lam(d);
        for (Eigen::Index k = 0; k < d; ++k) {
            lam(k) = spec.curvature_min +
                     (spec.curvature_max - spec.curvature_min) *
                         std::generate_canonical<double, 53>(rng);
        }
        Matrix H = Qm * lam.asDiagonal() * Qm.transpose();
        H = 0.5 * (H + H.transpose()).eval();
        pool.emplace_back(std::move(center), std::move(H), spec.alpha, w);
    }
    return pool;
}

std::vector<TaskFunction> synthetic_task_functions(const std::vector<SyntheticTask>& tasks) {
    std::vector<TaskFunction> out;
    out.reserve(tasks.size());
    for (const auto& t : tasks) {
        out.push_back(t.as_task_function());
    }
    return out;
}

// ---------------------------------------------------------------------------

nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json data = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            data.push_back(m(i, j));
        }
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
    try {
        const auto rows = j.at("rows").get<Eigen::Index>();
        const auto cols = j.at("cols").get<Eigen::Index>();
        const auto& data = j.at("data");
        if (rows < 0 || cols < 0 || !data.is_array() ||
            data.size() != static_cast<std::size_t>(rows * cols)) {
            throw ParameterError("matrix entry count does not match rows x cols");
        }
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index k = 0; k < cols; ++k) {
                m(i, k) = data[static_cast<std::size_t>(i * cols + k)].get<double>();
            }
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string("malformed matrix: ") + e.what());
    }
}

namespace {

nlohmann::json task_to_json(const LqrTask& t) {
    return {{"A", matrix_to_json(t.A())},
            {"B", matrix_to_json(t.B())},
            {"Q", matrix_to_json(t.Q())},
            {"R", matrix_to_json(t.R())}};
}

LqrTask task_from_json(const nlohmann::json& j) {
    return LqrTask(matrix_from_json(j.at("A")), matrix_from_json(j.at("B")),
                   matrix_from_json(j.at("Q")), matrix_from_json(j.at("R")));
}

}  // namespace

nlohmann::json pool_to_json(const LqrPool& pool, const PoolSpec& spec) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : pool.tasks) {
        tasks.push_back(task_to_json(t));
    }
    return {{"format", kPoolFormat},
            {"spec",
             {{"M", spec.M},
              {"d1", spec.d1},
              {"d2", spec.d2},
              {"eps_het", {spec.eps.A, spec.eps.B, spec.eps.Q, spec.eps.R}},
              {"seed", spec.seed}}},
            {"nominal", task_to_json(pool.nominal)},
            {"tasks", std::move(tasks)}};
}

LqrPool pool_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("format") || j.at("format") != kPoolFormat) {
        throw ParameterError(std::string("pool document is not ") + kPoolFormat);
    }
    try {
        LqrTask nominal = task_from_json(j.at("nominal"));
        std::vector<LqrTask> tasks;
        for (const auto& t : j.at("tasks")) {
            tasks.push_back(task_from_json(t));
        }
        return LqrPool{std::move(nominal), std::move(tasks)};
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string("malformed pool document: ") + e.what());
    }
}

}  // namespace metacore
