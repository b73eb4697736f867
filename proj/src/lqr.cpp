#include "metacore/lqr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "metacore/errors.hpp"

namespace metacore {
namespace {

constexpr double kSymmetryTol = 1e-12;
constexpr double kStabilityMargin = 1e-8;
constexpr double kLyapunovResidualTol = 1e-10;

std::string shape(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

void require_finite(const Matrix& m, const char* name) {
    if (!m.allFinite()) {
        throw ParameterError(std::string(name) + " has non-finite entries");
    }
}

void require_symmetric(const Matrix& m, const char* name) {
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol * scale) {
        throw ParameterError(std::string(name) + " is not symmetric");
    }
}

double min_eigenvalue(const Matrix& sym) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

LqrTask::LqrTask(Matrix A, Matrix B, Matrix Q, Matrix R)
    : A_(std::move(A)), B_(std::move(B)), Q_(std::move(Q)), R_(std::move(R)) {
    const auto n = A_.rows();
    const auto m = B_.cols();
    if (A_.cols() != n || B_.rows() != n || Q_.rows() != n || Q_.cols() != n || R_.rows() != m ||
        R_.cols() != m || n == 0 || m == 0) {
        throw DimensionError("inconsistent LQR dimensions: A " + shape(A_) + ", B " + shape(B_) +
                             ", Q " + shape(Q_) + ", R " + shape(R_));
    }
    require_finite(A_, "A");
    require_finite(B_, "B");
    require_finite(Q_, "Q");
    require_finite(R_, "R");
    require_symmetric(Q_, "Q");
    require_symmetric(R_, "R");
    const double q_scale = std::max(1.0, Q_.norm());
    if (min_eigenvalue(Q_) < -kSymmetryTol * q_scale) {
        throw ParameterError("Q is not positive semidefinite");
    }
    if (min_eigenvalue(R_) <= 0.0) {
        throw ParameterError("R is not positive definite");
    }
}

bool LqrTask::operator==(const LqrTask& other) const {
    return A_ == other.A_ && B_ == other.B_ && Q_ == other.Q_ && R_ == other.R_;
}

double spectral_radius(const Matrix& M) {
    if (M.rows() != M.cols()) {
        throw DimensionError("spectral_radius needs a square matrix, got " + shape(M));
    }
    require_finite(M, "matrix");
    if (M.size() == 0) {
        return 0.0;
    }
    if (M.rows() == 1) {
        return std::abs(M(0, 0));
    }
    Eigen::EigenSolver<Matrix> es(M, /*computeEigenvectors=*/false);
    if (es.info() != Eigen::Success) {
        throw SolverError("eigenvalue iteration did not converge");
    }
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

Matrix closed_loop(const LqrTask& task, const Matrix& K) {
    if (K.rows() != task.input_dim() || K.cols() != task.state_dim()) {
        throw DimensionError("gain must be " + std::to_string(task.input_dim()) + "x" +
                             std::to_string(task.state_dim()) + ", got " + shape(K));
    }
    return task.A() - task.B() * K;
}

bool stabilizes(const LqrTask& task, const Matrix& K) {
    if (!K.allFinite()) {
        return false;
    }
    return spectral_radius(closed_loop(task, K)) < 1.0;
}

Matrix solve_discrete_lyapunov(const Matrix& A_cl, const Matrix& W) {
    if (A_cl.rows() != A_cl.cols() || W.rows() != A_cl.rows() || W.cols() != A_cl.cols()) {
        throw DimensionError("solve_discrete_lyapunov: A_cl " + shape(A_cl) + ", W " + shape(W));
    }
    require_finite(W, "W");
    const double rho = spectral_radius(A_cl);
    if (rho >= 1.0 - kStabilityMargin) {
        std::ostringstream os;
        os << "closed loop is not Schur stable (spectral radius " << rho << ")";
        throw InstabilityError(os.str());
    }

    // Plain fixed-point iteration would need about this many sweeps; each
    // doubling round covers twice as many terms as the previous one.
    const double tol = std::numeric_limits<double>::epsilon();
    const double rho_hat = std::max(rho, 1e-3);
    const double sweeps = 100.0 * static_cast<double>(A_cl.rows()) * std::log(1.0 / tol) /
                          std::log(1.0 / rho_hat);
    const int max_rounds = static_cast<int>(std::ceil(std::log2(std::max(sweeps, 2.0)))) + 8;

    Matrix P = W;
    Matrix Ak = A_cl;
    bool converged = false;
    for (int round = 0; round < max_rounds; ++round) {
        const Matrix increment = Ak.transpose() * P * Ak;
        P += increment;
        if (increment.norm() <= tol * P.norm()) {
            converged = true;
            break;
        }
        Ak = Ak * Ak;
    }
    if (!converged || !P.allFinite()) {
        throw SolverError("Lyapunov doubling did not converge");
    }
    P = symmetrize(P);

    const double residual = (A_cl.transpose() * P * A_cl - P + W).norm();
    const double bound = kLyapunovResidualTol * std::max(1.0, W.norm());
    if (residual > bound) {
        std::ostringstream os;
        os << "Lyapunov residual " << residual << " exceeds " << bound;
        throw SolverError(os.str());
    }
    return P;
}

CostReport lqr_cost(const LqrTask& task, const Matrix& K, const Matrix& Sigma0) {
    CostReport report;
    if (!K.allFinite()) {
        return report;
    }
    const Matrix A_cl = closed_loop(task, K);
    const Matrix W = task.Q() + K.transpose() * task.R() * K;
    try {
        Matrix P = solve_discrete_lyapunov(A_cl, W);
        Matrix sigma = solve_discrete_lyapunov(A_cl.transpose(), Sigma0);
        report.value = (P * Sigma0).trace();
        report.P = std::move(P);
        report.sigma_K = std::move(sigma);
        report.stable = true;
    } catch (const InstabilityError&) {
        return CostReport{};
    } catch (const SolverError&) {
        // Numerically indistinguishable from the stability boundary.
        return CostReport{};
    }
    return report;
}

double cost_value(const LqrTask& task, const Matrix& K, const Matrix& Sigma0) {
    if (!K.allFinite()) {
        return std::numeric_limits<double>::infinity();
    }
    const Matrix A_cl = closed_loop(task, K);
    const Matrix W = task.Q() + K.transpose() * task.R() * K;
    try {
        return (solve_discrete_lyapunov(A_cl, W) * Sigma0).trace();
    } catch (const InstabilityError&) {
    } catch (const SolverError&) {
    }
    return std::numeric_limits<double>::infinity();
}

CostAndGradient cost_and_gradient(const LqrTask& task, const Matrix& K, const Matrix& Sigma0) {
    const Matrix A_cl = closed_loop(task, K);
    const Matrix W = task.Q() + K.transpose() * task.R() * K;
    const Matrix P = solve_discrete_lyapunov(A_cl, W);
    const Matrix sigma = solve_discrete_lyapunov(A_cl.transpose(), Sigma0);
    const Matrix& A = task.A();
    const Matrix& B = task.B();
    const Matrix BtP = B.transpose() * P;
    Matrix grad = 2.0 * ((task.R() + BtP * B) * K - BtP * A) * sigma;
    return {(P * Sigma0).trace(), std::move(grad)};
}

Matrix exact_gradient(const LqrTask& task, const Matrix& K, const Matrix& Sigma0) {
    return cost_and_gradient(task, K, Sigma0).gradient;
}

Matrix riccati_optimal(const LqrTask& task) {
    constexpr int kMaxIterations = 200000;
    constexpr double kTol = 1e-12;
    const Matrix& A = task.A();
    const Matrix& B = task.B();
    const Matrix At = A.transpose();

    Matrix P = task.Q();
    for (int it = 0; it < kMaxIterations; ++it) {
        const Matrix BtP = B.transpose() * P;
        const Matrix gain = (task.R() + BtP * B).ldlt().solve(BtP * A);
        Matrix next = symmetrize(task.Q() + At * P * A - At * P * B * gain);
        if (!next.allFinite()) {
            break;
        }
        const double change = (next - P).norm();
        P = std::move(next);
        if (change <= kTol * std::max(1.0, P.norm())) {
            const Matrix BtPn = B.transpose() * P;
            Matrix K = (task.R() + BtPn * B).ldlt().solve(BtPn * A);
            if (!stabilizes(task, K)) {
                break;
            }
            return K;
        }
    }
    throw SolverError("Riccati value iteration did not converge; (A, B) may not be stabilizable");
}

}  // namespace metacore
