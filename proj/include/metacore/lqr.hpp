#pragma once

#include <limits>
#include <optional>

#include <Eigen/Dense>

namespace metacore {

using Matrix = Eigen::MatrixXd;

/// One discrete-time LQR instance x_{t+1} = A x_t + B u_t with stage cost
/// x'Qx + u'Ru. Validated on construction: Q symmetric PSD, R symmetric PD.
class LqrTask {
public:
    LqrTask(Matrix A, Matrix B, Matrix Q, Matrix R);

    const Matrix& A() const { return A_; }
    const Matrix& B() const { return B_; }
    const Matrix& Q() const { return Q_; }
    const Matrix& R() const { return R_; }

    Eigen::Index state_dim() const { return A_.rows(); }
    Eigen::Index input_dim() const { return B_.cols(); }

    bool operator==(const LqrTask& other) const;

private:
    Matrix A_;
    Matrix B_;
    Matrix Q_;
    Matrix R_;
};

/// Result of evaluating a gain on a task. When the closed loop is unstable,
/// value is +inf and P / sigma_K are empty.
struct CostReport {
    double value = std::numeric_limits<double>::infinity();
    std::optional<Matrix> P;
    std::optional<Matrix> sigma_K;
    bool stable = false;
};

/// Largest eigenvalue magnitude of a square matrix.
double spectral_radius(const Matrix& M);

/// Closed-loop matrix A - B K for the control law u = -K x.
Matrix closed_loop(const LqrTask& task, const Matrix& K);

/// True when rho(A - B K) < 1.
bool stabilizes(const LqrTask& task, const Matrix& K);

/// Solves P = A_cl' P A_cl + W for a Schur-stable A_cl.
///
/// Uses the squared (doubling) form of the fixed-point sum: after k rounds P
/// holds the first 2^k terms of sum_t (A_cl')^t W A_cl^t. Throws
/// InstabilityError when rho(A_cl) >= 1 - 1e-8, SolverError if the doubling
/// cap is hit or the final residual exceeds 1e-10 * max(1, |W|_F).
Matrix solve_discrete_lyapunov(const Matrix& A_cl, const Matrix& W);

/// Infinite-horizon cost E[sum_t x_t'(Q + K'RK)x_t] with E[x_0 x_0'] = Sigma0.
/// Instability is reported, not thrown.
CostReport lqr_cost(const LqrTask& task, const Matrix& K, const Matrix& Sigma0);

/// Cost value only (one Lyapunov solve); +inf when K does not stabilize.
double cost_value(const LqrTask& task, const Matrix& K, const Matrix& Sigma0);

/// Analytic policy gradient 2((R + B'PB)K - B'PA) Sigma_K. Throws
/// InstabilityError if K does not stabilize the task.
Matrix exact_gradient(const LqrTask& task, const Matrix& K, const Matrix& Sigma0);

/// Cost and gradient together, sharing the Lyapunov solves.
struct CostAndGradient {
    double cost;
    Matrix gradient;
};
CostAndGradient cost_and_gradient(const LqrTask& task, const Matrix& K, const Matrix& Sigma0);

/// Optimal gain via value iteration on the discrete Riccati map, started at
/// P = Q and run until successive iterates differ by at most 1e-12
/// (relative to max(1, |P|_F)).
Matrix riccati_optimal(const LqrTask& task);

}  // namespace metacore
