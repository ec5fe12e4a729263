#ifndef TPI_RICCATI_HPP_
#define TPI_RICCATI_HPP_

#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "tpi/types.hpp"

namespace tpi {

/// The game Riccati iteration found no stabilizing solution.
class GareSolveError : public std::runtime_error {
 public:
  GareSolveError(const std::string& what, double residual, int iterations)
      : std::runtime_error(what), residual_(residual), iterations_(iterations) {}
  double residual() const { return residual_; }
  int iterations() const { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

struct GareSolution {
  Mat P;            // n×n
  Mat theta_star;   // n×m, u* = θ*'x
  Mat eta_star;     // n×q, w* = η*'x
  double residual_norm = 0.0;
  int iterations = 0;
};

/// ‖A'P + PA + Q − P(BR⁻¹B' − γ⁻²DD')P‖_F.
inline double gare_residual(const Mat& P, const Mat& A, const Mat& B, const Mat& D, const Mat& Q,
                            const Mat& R, double gamma) {
  const Mat S = B * R.llt().solve(B.transpose()) - D * D.transpose() / (gamma * gamma);
  return (A.transpose() * P + P * A + Q - P * S * P).norm();
}

/// Solves F'X + XF = -C for X by the n²×n² Kronecker system.
inline Mat solve_lyapunov(const Mat& F, const Mat& C) {
  const Eigen::Index n = F.rows();
  const Mat I = Mat::Identity(n, n);
  Mat K = Mat::Zero(n * n, n * n);
  // vec(F'X) = (I ⊗ F') vec X ; vec(XF) = (F' ⊗ I) vec X.
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      K.block(i * n, j * n, n, n) += I(i, j) * F.transpose();
      K.block(i * n, j * n, n, n) += F(j, i) * I;
    }
  }
  const Vec rhs = -Eigen::Map<const Vec>(C.data(), C.size());
  Eigen::FullPivLU<Mat> lu(K);
  if (!lu.isInvertible()) throw std::runtime_error("Lyapunov operator is singular");
  const Vec x = lu.solve(rhs);
  Mat X = Eigen::Map<const Mat>(x.data(), n, n);
  return 0.5 * (X + X.transpose());
}

inline bool is_hurwitz(const Mat& F) {
  return Eigen::EigenSolver<Mat>(F, false).eigenvalues().real().maxCoeff() < 0.0;
}

/// Stabilizing solution of A'P + PA + Q − PSP = 0 from the stable invariant
/// subspace of the Hamiltonian matrix. Used to seed the game iteration with
/// the γ→∞ (pure control) Riccati solution.
inline Mat care_hamiltonian(const Mat& A, const Mat& S, const Mat& Q) {
  const Eigen::Index n = A.rows();
  Mat H(2 * n, 2 * n);
  H << A, -S, -Q, -A.transpose();
  Eigen::EigenSolver<Mat> es(H);
  if (es.info() != Eigen::Success) throw std::runtime_error("Hamiltonian eigensolver failed");
  Eigen::MatrixXcd U(2 * n, n);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < 2 * n; ++i) {
    if (es.eigenvalues()(i).real() < 0.0) {
      if (k == n) break;
      U.col(k++) = es.eigenvectors().col(i);
    }
  }
  if (k != n) throw std::runtime_error("Hamiltonian has eigenvalues on the imaginary axis");
  const Eigen::MatrixXcd U1 = U.topRows(n);
  const Eigen::MatrixXcd U2 = U.bottomRows(n);
  const Mat P = (U2 * U1.inverse()).real();
  return 0.5 * (P + P.transpose());
}

/// θ* = −PBR⁻¹ (n×m, so that u* = θ*'x = −R⁻¹B'Px) and η* = γ⁻²PD.
inline std::pair<Mat, Mat> optimal_linear_policies(const Mat& P, const Mat& B, const Mat& D,
                                                   const Mat& R, double gamma) {
  const Mat theta = -(R.llt().solve(B.transpose() * P)).transpose();
  const Mat eta = P * D / (gamma * gamma);
  return {theta, eta};
}

/// Newton (Kleinman-type) iteration on the game Riccati equation
///   A'P + PA + Q − P(BR⁻¹B' − γ⁻²DD')P = 0,
/// each step a Lyapunov solve with the current closed loop, started from the
/// pure-control Riccati solution.
inline GareSolution solve_gare(const Mat& A, const Mat& B, const Mat& D, const Mat& Q,
                               const Mat& R, double gamma, double tol = 1e-10,
                               int max_iter = 200) {
  const Eigen::Index n = A.rows();
  require(A.cols() == n && B.rows() == n && D.rows() == n, "solve_gare: shape mismatch");
  require(Q.rows() == n && Q.cols() == n, "solve_gare: Q shape");
  require(R.rows() == B.cols() && R.cols() == B.cols(), "solve_gare: R shape");
  require(gamma > 0.0, "solve_gare: gamma must be positive");
  require(tol > 0.0 && max_iter >= 1, "solve_gare: bad tolerance or iteration cap");

  const Mat S_u = B * R.llt().solve(B.transpose());
  const Mat S = S_u - D * D.transpose() / (gamma * gamma);

  Mat P;
  try {
    P = care_hamiltonian(A, S_u, Q);
  } catch (const std::exception& e) {
    throw GareSolveError(std::string("initial Riccati solve failed: ") + e.what(),
                         std::numeric_limits<double>::infinity(), 0);
  }

  double res = gare_residual(P, A, B, D, Q, R, gamma);
  int it = 0;
  for (; it < max_iter && !(res <= tol); ++it) {
    const Mat F = A - S * P;
    Mat next;
    try {
      next = solve_lyapunov(F, Q + P * S * P);
    } catch (const std::exception&) {
      throw GareSolveError("singular Lyapunov step (gamma too small or bad plant data)", res, it);
    }
    if (!next.allFinite()) {
      throw GareSolveError("non-finite iterate (gamma too small or bad plant data)", res, it);
    }
    P = std::move(next);
    res = gare_residual(P, A, B, D, Q, R, gamma);
  }
  if (!(res <= tol)) {
    throw GareSolveError("no convergence within " + std::to_string(max_iter) +
                             " iterations (gamma too small or bad plant data)",
                         res, it);
  }
  if (!is_hurwitz(A - S * P)) {
    throw GareSolveError("solution is not stabilizing (gamma below the achievable level)", res, it);
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(P);
  if (es.eigenvalues().minCoeff() < -1e-9 * (1.0 + P.norm())) {
    throw GareSolveError("solution is not positive semidefinite", res, it);
  }

  GareSolution sol;
  sol.P = P;
  std::tie(sol.theta_star, sol.eta_star) = optimal_linear_policies(P, B, D, R, gamma);
  sol.residual_norm = res;
  sol.iterations = it;
  return sol;
}

}  // namespace tpi

#endif  // TPI_RICCATI_HPP_
