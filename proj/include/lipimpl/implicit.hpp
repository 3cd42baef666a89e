#pragma once

// Frozen-Jacobian (chord) solution of F(x, y) = 0 for y near a base point.
//
// The iteration is the fixed-point map
//
//     A_x(y) = y - J^{-1} F(x, y),   J = F'_y(x0, y0),
//
// with J evaluated once at the base point and never refreshed. A_x is a
// contraction on the closed beta-ball around y0 whenever its Lipschitz
// constant q is below one and ||A_x(y0) - y0|| <= beta (1 - q); the solver
// measures both quantities while it runs and reports them as a certificate.

#include "lipimpl/linalg.hpp"

#include <Eigen/LU>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace lipimpl {

/// Tolerances, iteration cap, ball radii and the target contraction factor.
struct SolverConfig {
  double residual_tol = 1e-12;
  double step_tol = 1e-13;
  int max_iter = 200;
  double alpha = 0.5;     ///< radius of the x-ball around x0
  double beta = 0.5;      ///< radius of the y-ball around y0
  double q_target = 0.5;  ///< desired contraction factor, in (0, 1)
  double fd_step = 1e-6;  ///< relative central-difference step

  /// Throws InvalidArgument unless 0 < q_target < 1 and every tolerance,
  /// radius and the iteration cap are positive.
  void validate() const;
  /// validate() plus alpha <= r and beta <= r.
  void validate(double r) const;
};

using ImplicitMap = std::function<Vector(const Vector& x, const Vector& y)>;
using JacobianMap = std::function<Matrix(const Vector& x, const Vector& y)>;

/// Optional analytic partial Jacobians. Missing entries fall back to central
/// differences.
struct PartialJacobians {
  JacobianMap wrt_x;  ///< m x n
  JacobianMap wrt_y;  ///< m x m
};

/// F together with its base point (x0, y0) and the domain radius r.
///
/// F must be reentrant if the problem is shared across threads; the problem
/// itself is immutable after construction.
class ImplicitProblem {
 public:
  /// Throws InvalidArgument when dim y0 == 0, r <= 0, F has the wrong output
  /// dimension or ||F(x0, y0)|| > residual_tol. An empty x0 is allowed and
  /// describes a plain root-finding problem in y.
  ImplicitProblem(ImplicitMap f, Vector x0, Vector y0, double r,
                  double residual_tol = SolverConfig{}.residual_tol,
                  PartialJacobians jacobians = {});

  [[nodiscard]] Vector operator()(const Vector& x, const Vector& y) const { return f_(x, y); }

  [[nodiscard]] const Vector& x0() const noexcept { return x0_; }
  [[nodiscard]] const Vector& y0() const noexcept { return y0_; }
  [[nodiscard]] double r() const noexcept { return r_; }
  [[nodiscard]] Eigen::Index x_dim() const noexcept { return x0_.size(); }
  [[nodiscard]] Eigen::Index y_dim() const noexcept { return y0_.size(); }

  /// F'_y(x, y), analytic when available.
  [[nodiscard]] Matrix jacobian_y(const Vector& x, const Vector& y, double fd_step) const;
  /// F'_x(x, y), analytic when available.
  [[nodiscard]] Matrix jacobian_x(const Vector& x, const Vector& y, double fd_step) const;
  [[nodiscard]] bool has_analytic_jacobian_y() const noexcept { return bool(jac_.wrt_y); }

 private:
  ImplicitMap f_;
  Vector x0_;
  Vector y0_;
  double r_;
  PartialJacobians jac_;
};

/// A square Jacobian together with its LU factorization.
class FactorizedJacobian {
 public:
  /// Throws SingularJacobian if `j` is not square, is rank deficient or its
  /// condition number exceeds kMaxCondition.
  explicit FactorizedJacobian(Matrix j);

  static constexpr double kMaxCondition = 1e12;

  [[nodiscard]] const Matrix& matrix() const noexcept { return j_; }
  [[nodiscard]] Matrix inverse() const { return lu_.inverse(); }
  /// J^{-1} rhs
  [[nodiscard]] Vector solve(const Vector& rhs) const { return lu_.solve(rhs); }
  [[nodiscard]] Matrix solve(const Matrix& rhs) const { return lu_.solve(rhs); }
  [[nodiscard]] double condition() const noexcept { return condition_; }

 private:
  Matrix j_;
  Eigen::PartialPivLU<Matrix> lu_;
  double condition_;
};

/// J = F'_y(x0, y0), analytic or by central differences.
FactorizedJacobian frozen_jacobian(const ImplicitProblem& problem, const SolverConfig& config);

struct ContractionCertificate {
  double q_measured = 0.0;            ///< largest recorded ||s_k|| / ||s_{k-1}||
  double initial_displacement = 0.0;  ///< ||A_x(y0) - y0||
  bool ball_ok = false;               ///< initial_displacement <= beta (1 - q_measured)
  int iterations = 0;
  double residual = 0.0;              ///< ||F(x, y)|| at the returned y
  std::vector<double> step_norms;     ///< ||y_{k+1} - y_k|| for every applied step
};

struct ImplicitSolution {
  Vector y;
  ContractionCertificate cert;
};

/// Binds a problem, a configuration and the frozen Jacobian so repeated
/// solves for different x reuse one factorization.
class ChordSolver {
 public:
  ChordSolver(ImplicitProblem problem, SolverConfig config);

  /// Fixed-point iteration of A_x from y0.
  ///
  /// Throws OutsideBall if ||x - x0|| > alpha, LeftBall if an iterate leaves
  /// the closed beta-ball, NoContraction after three consecutive step ratios
  /// >= 1 and MaxIterExceeded when max_iter is reached unconverged.
  [[nodiscard]] ImplicitSolution solve(const Vector& x) const;

  /// A_x(y)
  [[nodiscard]] Vector apply(const Vector& x, const Vector& y) const;

  [[nodiscard]] const ImplicitProblem& problem() const noexcept { return problem_; }
  [[nodiscard]] const SolverConfig& config() const noexcept { return config_; }
  [[nodiscard]] const FactorizedJacobian& jacobian() const noexcept { return jacobian_; }

 private:
  ImplicitProblem problem_;
  SolverConfig config_;
  FactorizedJacobian jacobian_;
};

ImplicitSolution solve_implicit(const ImplicitProblem& problem, const SolverConfig& config,
                                const Vector& x);

/// Classical derivative of the solution map, -[F'_y(x,y)]^{-1} F'_x(x,y),
/// with both Jacobians taken at (x, y) rather than at the base point.
/// Throws InvalidArgument when ||F(x, y)|| > residual_tol.
Matrix implicit_derivative(const ImplicitProblem& problem, const Vector& x, const Vector& y,
                           const SolverConfig& config);

/// Sampled Lipschitz constant of A_x on the beta-ball.
///
/// For every x sample the quotient ||A_x(y_i) - A_x(y_j)|| / ||y_i - y_j|| is
/// taken over all pairs drawn from the y samples and y0; coincident pairs are
/// skipped. Throws EmptySamples or OutsideBall.
double contraction_scan(const ImplicitProblem& problem, const SolverConfig& config,
                        std::span<const Vector> x_samples, std::span<const Vector> y_samples);

struct AlphaSearchOptions {
  int x_samples = 21;
  int y_samples = 201;
  std::uint64_t seed = 0;
  int max_halvings = 60;
};

struct AlphaSearchResult {
  double alpha = 0.0;
  double q_hat = 0.0;
  double max_displacement = 0.0;  ///< max over x samples of ||A_x(y0) - y0||
  int halvings = 0;
};

/// Halves alpha starting from r until the sampled contraction factor is at
/// most q_target and every sampled x satisfies the ball condition
/// ||A_x(y0) - y0|| <= beta (1 - q_hat). Throws NoContraction if
/// max_halvings is exhausted.
AlphaSearchResult alpha_search(const ImplicitProblem& problem, const SolverConfig& config,
                               const AlphaSearchOptions& options = {});

/// Deterministic points in the closed ball of `radius` around `center`:
/// a uniform grid in one dimension, otherwise the 2d axis points followed by
/// uniformly distributed interior points.
std::vector<Vector> ball_samples(const Vector& center, double radius, int count,
                                 std::uint64_t seed);

}  // namespace lipimpl
