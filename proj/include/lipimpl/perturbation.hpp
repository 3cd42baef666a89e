#pragma once

// Tracking the root t = theta(v, eps) of a perturbed family F(t, v, eps) = 0
// and measuring how Lipschitz the root is in v.
//
// For a family that is a Lipschitz-small perturbation of a smooth one, theta
// is Lipschitz in v near (v0, eps0) with constant arbitrarily close to
//
//     R = || [F'_t(t0, v0, eps0)]^{-1} F'_v(t0, v0, eps0) ||.
//
// Everything here is empirical: roots come from the chord solver with the
// parameter x = (v, eps), and constants are sampled suprema.
//
// The duality element {t} needed in general normed spaces is t / ||t|| in
// Euclidean space (sign(t) in one dimension), so it never appears as code.

#include "lipimpl/implicit.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace lipimpl {

using FamilyMap = std::function<Vector(const Vector& t, const Vector& v, const Vector& eps)>;
using FamilyJacobian = std::function<Matrix(const Vector& t, const Vector& v, const Vector& eps)>;

struct FamilyJacobians {
  FamilyJacobian wrt_t;  ///< p x p
  FamilyJacobian wrt_v;  ///< p x k
};

class PerturbedFamily {
 public:
  /// Throws InvalidArgument on empty t0, r <= 0, a wrong output dimension or
  /// ||F(t0, v0, eps0)|| > residual_tol, and SingularJacobian when
  /// F'_t(t0, v0, eps0) is not invertible.
  PerturbedFamily(FamilyMap f, Vector t0, Vector v0, Vector eps0, double r,
                  double residual_tol = SolverConfig{}.residual_tol,
                  FamilyJacobians jacobians = {},
                  double fd_step = SolverConfig{}.fd_step);

  [[nodiscard]] Vector operator()(const Vector& t, const Vector& v, const Vector& eps) const {
    return f_(t, v, eps);
  }

  [[nodiscard]] const Vector& t0() const noexcept { return t0_; }
  [[nodiscard]] const Vector& v0() const noexcept { return v0_; }
  [[nodiscard]] const Vector& eps0() const noexcept { return eps0_; }
  [[nodiscard]] double r() const noexcept { return r_; }
  [[nodiscard]] double residual_tol() const noexcept { return residual_tol_; }
  [[nodiscard]] bool has_analytic_jacobians() const noexcept {
    return bool(jac_.wrt_t) && bool(jac_.wrt_v);
  }

  [[nodiscard]] Matrix jacobian_t(const Vector& t, const Vector& v, const Vector& eps,
                                  double fd_step) const;
  [[nodiscard]] Matrix jacobian_v(const Vector& t, const Vector& v, const Vector& eps,
                                  double fd_step) const;

  /// The reduction to a plain implicit problem with unknown t and parameter
  /// x = (v, eps) stacked.
  [[nodiscard]] ImplicitProblem as_implicit() const;

  /// Splits a stacked parameter back into (v, eps).
  [[nodiscard]] std::pair<Vector, Vector> split(const Vector& x) const;

 private:
  FamilyMap f_;
  Vector t0_;
  Vector v0_;
  Vector eps0_;
  double r_;
  double residual_tol_;
  FamilyJacobians jac_;
};

/// Reusable root tracker: one frozen Jacobian for many (v, eps).
class ThetaSolver {
 public:
  ThetaSolver(const PerturbedFamily& family, const SolverConfig& config);

  /// Throws NoRootInBall when the contraction certificate fails, and
  /// propagates solver errors.
  [[nodiscard]] ImplicitSolution solve(const Vector& v, const Vector& eps) const;

 private:
  ChordSolver chord_;
};

Vector solve_theta(const PerturbedFamily& family, const Vector& v, const Vector& eps,
                   const SolverConfig& config);

/// R = || [F'_t]^{-1} F'_v || at the base point, induced 2-norm.
double theoretical_modulus(const PerturbedFamily& family, const SolverConfig& config);

struct ThetaResult {
  Vector theta;               ///< theta(v0, eps)
  double R = 0.0;
  double quotient_sup = 0.0;  ///< max ||theta(v1,eps) - theta(v2,eps)|| / ||v1 - v2||
  double delta_used = 0.0;
  double Delta = 0.0;
  int pairs_used = 0;
  bool ine_ok = false;        ///< quotient_sup <= R + Delta
};

/// Samples n_pairs pairs uniformly in the delta-ball around v0 and reports
/// the largest root difference quotient. Pairs closer than 1e-12 are
/// skipped. Pair evaluations run on `workers` threads; the reduction is
/// order independent.
ThetaResult empirical_lipschitz_quotient(const PerturbedFamily& family, const Vector& eps,
                                         double delta, int n_pairs, std::uint64_t seed,
                                         const SolverConfig& config, double Delta,
                                         int workers = 1);

struct DeltaScanEntry {
  double delta = 0.0;
  Vector eps;
  ThetaResult result;
};

struct DeltaScan {
  std::vector<DeltaScanEntry> entries;
  std::optional<double> delta;  ///< largest ladder value at which every eps passed
  double Delta = 0.0;
};

/// For each delta in `ladder`, checks the quotient bound at
/// eps = eps0 + f * delta * e_1 for each f in `eps_fractions`.
DeltaScan delta_scan(const PerturbedFamily& family, const std::vector<double>& ladder,
                     double Delta, int n_pairs, std::uint64_t seed, const SolverConfig& config,
                     const std::vector<double>& eps_fractions = {0.0, 0.5, 1.0},
                     int workers = 1);

/// Sampling layout for estimate_assumption_constants. When `points` is empty
/// a sequence of `eps_v_points` parameters approaching (eps0, v0) along one
/// fixed direction is generated, with radii halving from (eps_radius,
/// v_radius); eps components of the direction are taken nonnegative.
struct SampleSpec {
  double t_radius = 0.1;
  double v_radius = 0.1;
  double eps_radius = 0.1;
  int t_pairs = 64;
  int eps_v_points = 16;
  std::vector<std::pair<Vector, Vector>> points;  ///< explicit (eps, v)
};

struct PointEstimate {
  Vector eps;
  Vector v;
  double value = 0.0;
};

struct EpsEstimate {
  Vector eps;
  double intercept = 0.0;  ///< L_eps
  double slope = 0.0;      ///< least-squares slope for this eps alone
};

struct AssumptionEstimates {
  std::vector<PointEstimate> L_eps_v;
  std::vector<EpsEstimate> L_eps;
  double K = 0.0;
  double lipschitz_F = 0.0;
};

/// Sampled constants of the perturbation hypotheses:
///
///  - L_eps_v(eps, v): max over t-pairs of
///      ||F(t1,v,eps) - F(t2,v,eps) - F(t1,v0,eps0) + F(t2,v0,eps0)|| / ||t1 - t2||
///  - for each eps, the quotient
///      ||F(t1,v2,eps) - F(t1,v1,eps) - F(t2,v2,eps0) + F(t2,v1,eps0)|| / ||v1 - v2||
///    against ||t1 - t2||: K is the largest least-squares slope (>= 0) and
///    L_eps the smallest intercept for which the line with slope K bounds
///    every sample.
///  - lipschitz_F: max difference quotient of F over all arguments.
AssumptionEstimates estimate_assumption_constants(const PerturbedFamily& family,
                                                  const SampleSpec& spec, std::uint64_t seed);

/// Named families: "affine" (t - v1), "trig" (v1 cos t + v2 sin t at
/// (pi/2, (1,0))) and "trig_diag" (same map at (3pi/4, (1,1))). All carry a
/// single eps component that does not enter F.
PerturbedFamily builtin_family(std::string_view name);

}  // namespace lipimpl
