#pragma once

// The relay/dry-friction oscillator
//
//     u'' + u = -eps sign(u) + eps g(t, u, u')
//
// written in the rotating frame (u, u') = M(t) x with
// M(t) = [cos t, sin t; -sin t, cos t], where it becomes
//
//     x' = eps (-sign(u) + g(t, u, u')) (-sin t, cos t),  u = x1 cos t + x2 sin t.
//
// For eps = 0 the frame is frozen and the switching function
// F(t, v, 0) = v1 cos t + v2 sin t is smooth; for eps > 0 it is only a
// Lipschitz perturbation of that, and the switching time theta(v, eps) is
// tracked with the perturbation module.

#include "lipimpl/dopri5.hpp"
#include "lipimpl/perturbation.hpp"

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

namespace lipimpl::dryfriction {

using Pair = Eigen::Vector2d;
using Forcing = std::function<double(double t, double u, double u_dot)>;

/// (u, u') -> (x1, x2)
Pair rotate(double t, double u, double u_dot);
/// (x1, x2) -> (u, u')
Pair unrotate(double t, double x1, double x2);

/// Built-in forcings: "zero" and "cos" (g = cos t). Throws InvalidArgument.
Forcing forcing_by_name(std::string_view name);

struct IntegratorOptions {
  double rtol = 1e-10;
  double atol = 1e-12;
  double h_max = 0.1;
  double event_tol = 1e-12;
  int bisection_max = 50;
  double stick_tol = 1e-10;
  int max_events = 10000;
  long max_steps = 1000000;
};

struct OscillatorSpec {
  double eps = 0.0;
  std::string g_name = "zero";
  Forcing g = [](double, double, double) { return 0.0; };
  double horizon = 2.0 * std::numbers::pi;
  double a = 0.0;  ///< switching-time bracket, 0 < a < b < 2 pi
  double b = 0.0;
  Pair v0 = Pair(1.0, 0.0);
  int t_grid = 1000;  ///< number of output intervals on [0, horizon]
  IntegratorOptions integrator;

  /// Spec with the bracket centred on the first zero of F(., v0, 0) in
  /// (0, 2 pi) with margin 0.5.
  static OscillatorSpec with_default_bracket(Pair v0, double eps = 0.0);

  /// Throws InvalidArgument unless 0 < a < b < 2 pi, eps >= 0, horizon >= b
  /// and t_grid >= 1.
  void validate() const;
};

/// Zeros of v1 cos t + v2 sin t in (0, 2 pi), ascending. Empty for v = 0.
std::vector<double> unperturbed_zeros(const Pair& v);

class Trajectory {
 public:
  std::vector<double> times;  ///< output grid, 0 .. horizon
  std::vector<Pair> states;   ///< x at `times`
  std::vector<double> events; ///< sign switches of u
  std::vector<Pair> y_field;  ///< (x - v) / eps at `times`, empty when eps == 0
  Pair v = Pair::Zero();
  double eps = 0.0;

  /// Dense-output state at any t in [0, horizon].
  [[nodiscard]] Pair state_at(double t) const;
  /// u(t) = x1 cos t + x2 sin t
  [[nodiscard]] double u_at(double t) const;
  /// u'(t) = -x1 sin t + x2 cos t
  [[nodiscard]] double u_dot_at(double t) const;
  [[nodiscard]] double horizon() const noexcept { return horizon_; }
  [[nodiscard]] std::size_t step_count() const noexcept { return steps_.size(); }

 private:
  friend Trajectory integrate_system(const OscillatorSpec&, const Pair&, double);
  std::vector<dopri5::DenseStep> steps_;
  double horizon_ = 0.0;
};

/// Event-driven integration of the rotating-frame system from x(0) = v on
/// [0, horizon]. Sign switches of u are located on dense output and refined
/// by bisection with exact sub-steps; the mode flips at every switch.
///
/// Throws StickDetected when a switch is non-transversal (|u'| <= stick_tol
/// and both one-sided fields point at u = 0) and MaxEventsExceeded past
/// integrator.max_events.
Trajectory integrate_system(const OscillatorSpec& spec, const Pair& v, double eps);
inline Trajectory integrate_system(const OscillatorSpec& spec, const Pair& v) {
  return integrate_system(spec, v, spec.eps);
}

/// Analytic data of the unperturbed switching time at the base point.
struct BasePoint {
  double t0 = 0.0;
  double R = 0.0;  ///< 1 / |-v1 sin t0 + v2 cos t0|
};

/// Unique zero of F(., v0, 0) in (a, b) and its modulus R.
/// Throws NoZeroInBracket or MultipleZerosInBracket after a 10^4-point sign
/// scan, and SingularJacobian if the zero is not simple.
BasePoint base_point(const OscillatorSpec& spec);

/// F(t, v, eps) = x1(t, v, eps) cos t + x2(t, v, eps) sin t as a perturbed
/// family with p = 1, k = 2, e = 1, base point (t0, v0, 0) and
/// r = min(t0, horizon - t0). F'_t is analytic (it equals u'); F'_v is
/// analytic at eps = 0 and central-differenced otherwise. Trajectories are
/// memoised per (v, eps); the cache is internally synchronised.
PerturbedFamily family_F(const OscillatorSpec& spec);

struct LadderRow {
  double eps = 0.0;
  double sup_y = 0.0;  ///< sup ||y|| over the sample grid
  double lip_y = 0.0;  ///< max difference quotient of y in (t, v)
};

struct AssumptionFReport {
  std::vector<LadderRow> rows;
  double sup_y_spread = 0.0;  ///< (max - min) / max across the ladder
  double lip_y_spread = 0.0;
  double tolerance = 0.2;
  bool passes = false;
};

/// Checks x(t, v, eps) = v + eps y(t, v, eps) with y bounded and Lipschitz
/// uniformly along the eps ladder. Throws InvalidArgument on a nonpositive
/// eps or empty samples.
AssumptionFReport verify_assumption_F(const OscillatorSpec& spec,
                                      const std::vector<double>& eps_ladder,
                                      const std::vector<Pair>& v_samples,
                                      const std::vector<double>& t_samples);

struct NvGrid {
  int t_points = 400;
  int segment_points = 40;
  int slice_resolution = 10000;
};

struct GridNode {
  double t = 0.0;
  double s = 0.0;  ///< position on the segment [v1, v2]
  Pair v = Pair::Zero();
  double F = 0.0;
};

struct SliceZero {
  double s = 0.0;
  int sign_changes = 0;
  double zero = 0.0;  ///< refined zero when sign_changes == 1
  bool inside = false;
};

struct SwitchReport {
  double theta = 0.0;
  double t0 = 0.0;
  double R = 0.0;
  double Delta = 0.0;
  double eps = 0.0;
  double delta = 0.0;
  Pair v1 = Pair::Zero();
  Pair v2 = Pair::Zero();
  double lo = 0.0;  ///< exclusion interval
  double hi = 0.0;
  double min_abs_F = 0.0;
  bool slices_ok = false;
  bool nv_ok = false;
  std::vector<SliceZero> slices;
  std::vector<GridNode> nodes;
};

/// Verifies that F(., ., eps) does not vanish on
/// ([a, b] \ [theta(v1) - w, theta(v1) + w]) x [v1, v2],
/// w = (R + Delta) ||v1 - v2||, on a grid, and that every slice F(., v, eps)
/// along the segment has exactly one zero in [a, b], inside the interval.
///
/// `delta` is the ball radius from a prior delta scan; without one the check
/// throws DeltaBallUnknown. v1, v2 and eps must lie in that ball.
SwitchReport proposition_one_check(const OscillatorSpec& spec, const Pair& v1, const Pair& v2,
                                   double eps, double Delta, const NvGrid& grid,
                                   std::optional<double> delta,
                                   const SolverConfig& config = {});

}  // namespace lipimpl::dryfriction
