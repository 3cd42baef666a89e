#pragma once

// One Dormand-Prince 5(4) step with the Hairer-Wanner continuous extension.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>

namespace lipimpl::dopri5 {

using State = Eigen::Vector2d;

/// Dense-output coefficients of a single accepted step.
struct DenseStep {
  double t = 0.0;
  double h = 0.0;
  std::array<State, 5> coef{};

  /// Interpolated state at t + theta * h, theta in [0, 1]. Exact at theta = 0.
  [[nodiscard]] State at(double time) const {
    const double theta = h > 0.0 ? (time - t) / h : 0.0;
    const double theta1 = 1.0 - theta;
    return coef[0] +
           theta * (coef[1] + theta1 * (coef[2] + theta * (coef[3] + theta1 * coef[4])));
  }
};

struct StepResult {
  State y;
  double error = 0.0;  ///< scaled RMS error estimate; accept when <= 1
  DenseStep dense;
};

/// Advance y' = f(t, y) from (t, y) by h. Error scaling uses
/// atol + rtol * max(|y_old|, |y_new|) per component.
template <typename Rhs>
StepResult step(const Rhs& f, double t, const State& y, double h, double rtol, double atol) {
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                   a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                   a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                   a75 = -2187.0 / 6784, a76 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                   e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
  constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                   d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                   d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;

  const State k1 = f(t, y);
  const State k2 = f(t + c2 * h, State(y + h * a21 * k1));
  const State k3 = f(t + c3 * h, State(y + h * (a31 * k1 + a32 * k2)));
  const State k4 = f(t + c4 * h, State(y + h * (a41 * k1 + a42 * k2 + a43 * k3)));
  const State k5 = f(t + c5 * h, State(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)));
  const State k6 =
      f(t + h, State(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5)));
  const State y_new = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
  const State k7 = f(t + h, y_new);

  const State err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
  double sum = 0.0;
  constexpr int kDim = State::RowsAtCompileTime;
  for (int i = 0; i < kDim; ++i) {
    const double scale = atol + rtol * std::max(std::abs(y(i)), std::abs(y_new(i)));
    sum += (err(i) / scale) * (err(i) / scale);
  }

  StepResult out;
  out.y = y_new;
  out.error = std::sqrt(sum / kDim);
  out.dense.t = t;
  out.dense.h = h;
  const State diff = y_new - y;
  const State bspl = h * k1 - diff;
  out.dense.coef[0] = y;
  out.dense.coef[1] = diff;
  out.dense.coef[2] = bspl;
  out.dense.coef[3] = diff - h * k7 - bspl;
  out.dense.coef[4] = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
  return out;
}

}  // namespace lipimpl::dopri5
