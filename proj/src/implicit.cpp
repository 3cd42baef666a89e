#include "lipimpl/implicit.hpp"

#include "lipimpl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace lipimpl {
namespace {

constexpr double kBallSlack = 1e-12;

bool inside_ball(const Vector& p, const Vector& center, double radius) {
  return (p - center).norm() <= radius * (1.0 + kBallSlack) + kBallSlack;
}

// Step ratios whose denominator sits below this floor are dominated by
// rounding and are not recorded.
double ratio_floor(const Vector& y) {
  return 1e3 * std::numeric_limits<double>::epsilon() * std::max(1.0, y.norm());
}

}  // namespace

void SolverConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (!(residual_tol > 0.0)) fail("residual_tol must be positive");
  if (!(step_tol > 0.0)) fail("step_tol must be positive");
  if (max_iter <= 0) fail("max_iter must be positive");
  if (!(alpha > 0.0)) fail("alpha must be positive");
  if (!(beta > 0.0)) fail("beta must be positive");
  if (!(q_target > 0.0 && q_target < 1.0)) fail("q_target must lie in (0, 1)");
  if (!(fd_step > 0.0)) fail("fd_step must be positive");
}

void SolverConfig::validate(double r) const {
  validate();
  if (alpha > r) throw Error(ErrorCode::InvalidArgument, "alpha exceeds the domain radius r");
  if (beta > r) throw Error(ErrorCode::InvalidArgument, "beta exceeds the domain radius r");
}

ImplicitProblem::ImplicitProblem(ImplicitMap f, Vector x0, Vector y0, double r,
                                 double residual_tol, PartialJacobians jacobians)
    : f_(std::move(f)), x0_(std::move(x0)), y0_(std::move(y0)), r_(r), jac_(std::move(jacobians)) {
  if (!f_) throw Error(ErrorCode::InvalidArgument, "F is empty");
  if (y0_.size() == 0) throw Error(ErrorCode::InvalidArgument, "unknown y must have dimension >= 1");
  if (!(r_ > 0.0)) throw Error(ErrorCode::InvalidArgument, "r must be positive");
  const Vector f0 = f_(x0_, y0_);
  if (f0.size() != y0_.size()) {
    throw Error(ErrorCode::InvalidArgument, "F(x, y) must have the dimension of y");
  }
  if (!(f0.norm() <= residual_tol)) {
    std::ostringstream msg;
    msg << "||F(x0, y0)|| = " << f0.norm() << " exceeds residual_tol " << residual_tol;
    throw Error(ErrorCode::InvalidArgument, msg.str());
  }
}

Matrix ImplicitProblem::jacobian_y(const Vector& x, const Vector& y, double fd_step) const {
  if (jac_.wrt_y) return jac_.wrt_y(x, y);
  return central_difference_jacobian([&](const Vector& yy) { return f_(x, yy); }, y, fd_step);
}

Matrix ImplicitProblem::jacobian_x(const Vector& x, const Vector& y, double fd_step) const {
  if (jac_.wrt_x) return jac_.wrt_x(x, y);
  if (x.size() == 0) return Matrix(y.size(), 0);
  return central_difference_jacobian([&](const Vector& xx) { return f_(xx, y); }, x, fd_step);
}

FactorizedJacobian::FactorizedJacobian(Matrix j) : j_(std::move(j)) {
  if (j_.rows() != j_.cols() || j_.rows() == 0) {
    throw Error(ErrorCode::SingularJacobian, "Jacobian is not square");
  }
  if (!j_.allFinite()) throw Error(ErrorCode::SingularJacobian, "Jacobian has non-finite entries");
  condition_ = condition_number(j_);
  if (!(condition_ <= kMaxCondition)) {
    std::ostringstream msg;
    msg << "condition estimate " << condition_ << " exceeds " << kMaxCondition;
    throw Error(ErrorCode::SingularJacobian, msg.str());
  }
  lu_.compute(j_);
}

FactorizedJacobian frozen_jacobian(const ImplicitProblem& problem, const SolverConfig& config) {
  return FactorizedJacobian(problem.jacobian_y(problem.x0(), problem.y0(), config.fd_step));
}

ChordSolver::ChordSolver(ImplicitProblem problem, SolverConfig config)
    : problem_(std::move(problem)),
      config_(config),
      jacobian_((config_.validate(problem_.r()), frozen_jacobian(problem_, config_))) {}

Vector ChordSolver::apply(const Vector& x, const Vector& y) const {
  return y - jacobian_.solve(problem_(x, y));
}

ImplicitSolution ChordSolver::solve(const Vector& x) const {
  if (x.size() != problem_.x_dim()) {
    throw Error(ErrorCode::InvalidArgument, "x has the wrong dimension");
  }
  if (!inside_ball(x, problem_.x0(), config_.alpha)) {
    std::ostringstream msg;
    msg << "||x - x0|| = " << (x - problem_.x0()).norm() << " exceeds alpha = " << config_.alpha;
    throw Error(ErrorCode::OutsideBall, msg.str());
  }

  ImplicitSolution out;
  auto& cert = out.cert;
  Vector y = problem_.y0();
  Vector fy = problem_(x, y);
  Vector step = jacobian_.solve(fy);
  cert.initial_displacement = step.norm();

  double prev_norm = -1.0;
  int consecutive_expanding = 0;
  for (int k = 0;; ++k) {
    const double residual = fy.norm();
    const double step_norm = step.norm();
    if (!std::isfinite(residual) || !std::isfinite(step_norm)) {
      throw Error(ErrorCode::NoContraction, "iteration produced non-finite values");
    }
    const double floor = ratio_floor(y);
    if (prev_norm > floor && step_norm > floor) {
      const double ratio = step_norm / prev_norm;
      cert.q_measured = std::max(cert.q_measured, ratio);
      consecutive_expanding = ratio >= 1.0 ? consecutive_expanding + 1 : 0;
      if (consecutive_expanding >= 3) {
        std::ostringstream msg;
        msg << "step ratio >= 1 for 3 consecutive steps (last " << ratio << ")";
        throw Error(ErrorCode::NoContraction, msg.str());
      }
    }
    const bool converged = step_norm <= config_.step_tol && residual <= config_.residual_tol;
    if (converged || k == config_.max_iter) {
      if (residual > config_.residual_tol) {
        std::ostringstream msg;
        msg << "max_iter = " << config_.max_iter << " reached with residual " << residual;
        throw Error(ErrorCode::MaxIterExceeded, msg.str());
      }
      cert.iterations = k;
      cert.residual = residual;
      break;
    }

    y -= step;
    cert.step_norms.push_back(step_norm);
    if (!inside_ball(y, problem_.y0(), config_.beta)) {
      std::ostringstream msg;
      msg << "iterate " << (k + 1) << " at distance " << (y - problem_.y0()).norm()
          << " left the beta-ball (beta = " << config_.beta << ")";
      throw Error(ErrorCode::LeftBall, msg.str());
    }
    fy = problem_(x, y);
    step = jacobian_.solve(fy);
    prev_norm = step_norm;
  }

  cert.ball_ok = cert.q_measured < 1.0 &&
                 cert.initial_displacement <= config_.beta * (1.0 - cert.q_measured);
  out.y = std::move(y);
  return out;
}

ImplicitSolution solve_implicit(const ImplicitProblem& problem, const SolverConfig& config,
                                const Vector& x) {
  return ChordSolver(problem, config).solve(x);
}

Matrix implicit_derivative(const ImplicitProblem& problem, const Vector& x, const Vector& y,
                           const SolverConfig& config) {
  const double residual = problem(x, y).norm();
  if (!(residual <= config.residual_tol)) {
    std::ostringstream msg;
    msg << "(x, y) is not a solution: ||F(x, y)|| = " << residual;
    throw Error(ErrorCode::InvalidArgument, msg.str());
  }
  const FactorizedJacobian jy(problem.jacobian_y(x, y, config.fd_step));
  const Matrix jx = problem.jacobian_x(x, y, config.fd_step);
  if (jx.cols() == 0) return Matrix(y.size(), 0);
  return -jy.solve(jx);
}

double contraction_scan(const ImplicitProblem& problem, const SolverConfig& config,
                        std::span<const Vector> x_samples, std::span<const Vector> y_samples) {
  if (x_samples.empty() || y_samples.empty()) {
    throw Error(ErrorCode::EmptySamples, "contraction_scan needs x and y samples");
  }
  for (const auto& x : x_samples) {
    if (x.size() != problem.x_dim() || !inside_ball(x, problem.x0(), config.alpha)) {
      throw Error(ErrorCode::OutsideBall, "x sample outside the alpha-ball");
    }
  }
  for (const auto& y : y_samples) {
    if (y.size() != problem.y_dim() || !inside_ball(y, problem.y0(), config.beta)) {
      throw Error(ErrorCode::OutsideBall, "y sample outside the beta-ball");
    }
  }
  const ChordSolver chord(problem, config);

  std::vector<Vector> points;
  points.reserve(y_samples.size() + 1);
  points.push_back(problem.y0());
  points.insert(points.end(), y_samples.begin(), y_samples.end());

  double q_hat = 0.0;
  std::vector<Vector> images(points.size());
  for (const auto& x : x_samples) {
    for (std::size_t i = 0; i < points.size(); ++i) images[i] = chord.apply(x, points[i]);
    for (std::size_t i = 0; i < points.size(); ++i) {
      for (std::size_t j = i + 1; j < points.size(); ++j) {
        const double dist = (points[i] - points[j]).norm();
        if (dist <= kBallSlack * std::max(1.0, points[i].norm())) continue;
        q_hat = std::max(q_hat, (images[i] - images[j]).norm() / dist);
      }
    }
  }
  return q_hat;
}

AlphaSearchResult alpha_search(const ImplicitProblem& problem, const SolverConfig& config,
                               const AlphaSearchOptions& options) {
  SolverConfig trial = config;
  trial.alpha = problem.r();
  trial.validate(problem.r());
  const ChordSolver chord(problem, trial);
  const auto ys = ball_samples(problem.y0(), config.beta, options.y_samples, options.seed + 1);

  AlphaSearchResult result;
  for (int halving = 0; halving <= options.max_halvings; ++halving) {
    const auto xs = ball_samples(problem.x0(), trial.alpha, options.x_samples, options.seed);
    const double q_hat = contraction_scan(problem, trial, xs, ys);
    double displacement = 0.0;
    for (const auto& x : xs) {
      displacement = std::max(displacement, (chord.apply(x, problem.y0()) - problem.y0()).norm());
    }
    if (q_hat <= config.q_target && displacement <= config.beta * (1.0 - q_hat)) {
      result.alpha = trial.alpha;
      result.q_hat = q_hat;
      result.max_displacement = displacement;
      result.halvings = halving;
      return result;
    }
    trial.alpha *= 0.5;
  }
  throw Error(ErrorCode::NoContraction, "alpha search exhausted without certifying contraction");
}

std::vector<Vector> ball_samples(const Vector& center, double radius, int count,
                                 std::uint64_t seed) {
  const auto dim = center.size();
  if (dim == 0 || count <= 1) return {center};
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(count));
  if (dim == 1) {
    for (int i = 0; i < count; ++i) {
      Vector p = center;
      p(0) += radius * (-1.0 + 2.0 * static_cast<double>(i) / (count - 1));
      out.push_back(std::move(p));
    }
    return out;
  }
  for (Eigen::Index d = 0; d < dim && static_cast<int>(out.size()) < count; ++d) {
    for (double sign : {1.0, -1.0}) {
      if (static_cast<int>(out.size()) >= count) break;
      Vector p = center;
      p(d) += sign * radius;
      out.push_back(std::move(p));
    }
  }
  std::mt19937_64 rng(seed);
  while (static_cast<int>(out.size()) < count) out.push_back(uniform_in_ball(rng, center, radius));
  return out;
}

}  // namespace lipimpl
