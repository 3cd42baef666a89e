#include "lipimpl/perturbation.hpp"

#include "lipimpl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

namespace lipimpl {
namespace {

constexpr double kDegeneratePair = 1e-12;

// Runs body(i) for i in [0, count) on up to `workers` threads. The first
// exception by index is rethrown after all threads join.
template <typename Body>
void parallel_for(std::size_t count, int workers, Body&& body) {
  const std::size_t threads =
      std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < count; i += threads) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Vector nonnegative_offset(std::mt19937_64& rng, const Vector& center, double radius) {
  Vector p = uniform_in_ball(rng, Vector::Zero(center.size()), radius);
  return center + p.cwiseAbs();
}

Vector scalar(double value) { return Vector::Constant(1, value); }

}  // namespace

PerturbedFamily::PerturbedFamily(FamilyMap f, Vector t0, Vector v0, Vector eps0, double r,
                                 double residual_tol, FamilyJacobians jacobians, double fd_step)
    : f_(std::move(f)),
      t0_(std::move(t0)),
      v0_(std::move(v0)),
      eps0_(std::move(eps0)),
      r_(r),
      residual_tol_(residual_tol),
      jac_(std::move(jacobians)) {
  if (!f_) throw Error(ErrorCode::InvalidArgument, "F is empty");
  if (t0_.size() == 0) throw Error(ErrorCode::InvalidArgument, "t must have dimension >= 1");
  if (!(r_ > 0.0)) throw Error(ErrorCode::InvalidArgument, "r must be positive");
  const Vector f0 = f_(t0_, v0_, eps0_);
  if (f0.size() != t0_.size()) {
    throw Error(ErrorCode::InvalidArgument, "F(t, v, eps) must have the dimension of t");
  }
  if (!(f0.norm() <= residual_tol_)) {
    std::ostringstream msg;
    msg << "||F(t0, v0, eps0)|| = " << f0.norm() << " exceeds residual_tol " << residual_tol_;
    throw Error(ErrorCode::InvalidArgument, msg.str());
  }
  [[maybe_unused]] const FactorizedJacobian jt(jacobian_t(t0_, v0_, eps0_, fd_step));
}

Matrix PerturbedFamily::jacobian_t(const Vector& t, const Vector& v, const Vector& eps,
                                   double fd_step) const {
  if (jac_.wrt_t) return jac_.wrt_t(t, v, eps);
  return central_difference_jacobian([&](const Vector& tt) { return f_(tt, v, eps); }, t,
                                     fd_step);
}

Matrix PerturbedFamily::jacobian_v(const Vector& t, const Vector& v, const Vector& eps,
                                   double fd_step) const {
  if (jac_.wrt_v) return jac_.wrt_v(t, v, eps);
  if (v.size() == 0) return Matrix(t.size(), 0);
  return central_difference_jacobian([&](const Vector& vv) { return f_(t, vv, eps); }, v,
                                     fd_step);
}

std::pair<Vector, Vector> PerturbedFamily::split(const Vector& x) const {
  return {x.head(v0_.size()), x.tail(eps0_.size())};
}

ImplicitProblem PerturbedFamily::as_implicit() const {
  const auto k = v0_.size();
  const auto e = eps0_.size();
  ImplicitMap f = [f = f_, k, e](const Vector& x, const Vector& t) {
    return f(t, x.head(k), x.tail(e));
  };
  PartialJacobians jac;
  if (jac_.wrt_t) {
    jac.wrt_y = [jt = jac_.wrt_t, k, e](const Vector& x, const Vector& t) {
      return jt(t, x.head(k), x.tail(e));
    };
  }
  return ImplicitProblem(std::move(f), stack(v0_, eps0_), t0_, r_, residual_tol_, std::move(jac));
}

ThetaSolver::ThetaSolver(const PerturbedFamily& family, const SolverConfig& config)
    : chord_(family.as_implicit(), config) {}

ImplicitSolution ThetaSolver::solve(const Vector& v, const Vector& eps) const {
  auto solution = chord_.solve(stack(v, eps));
  if (!solution.cert.ball_ok) {
    std::ostringstream msg;
    msg << "contraction certificate failed (q = " << solution.cert.q_measured
        << ", initial displacement = " << solution.cert.initial_displacement << ")";
    throw Error(ErrorCode::NoRootInBall, msg.str());
  }
  return solution;
}

Vector solve_theta(const PerturbedFamily& family, const Vector& v, const Vector& eps,
                   const SolverConfig& config) {
  return ThetaSolver(family, config).solve(v, eps).y;
}

double theoretical_modulus(const PerturbedFamily& family, const SolverConfig& config) {
  const FactorizedJacobian jt(
      family.jacobian_t(family.t0(), family.v0(), family.eps0(), config.fd_step));
  const Matrix jv = family.jacobian_v(family.t0(), family.v0(), family.eps0(), config.fd_step);
  return operator_norm(jt.solve(jv));
}

ThetaResult empirical_lipschitz_quotient(const PerturbedFamily& family, const Vector& eps,
                                         double delta, int n_pairs, std::uint64_t seed,
                                         const SolverConfig& config, double Delta, int workers) {
  if (!(delta > 0.0) || delta > config.alpha * (1.0 + 1e-12)) {
    throw Error(ErrorCode::InvalidArgument, "delta must lie in (0, alpha]");
  }
  if (n_pairs < 1) throw Error(ErrorCode::InvalidArgument, "n_pairs must be >= 1");
  if (!(Delta > 0.0)) throw Error(ErrorCode::InvalidArgument, "Delta must be positive");

  std::mt19937_64 rng(seed);
  std::vector<std::pair<Vector, Vector>> pairs;
  pairs.reserve(static_cast<std::size_t>(n_pairs));
  for (int i = 0; i < n_pairs; ++i) {
    Vector a = uniform_in_ball(rng, family.v0(), delta);
    Vector b = uniform_in_ball(rng, family.v0(), delta);
    pairs.emplace_back(std::move(a), std::move(b));
  }

  const ThetaSolver solver(family, config);
  std::vector<double> quotients(pairs.size(), std::numeric_limits<double>::quiet_NaN());
  parallel_for(pairs.size(), workers, [&](std::size_t i) {
    const auto& [v1, v2] = pairs[i];
    const double dist = (v1 - v2).norm();
    if (dist < kDegeneratePair) return;
    const Vector t1 = solver.solve(v1, eps).y;
    const Vector t2 = solver.solve(v2, eps).y;
    quotients[i] = (t1 - t2).norm() / dist;
  });

  ThetaResult result;
  for (double q : quotients) {
    if (std::isnan(q)) continue;
    result.quotient_sup = std::max(result.quotient_sup, q);
    ++result.pairs_used;
  }
  if (result.pairs_used == 0) {
    throw Error(ErrorCode::AllPairsDegenerate, "every sampled pair was degenerate");
  }
  result.theta = solver.solve(family.v0(), eps).y;
  result.R = theoretical_modulus(family, config);
  result.delta_used = delta;
  result.Delta = Delta;
  result.ine_ok = result.quotient_sup <= result.R + Delta;
  return result;
}

DeltaScan delta_scan(const PerturbedFamily& family, const std::vector<double>& ladder,
                     double Delta, int n_pairs, std::uint64_t seed, const SolverConfig& config,
                     const std::vector<double>& eps_fractions, int workers) {
  if (ladder.empty()) throw Error(ErrorCode::EmptySamples, "delta ladder is empty");
  DeltaScan scan;
  scan.Delta = Delta;
  for (double delta : ladder) {
    bool all_ok = true;
    const std::vector<double> fractions =
        family.eps0().size() == 0 ? std::vector<double>{0.0} : eps_fractions;
    for (double fraction : fractions) {
      Vector eps = family.eps0();
      if (eps.size() > 0) eps(0) += fraction * delta;
      DeltaScanEntry entry{delta, eps,
                           empirical_lipschitz_quotient(family, eps, delta, n_pairs, seed, config,
                                                        Delta, workers)};
      all_ok = all_ok && entry.result.ine_ok;
      scan.entries.push_back(std::move(entry));
    }
    if (all_ok && (!scan.delta || delta > *scan.delta)) scan.delta = delta;
  }
  return scan;
}

AssumptionEstimates estimate_assumption_constants(const PerturbedFamily& family,
                                                  const SampleSpec& spec, std::uint64_t seed) {
  if (spec.t_pairs <= 0 || (spec.points.empty() && spec.eps_v_points <= 0)) {
    throw Error(ErrorCode::EmptySamples, "sample specification is empty");
  }
  const Vector& t0 = family.t0();
  const Vector& v0 = family.v0();
  const Vector& eps0 = family.eps0();
  std::mt19937_64 rng(seed);

  std::vector<std::pair<Vector, Vector>> points = spec.points;
  if (points.empty()) {
    const auto k = v0.size();
    const auto e = eps0.size();
    Vector dir = uniform_in_ball(rng, Vector::Zero(k + e), 1.0);
    if (dir.norm() == 0.0) dir = Vector::Ones(k + e);
    dir.normalize();
    double rho = 1.0;
    for (int i = 0; i < spec.eps_v_points; ++i, rho *= 0.5) {
      Vector eps = eps0 + rho * spec.eps_radius * dir.tail(e).cwiseAbs();
      Vector v = v0 + rho * spec.v_radius * dir.head(k);
      points.emplace_back(std::move(eps), std::move(v));
    }
  }

  std::vector<std::pair<Vector, Vector>> t_pairs;
  for (int i = 0; i < spec.t_pairs; ++i) {
    Vector a = uniform_in_ball(rng, t0, spec.t_radius);
    Vector b = uniform_in_ball(rng, t0, spec.t_radius);
    if ((a - b).norm() < kDegeneratePair) continue;
    t_pairs.emplace_back(std::move(a), std::move(b));
  }
  if (t_pairs.empty()) throw Error(ErrorCode::EmptySamples, "all t pairs degenerate");

  AssumptionEstimates out;

  std::vector<Vector> base_diff;
  base_diff.reserve(t_pairs.size());
  for (const auto& [t1, t2] : t_pairs) base_diff.push_back(family(t1, v0, eps0) - family(t2, v0, eps0));
  for (const auto& [eps, v] : points) {
    double sup = 0.0;
    for (std::size_t i = 0; i < t_pairs.size(); ++i) {
      const auto& [t1, t2] = t_pairs[i];
      const Vector mixed = family(t1, v, eps) - family(t2, v, eps) - base_diff[i];
      sup = std::max(sup, mixed.norm() / (t1 - t2).norm());
    }
    out.L_eps_v.push_back({eps, v, sup});
  }

  // Mixed (t, v) difference against the unperturbed family, one sample set
  // per distinct eps.
  std::vector<Vector> eps_values;
  for (const auto& [eps, v] : points) {
    const bool seen = std::any_of(eps_values.begin(), eps_values.end(),
                                  [&](const Vector& e) { return e == eps; });
    if (!seen) eps_values.push_back(eps);
  }
  std::vector<std::vector<std::pair<double, double>>> samples(eps_values.size());
  for (std::size_t j = 0; j < eps_values.size(); ++j) {
    const Vector& eps = eps_values[j];
    for (int i = 0; i < spec.t_pairs; ++i) {
      const Vector t1 = uniform_in_ball(rng, t0, spec.t_radius);
      const Vector t2 = uniform_in_ball(rng, t0, spec.t_radius);
      const Vector v1 = uniform_in_ball(rng, v0, spec.v_radius);
      const Vector v2 = uniform_in_ball(rng, v0, spec.v_radius);
      const double dv = (v1 - v2).norm();
      if (dv < kDegeneratePair) continue;
      const Vector mixed =
          family(t1, v2, eps) - family(t1, v1, eps) - family(t2, v2, eps0) + family(t2, v1, eps0);
      samples[j].emplace_back((t1 - t2).norm(), mixed.norm() / dv);
    }
  }
  double K = 0.0;
  std::vector<double> slopes(eps_values.size(), 0.0);
  for (std::size_t j = 0; j < eps_values.size(); ++j) {
    const auto& s = samples[j];
    if (s.size() < 2) continue;
    double md = 0.0, mq = 0.0;
    for (const auto& [d, q] : s) {
      md += d;
      mq += q;
    }
    md /= static_cast<double>(s.size());
    mq /= static_cast<double>(s.size());
    double sdd = 0.0, sdq = 0.0;
    for (const auto& [d, q] : s) {
      sdd += (d - md) * (d - md);
      sdq += (d - md) * (q - mq);
    }
    slopes[j] = sdd > 0.0 ? sdq / sdd : 0.0;
    K = std::max(K, slopes[j]);
  }
  out.K = K;
  for (std::size_t j = 0; j < eps_values.size(); ++j) {
    double intercept = 0.0;
    for (const auto& [d, q] : samples[j]) intercept = std::max(intercept, q - K * d);
    out.L_eps.push_back({eps_values[j], intercept, slopes[j]});
  }

  const double eps_radius = eps0.size() > 0 ? spec.eps_radius : 0.0;
  for (int i = 0; i < 4 * spec.t_pairs; ++i) {
    const Vector ta = uniform_in_ball(rng, t0, spec.t_radius);
    const Vector tb = uniform_in_ball(rng, t0, spec.t_radius);
    const Vector va = uniform_in_ball(rng, v0, spec.v_radius);
    const Vector vb = uniform_in_ball(rng, v0, spec.v_radius);
    const Vector ea = nonnegative_offset(rng, eps0, eps_radius);
    const Vector eb = nonnegative_offset(rng, eps0, eps_radius);
    const double dist = stack(stack(ta - tb, va - vb), ea - eb).norm();
    if (dist < kDegeneratePair) continue;
    out.lipschitz_F =
        std::max(out.lipschitz_F, (family(ta, va, ea) - family(tb, vb, eb)).norm() / dist);
  }
  return out;
}

PerturbedFamily builtin_family(std::string_view name) {
  const Vector eps0 = scalar(0.0);
  if (name == "affine") {
    FamilyMap f = [](const Vector& t, const Vector& v, const Vector&) { return scalar(t(0) - v(0)); };
    FamilyJacobians jac{
        [](const Vector&, const Vector&, const Vector&) { return Matrix::Constant(1, 1, 1.0); },
        [](const Vector&, const Vector&, const Vector&) { return Matrix::Constant(1, 1, -1.0); },
    };
    return PerturbedFamily(f, scalar(0.0), scalar(0.0), eps0, 1.0, SolverConfig{}.residual_tol, jac);
  }
  if (name == "trig" || name == "trig_diag") {
    FamilyMap f = [](const Vector& t, const Vector& v, const Vector&) {
      return scalar(v(0) * std::cos(t(0)) + v(1) * std::sin(t(0)));
    };
    FamilyJacobians jac{
        [](const Vector& t, const Vector& v, const Vector&) {
          return Matrix::Constant(1, 1, -v(0) * std::sin(t(0)) + v(1) * std::cos(t(0)));
        },
        [](const Vector& t, const Vector&, const Vector&) {
          Matrix j(1, 2);
          j << std::cos(t(0)), std::sin(t(0));
          return j;
        },
    };
    Vector v0(2);
    double t0 = std::numbers::pi / 2;
    if (name == "trig") {
      v0 << 1.0, 0.0;
    } else {
      v0 << 1.0, 1.0;
      t0 = 0.75 * std::numbers::pi;
    }
    return PerturbedFamily(f, scalar(t0), v0, eps0, 1.0, SolverConfig{}.residual_tol, jac);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown built-in family '" + std::string(name) + "'");
}

}  // namespace lipimpl
