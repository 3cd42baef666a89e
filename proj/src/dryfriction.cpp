#include "lipimpl/dryfriction.hpp"

#include "lipimpl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <mutex>
#include <sstream>

namespace lipimpl::dryfriction {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kProbes = 8;
constexpr int kBaseScanResolution = 10000;
constexpr double kZeroLocationTol = 1e-10;

double switching_value(double t, const Pair& x) { return x(0) * std::cos(t) + x(1) * std::sin(t); }
double switching_rate(double t, const Pair& x) { return -x(0) * std::sin(t) + x(1) * std::cos(t); }

// Sign changes in a sampled sequence; exact zeros are skipped so a crossing
// through a node is still counted once. `brackets` receives the node index
// pairs enclosing each change.
int count_sign_changes(const std::vector<double>& values,
                       std::vector<std::pair<std::size_t, std::size_t>>* brackets = nullptr) {
  int changes = 0;
  std::size_t last = values.size();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] == 0.0) continue;
    if (last != values.size() && (values[last] > 0.0) != (values[i] > 0.0)) {
      ++changes;
      if (brackets) brackets->emplace_back(last, i);
    }
    last = i;
  }
  return changes;
}

std::vector<double> linspace(double lo, double hi, int intervals) {
  std::vector<double> out(static_cast<std::size_t>(intervals) + 1);
  for (int i = 0; i <= intervals; ++i) {
    out[static_cast<std::size_t>(i)] = lo + (hi - lo) * static_cast<double>(i) / intervals;
  }
  out.back() = hi;
  return out;
}

double spread(const std::vector<double>& values) {
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  return *mx > 0.0 ? (*mx - *mn) / *mx : 0.0;
}

// Small LRU of trajectories keyed on (v, eps). Lookups are synchronised;
// integration happens outside the lock, so two threads may both compute the
// same entry, with identical results.
class TrajectoryCache {
 public:
  explicit TrajectoryCache(OscillatorSpec spec) : spec_(std::move(spec)) {}

  std::shared_ptr<const Trajectory> get(const Pair& v, double eps) {
    {
      std::lock_guard lock(mutex_);
      for (const auto& entry : entries_) {
        if (entry.v == v && entry.eps == eps) return entry.trajectory;
      }
    }
    auto fresh = std::make_shared<const Trajectory>(integrate_system(spec_, v, eps));
    std::lock_guard lock(mutex_);
    entries_.push_front({v, eps, fresh});
    if (entries_.size() > kCapacity) entries_.pop_back();
    return fresh;
  }

 private:
  static constexpr std::size_t kCapacity = 16;
  struct Entry {
    Pair v;
    double eps;
    std::shared_ptr<const Trajectory> trajectory;
  };
  OscillatorSpec spec_;
  std::mutex mutex_;
  std::deque<Entry> entries_;
};

bool within(double value, double radius) { return value <= radius * (1.0 + 1e-9) + 1e-15; }

}  // namespace

Pair rotate(double t, double u, double u_dot) {
  const double c = std::cos(t), s = std::sin(t);
  return Pair(c * u - s * u_dot, s * u + c * u_dot);
}

Pair unrotate(double t, double x1, double x2) {
  const double c = std::cos(t), s = std::sin(t);
  return Pair(c * x1 + s * x2, -s * x1 + c * x2);
}

Forcing forcing_by_name(std::string_view name) {
  if (name == "zero") return [](double, double, double) { return 0.0; };
  if (name == "cos") return [](double t, double, double) { return std::cos(t); };
  throw Error(ErrorCode::InvalidArgument, "unknown forcing '" + std::string(name) + "'");
}

std::vector<double> unperturbed_zeros(const Pair& v) {
  if (v(0) == 0.0 && v(1) == 0.0) return {};
  double phi = std::fmod(std::atan2(-v(0), v(1)), std::numbers::pi);
  if (phi < 0.0) phi += std::numbers::pi;
  std::vector<double> zeros;
  for (double z : {phi, phi + std::numbers::pi}) {
    if (z > 0.0 && z < kTwoPi) zeros.push_back(z);
  }
  return zeros;
}

OscillatorSpec OscillatorSpec::with_default_bracket(Pair v0, double eps) {
  const auto zeros = unperturbed_zeros(v0);
  if (zeros.empty()) throw Error(ErrorCode::NoZeroInBracket, "v0 = 0 has no switching time");
  OscillatorSpec spec;
  spec.v0 = v0;
  spec.eps = eps;
  const double t0 = zeros.front();
  spec.a = std::max(t0 - 0.5, 0.5 * t0);
  spec.b = std::min(t0 + 0.5, 0.5 * (t0 + kTwoPi));
  return spec;
}

void OscillatorSpec::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (!(0.0 < a && a < b && b < kTwoPi)) fail("bracket must satisfy 0 < a < b < 2 pi");
  if (!(eps >= 0.0)) fail("eps must be nonnegative");
  if (!(horizon >= b)) fail("horizon must be >= b");
  if (t_grid < 1) fail("t_grid must be >= 1");
  if (!g) fail("forcing g is empty");
}

Pair Trajectory::state_at(double t) const {
  if (!(t >= 0.0 && t <= horizon_ * (1.0 + 1e-14))) {
    std::ostringstream msg;
    msg << "t = " << t << " outside [0, " << horizon_ << "]";
    throw Error(ErrorCode::InvalidArgument, msg.str());
  }
  if (steps_.empty()) return v;
  auto it = std::upper_bound(steps_.begin(), steps_.end(), t,
                             [](double value, const dopri5::DenseStep& s) { return value < s.t; });
  if (it != steps_.begin()) --it;
  return it->at(t);
}

double Trajectory::u_at(double t) const { return switching_value(t, state_at(t)); }
double Trajectory::u_dot_at(double t) const { return switching_rate(t, state_at(t)); }

Trajectory integrate_system(const OscillatorSpec& spec, const Pair& v, double eps) {
  spec.validate();
  if (!(eps >= 0.0)) throw Error(ErrorCode::InvalidArgument, "eps must be nonnegative");
  const auto& opt = spec.integrator;
  const Forcing& g = spec.g;

  Trajectory out;
  out.v = v;
  out.eps = eps;
  out.horizon_ = spec.horizon;

  // Pushes toward u = 0 from both sides with zero velocity: sticking.
  auto sticks = [&](double t, double u_dot) {
    if (eps == 0.0 || std::abs(u_dot) > opt.stick_tol) return false;
    const double from_above = -1.0 + g(t, 0.0, u_dot);
    const double from_below = 1.0 + g(t, 0.0, u_dot);
    return from_above < 0.0 && from_below > 0.0;
  };

  double mode = 1.0;
  if (v(0) != 0.0) {
    mode = v(0) > 0.0 ? 1.0 : -1.0;
  } else if (v(1) != 0.0) {
    mode = v(1) > 0.0 ? 1.0 : -1.0;
  } else if (sticks(0.0, 0.0)) {
    throw Error(ErrorCode::StickDetected, "initial state rests on the switching surface");
  } else if (eps > 0.0 && -1.0 + g(0.0, 0.0, 0.0) < 0.0) {
    mode = -1.0;
  }

  auto rhs = [&](double t, const dopri5::State& x) -> dopri5::State {
    const double c = std::cos(t), s = std::sin(t);
    const double u = x(0) * c + x(1) * s;
    const double u_dot = -x(0) * s + x(1) * c;
    const double f = eps * (-mode + g(t, u, u_dot));
    return dopri5::State(-f * s, f * c);
  };
  auto exact = [&](double t, const Pair& x, double tau) {
    return dopri5::step(rhs, t, x, tau, opt.rtol, opt.atol).y;
  };

  double t = 0.0;
  Pair x = v;
  double h = opt.h_max;
  long steps = 0;
  while (t < spec.horizon) {
    if (++steps > opt.max_steps) {
      throw Error(ErrorCode::MaxIterExceeded, "integrator step cap reached");
    }
    h = std::min(h, opt.h_max);
    const bool last = t + h >= spec.horizon;
    if (last) h = spec.horizon - t;

    const auto st = dopri5::step(rhs, t, x, h, opt.rtol, opt.atol);
    if (!(st.error <= 1.0)) {
      if (!std::isfinite(st.error)) {
        throw Error(ErrorCode::InvalidArgument, "non-finite right-hand side");
      }
      h *= std::max(0.2, 0.9 * std::pow(st.error, -0.2));
      if (h < 1e-14) throw Error(ErrorCode::MaxIterExceeded, "step size underflow");
      continue;
    }

    int hit = 0;
    for (int j = 1; j <= kProbes && hit == 0; ++j) {
      const double tau = h * j / kProbes;
      const Pair probe = j == kProbes ? st.y : st.dense.at(t + tau);
      if (mode * switching_value(t + tau, probe) < 0.0) hit = j;
    }
    int confirmed = 0;
    for (int j = hit; hit > 0 && j <= kProbes && confirmed == 0; ++j) {
      const double tau = h * j / kProbes;
      const Pair probe = j == kProbes ? st.y : exact(t, x, tau);
      if (mode * switching_value(t + tau, probe) < 0.0) confirmed = j;
    }

    if (confirmed > 0) {
      double lo = h * (confirmed - 1) / kProbes;
      double hi = confirmed == kProbes ? h : h * confirmed / kProbes;
      for (int it = 0; it < opt.bisection_max && hi - lo > opt.event_tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mode * switching_value(t + mid, exact(t, x, mid)) < 0.0) {
          hi = mid;
        } else {
          lo = mid;
        }
      }
      const auto ev = dopri5::step(rhs, t, x, hi, opt.rtol, opt.atol);
      out.steps_.push_back(ev.dense);
      t = hi == h && last ? spec.horizon : t + hi;
      x = ev.y;
      out.events.push_back(t);
      if (static_cast<int>(out.events.size()) > opt.max_events) {
        throw Error(ErrorCode::MaxEventsExceeded, "too many switching events");
      }
      const double u_dot = switching_rate(t, x);
      if (sticks(t, u_dot)) {
        std::ostringstream msg;
        msg << "non-transversal switch at t = " << t << " (u' = " << u_dot << ")";
        throw Error(ErrorCode::StickDetected, msg.str());
      }
      mode = -mode;
      continue;
    }

    out.steps_.push_back(st.dense);
    t = last ? spec.horizon : t + h;
    x = st.y;
    h *= st.error == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(st.error, -0.2), 0.2, 5.0);
  }

  out.times = linspace(0.0, spec.horizon, spec.t_grid);
  out.states.reserve(out.times.size());
  for (double time : out.times) out.states.push_back(out.state_at(time));
  out.states.front() = v;
  if (eps > 0.0) {
    out.y_field.reserve(out.times.size());
    for (const auto& state : out.states) out.y_field.push_back((state - v) / eps);
  }
  return out;
}

BasePoint base_point(const OscillatorSpec& spec) {
  spec.validate();
  const Pair& v0 = spec.v0;
  std::vector<double> values;
  for (double t : linspace(spec.a, spec.b, kBaseScanResolution)) {
    values.push_back(switching_value(t, v0));
  }
  const int changes = count_sign_changes(values);
  std::ostringstream where;
  where << " of F(., v0, 0) on [" << spec.a << ", " << spec.b << "]";
  if (changes == 0) throw Error(ErrorCode::NoZeroInBracket, "no sign change" + where.str());
  if (changes > 1) {
    throw Error(ErrorCode::MultipleZerosInBracket, std::to_string(changes) + " sign changes" + where.str());
  }
  std::vector<double> inside;
  for (double z : unperturbed_zeros(v0)) {
    if (z > spec.a && z < spec.b) inside.push_back(z);
  }
  if (inside.size() != 1) throw Error(ErrorCode::NoZeroInBracket, "no analytic zero" + where.str());

  BasePoint bp;
  bp.t0 = inside.front();
  const double rate = switching_rate(bp.t0, v0);
  if (!(std::abs(rate) > 1e-12)) {
    throw Error(ErrorCode::SingularJacobian, "switching time is not a simple zero");
  }
  bp.R = 1.0 / std::abs(rate);
  return bp;
}

PerturbedFamily family_F(const OscillatorSpec& spec) {
  const BasePoint bp = base_point(spec);
  auto cache = std::make_shared<TrajectoryCache>(spec);
  auto trajectory = [cache](const Vector& v, const Vector& eps) {
    return cache->get(Pair(v(0), v(1)), eps(0));
  };

  FamilyMap f = [trajectory](const Vector& t, const Vector& v, const Vector& eps) {
    return Vector::Constant(1, trajectory(v, eps)->u_at(t(0)));
  };
  FamilyJacobians jac;
  jac.wrt_t = [trajectory](const Vector& t, const Vector& v, const Vector& eps) {
    return Matrix::Constant(1, 1, trajectory(v, eps)->u_dot_at(t(0)));
  };
  jac.wrt_v = [f](const Vector& t, const Vector& v, const Vector& eps) {
    if (eps(0) == 0.0) {
      Matrix j(1, 2);
      j << std::cos(t(0)), std::sin(t(0));
      return j;
    }
    return central_difference_jacobian([&](const Vector& vv) { return f(t, vv, eps); }, v,
                                       SolverConfig{}.fd_step);
  };

  const double r = std::min(bp.t0, spec.horizon - bp.t0);
  Vector v0(2);
  v0 << spec.v0(0), spec.v0(1);
  return PerturbedFamily(std::move(f), Vector::Constant(1, bp.t0), v0, Vector::Zero(1), r,
                         SolverConfig{}.residual_tol, std::move(jac));
}

AssumptionFReport verify_assumption_F(const OscillatorSpec& spec,
                                      const std::vector<double>& eps_ladder,
                                      const std::vector<Pair>& v_samples,
                                      const std::vector<double>& t_samples) {
  if (eps_ladder.empty() || v_samples.empty() || t_samples.empty()) {
    throw Error(ErrorCode::InvalidArgument, "assumption check needs eps, v and t samples");
  }
  AssumptionFReport report;
  for (double eps : eps_ladder) {
    if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "eps ladder must be positive");
    struct Node {
      double t;
      Pair v;
      Pair y;
    };
    std::vector<Node> nodes;
    for (const auto& v : v_samples) {
      const Trajectory tr = integrate_system(spec, v, eps);
      for (double t : t_samples) nodes.push_back({t, v, (tr.state_at(t) - v) / eps});
    }
    LadderRow row;
    row.eps = eps;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      row.sup_y = std::max(row.sup_y, nodes[i].y.norm());
      for (std::size_t j = i + 1; j < nodes.size(); ++j) {
        const double dt = nodes[i].t - nodes[j].t;
        const double dist = std::sqrt(dt * dt + (nodes[i].v - nodes[j].v).squaredNorm());
        if (dist < 1e-12) continue;
        row.lip_y = std::max(row.lip_y, (nodes[i].y - nodes[j].y).norm() / dist);
      }
    }
    report.rows.push_back(row);
  }
  std::vector<double> sups, lips;
  for (const auto& row : report.rows) {
    sups.push_back(row.sup_y);
    lips.push_back(row.lip_y);
  }
  report.sup_y_spread = spread(sups);
  report.lip_y_spread = spread(lips);
  report.passes = report.sup_y_spread <= report.tolerance && report.lip_y_spread <= report.tolerance;
  return report;
}

SwitchReport proposition_one_check(const OscillatorSpec& spec, const Pair& v1, const Pair& v2,
                                   double eps, double Delta, const NvGrid& grid,
                                   std::optional<double> delta, const SolverConfig& config) {
  if (!delta) {
    throw Error(ErrorCode::DeltaBallUnknown, "run a delta scan before the exclusion check");
  }
  if (!(Delta > 0.0)) throw Error(ErrorCode::InvalidArgument, "Delta must be positive");
  if (grid.t_points < 1 || grid.segment_points < 1 || grid.slice_resolution < 1) {
    throw Error(ErrorCode::InvalidArgument, "grid sizes must be positive");
  }
  if (!within((v1 - spec.v0).norm(), *delta) || !within((v2 - spec.v0).norm(), *delta) ||
      !(eps >= 0.0) || !within(eps, *delta)) {
    throw Error(ErrorCode::OutsideBall, "v1, v2 and eps must lie in the delta-ball");
  }

  const BasePoint bp = base_point(spec);
  const PerturbedFamily family = family_F(spec);

  SwitchReport report;
  report.t0 = bp.t0;
  report.R = bp.R;
  report.Delta = Delta;
  report.eps = eps;
  report.delta = *delta;
  report.v1 = v1;
  report.v2 = v2;
  report.theta = solve_theta(family, Vector(v1), Vector::Constant(1, eps), config)(0);
  const double width = (bp.R + Delta) * (v1 - v2).norm();
  report.lo = report.theta - width;
  report.hi = report.theta + width;

  // Nodes on the open complement of the exclusion interval in [a, b].
  const double left = std::max(0.0, std::min(report.lo, spec.b) - spec.a);
  const double right = std::max(0.0, spec.b - std::max(report.hi, spec.a));
  if (left + right <= 0.0) {
    throw Error(ErrorCode::InvalidArgument, "exclusion interval covers [a, b]");
  }
  int n_left = static_cast<int>(std::lround(grid.t_points * left / (left + right)));
  if (left > 0.0) n_left = std::max(n_left, 1);
  if (right > 0.0) n_left = std::min(n_left, grid.t_points - 1);
  const int n_right = grid.t_points - n_left;
  std::vector<double> t_nodes;
  for (int i = 0; i < n_left; ++i) t_nodes.push_back(spec.a + left * i / n_left);
  for (int i = 1; i <= n_right; ++i) {
    t_nodes.push_back(i == n_right ? spec.b : spec.b - right + right * i / n_right);
  }

  const auto slice_times = linspace(spec.a, spec.b, grid.slice_resolution);
  report.min_abs_F = std::numeric_limits<double>::infinity();
  report.slices_ok = true;
  for (int j = 0; j < grid.segment_points; ++j) {
    const double s = grid.segment_points == 1 ? 0.0 : static_cast<double>(j) / (grid.segment_points - 1);
    const Pair v = v1 + s * (v2 - v1);
    const Trajectory tr = integrate_system(spec, v, eps);
    for (double t : t_nodes) {
      const double value = tr.u_at(t);
      report.min_abs_F = std::min(report.min_abs_F, std::abs(value));
      report.nodes.push_back({t, s, v, value});
    }

    std::vector<double> values;
    values.reserve(slice_times.size());
    for (double t : slice_times) values.push_back(tr.u_at(t));
    std::vector<std::pair<std::size_t, std::size_t>> brackets;
    SliceZero slice;
    slice.s = s;
    slice.sign_changes = count_sign_changes(values, &brackets);
    if (slice.sign_changes == 1) {
      double lo = slice_times[brackets[0].first];
      double hi = slice_times[brackets[0].second];
      const bool lo_positive = values[brackets[0].first] > 0.0;
      for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        if ((tr.u_at(mid) > 0.0) == lo_positive) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      slice.zero = 0.5 * (lo + hi);
      slice.inside = slice.zero >= report.lo - kZeroLocationTol &&
                     slice.zero <= report.hi + kZeroLocationTol;
    }
    report.slices_ok = report.slices_ok && slice.sign_changes == 1 && slice.inside;
    report.slices.push_back(slice);
  }
  report.nv_ok = report.min_abs_F > 0.0 && report.slices_ok;
  return report;
}

}  // namespace lipimpl::dryfriction
