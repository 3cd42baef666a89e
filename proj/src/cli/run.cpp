#include "lipimpl/cli/run.hpp"

#include "lipimpl/builtin_problems.hpp"
#include "lipimpl/dryfriction.hpp"
#include "lipimpl/errors.hpp"
#include "lipimpl/perturbation.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>
#include <variant>

namespace lipimpl::cli {
namespace {

namespace df = dryfriction;

using Cell = std::variant<std::monostate, double, long long, bool, std::string>;

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<Cell>> rows;
};

struct Outcome {
  Json result = Json::object();        ///< full per-point result document
  Json values = Json::object();        ///< summary scalars
  Json certificates = Json::object();
  Table table;
};

using Job = std::function<Outcome()>;

// ---------------------------------------------------------------- decoding

const Json& field_or_null(const Json& object, std::string_view key) {
  static const Json null;
  const auto it = object.find(key);
  return it == object.end() ? null : *it;
}

double number(const Json& object, std::string_view key, const std::string& prefix, double fallback) {
  const Json& value = field_or_null(object, key);
  if (value.is_null()) return fallback;
  if (!value.is_number()) throw SpecError(prefix + "." + std::string(key), "expected a number");
  return value.get<double>();
}

int integer(const Json& object, std::string_view key, const std::string& prefix, int fallback,
            int minimum = 1) {
  const Json& value = field_or_null(object, key);
  if (value.is_null()) return fallback;
  const std::string field = prefix + "." + std::string(key);
  if (!value.is_number_integer()) throw SpecError(field, "expected an integer");
  const auto n = value.get<long long>();
  if (n < minimum || n > 100'000'000) throw SpecError(field, "out of range");
  return static_cast<int>(n);
}

Vector vector_of(const Json& value, const std::string& field) {
  if (value.is_number()) return Vector::Constant(1, value.get<double>());
  if (!value.is_array()) throw SpecError(field, "expected a number or an array of numbers");
  Vector out(static_cast<Eigen::Index>(value.size()));
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (!value[i].is_number()) throw SpecError(field, "expected an array of numbers");
    out(static_cast<Eigen::Index>(i)) = value[i].get<double>();
  }
  return out;
}

Vector vector_param(const Json& object, std::string_view key, const std::string& prefix,
                    const Vector& fallback, Eigen::Index size) {
  const Json& value = field_or_null(object, key);
  const std::string field = prefix + "." + std::string(key);
  Vector out = value.is_null() ? fallback : vector_of(value, field);
  if (out.size() != size) {
    throw SpecError(field, "expected " + std::to_string(size) + " component(s), got " +
                               std::to_string(out.size()));
  }
  return out;
}

df::Pair pair_param(const Json& object, std::string_view key, const std::string& prefix,
                    const df::Pair& fallback) {
  const Vector v = vector_param(object, key, prefix, fallback, 2);
  return {v(0), v(1)};
}

std::vector<double> list_param(const Json& object, std::string_view key, const std::string& prefix,
                               std::vector<double> fallback) {
  const Json& value = field_or_null(object, key);
  if (value.is_null()) return fallback;
  const std::string field = prefix + "." + std::string(key);
  const Vector v = vector_of(value, field);
  if (v.size() == 0) throw SpecError(field, "expected a non-empty list");
  return {v.data(), v.data() + v.size()};
}

bool positive(double x) { return x > 0.0 && std::isfinite(x); }

void require_positive(double x, const std::string& field) {
  if (!positive(x)) throw SpecError(field, "expected a positive number");
}

bool is_family_name(const std::string& name) {
  return name == "affine" || name == "trig" || name == "trig_diag";
}

std::string problem_name(const RunSpec& spec) {
  if (spec.problem.is_null()) return "oscillator";
  if (spec.problem.is_string()) return spec.problem.get<std::string>();
  return spec.problem["name"].get<std::string>();
}

df::OscillatorSpec oscillator_spec(const RunSpec& spec) {
  const Json problem = spec.problem.is_object() ? spec.problem : Json::object();
  const df::Pair v0 = pair_param(problem, "v0", "problem", df::Pair(1.0, 0.0));
  df::OscillatorSpec osc;
  try {
    osc = df::OscillatorSpec::with_default_bracket(v0);
  } catch (const Error& e) {
    throw SpecError("problem.v0", e.what());
  }
  if (problem.contains("g")) {
    if (!problem["g"].is_string()) throw SpecError("problem.g", "expected a forcing name");
    osc.g_name = problem["g"].get<std::string>();
    try {
      osc.g = df::forcing_by_name(osc.g_name);
    } catch (const Error& e) {
      throw SpecError("problem.g", e.what());
    }
  }
  osc.a = number(problem, "a", "problem", osc.a);
  osc.b = number(problem, "b", "problem", osc.b);
  osc.horizon = number(problem, "horizon", "problem", osc.horizon);
  osc.t_grid = integer(problem, "t_grid", "problem", osc.t_grid);
  if (problem.contains("integrator")) {
    const Json& in = problem["integrator"];
    const std::string prefix = "problem.integrator";
    auto& opt = osc.integrator;
    opt.rtol = number(in, "rtol", prefix, opt.rtol);
    opt.atol = number(in, "atol", prefix, opt.atol);
    opt.h_max = number(in, "h_max", prefix, opt.h_max);
    opt.event_tol = number(in, "event_tol", prefix, opt.event_tol);
    opt.bisection_max = integer(in, "bisection_max", prefix, opt.bisection_max);
    opt.stick_tol = number(in, "stick_tol", prefix, opt.stick_tol);
    opt.max_events = integer(in, "max_events", prefix, opt.max_events);
    opt.max_steps = integer(in, "max_steps", prefix, static_cast<int>(opt.max_steps));
  }
  try {
    osc.validate();
  } catch (const Error& e) {
    throw SpecError("problem", e.what());
  }
  return osc;
}

/// The perturbed family named by the spec; build() runs inside the job.
struct FamilyRef {
  std::string name;
  std::optional<df::OscillatorSpec> oscillator;
  Eigen::Index v_dim = 0;
  Eigen::Index eps_dim = 0;

  [[nodiscard]] PerturbedFamily build() const {
    return oscillator ? df::family_F(*oscillator) : builtin_family(name);
  }
  [[nodiscard]] Vector v0() const {
    return oscillator ? Vector(oscillator->v0) : builtin_family(name).v0();
  }
  [[nodiscard]] Vector eps0() const { return Vector::Zero(eps_dim); }
};

FamilyRef family_ref(const RunSpec& spec) {
  const std::string name = problem_name(spec);
  FamilyRef ref{name, std::nullopt, 2, 1};
  if (name == "oscillator") {
    ref.oscillator = oscillator_spec(spec);
  } else if (is_family_name(name)) {
    const auto family = builtin_family(name);
    ref.v_dim = family.v0().size();
    ref.eps_dim = family.eps0().size();
  } else {
    throw SpecError("problem", "'" + name + "' is not a perturbed family; expected affine, trig, "
                               "trig_diag or oscillator");
  }
  return ref;
}

df::OscillatorSpec oscillator_only(const RunSpec& spec) {
  if (problem_name(spec) != "oscillator") {
    throw SpecError("problem", "command '" + std::string(to_string(spec.command)) +
                                   "' requires the oscillator problem");
  }
  return oscillator_spec(spec);
}

// ---------------------------------------------------------------- results

Json vector_json(const Vector& v) {
  if (v.size() == 1) return v(0);
  return std::vector<double>(v.data(), v.data() + v.size());
}

Json matrix_json(const Matrix& m) {
  if (m.rows() == 1 && m.cols() == 1) return m(0, 0);
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(row);
  }
  return out;
}

Json pair_json(const df::Pair& p) { return Json::array({p(0), p(1)}); }

Json optional_json(const std::optional<double>& x) { return x ? Json(*x) : Json(); }

/// Flattens scalar and vector values into (column, cell) pairs.
void flatten(const Json& values, std::vector<std::string>& header, std::vector<Cell>& row) {
  for (const auto& [key, value] : values.items()) {
    if (value.is_array()) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        header.push_back(key + "_" + std::to_string(i));
        row.push_back(value[i].is_number() ? Cell(value[i].get<double>()) : Cell());
      }
      continue;
    }
    header.push_back(key);
    if (value.is_boolean()) row.emplace_back(value.get<bool>());
    else if (value.is_number_integer()) row.emplace_back(value.get<long long>());
    else if (value.is_number()) row.emplace_back(value.get<double>());
    else if (value.is_string()) row.emplace_back(value.get<std::string>());
    else row.emplace_back();
  }
}

Table single_row(const Json& values) {
  Table table;
  table.rows.emplace_back();
  flatten(values, table.header, table.rows.back());
  return table;
}

std::string format_cell(const Cell& cell) {
  struct Visitor {
    std::string operator()(std::monostate) const { return ""; }
    std::string operator()(double x) const {
      char buffer[40];
      std::snprintf(buffer, sizeof buffer, "%.16e", x);
      return buffer;
    }
    std::string operator()(long long x) const { return std::to_string(x); }
    std::string operator()(bool x) const { return x ? "true" : "false"; }
    std::string operator()(const std::string& x) const { return x; }
  };
  return std::visit(Visitor{}, cell);
}

std::string render_csv(const Table& table) {
  std::string out;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i > 0) out += ',';
    out += table.header[i];
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0) out += ',';
      out += format_cell(row[i]);
    }
    out += '\n';
  }
  return out;
}

void write_atomically(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------- pipelines

Job solve_job(const RunSpec& spec) {
  const std::string name = problem_name(spec);
  const auto names = builtin_problem_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    throw SpecError("problem", "unknown problem '" + name + "'");
  }
  auto builtin = builtin_problem(name);
  const SolverConfig config = solver_config(spec, builtin.config);
  try {
    config.validate(builtin.problem.r());
  } catch (const Error& e) {
    throw SpecError("config", e.what());
  }
  const Eigen::Index n = builtin.problem.x0().size();
  const Json& x_json = field_or_null(spec.params, "x");
  if (x_json.is_null() && n > 0) throw SpecError("params.x", "required");
  const Vector x = vector_param(spec.params, "x", "params", builtin.problem.x0(), n);
  const Json& derivative_json = field_or_null(spec.params, "derivative");
  if (!derivative_json.is_null() && !derivative_json.is_boolean()) {
    throw SpecError("params.derivative", "expected true or false");
  }
  const bool derivative = derivative_json.is_boolean() && derivative_json.get<bool>();

  return [problem = std::move(builtin.problem), config, x, derivative] {
    const auto solution = solve_implicit(problem, config, x);
    const auto& cert = solution.cert;
    Outcome out;
    out.values = {{"x", vector_json(x)},
                  {"y", vector_json(solution.y)},
                  {"iterations", cert.iterations},
                  {"q_measured", cert.q_measured},
                  {"initial_displacement", cert.initial_displacement},
                  {"residual", cert.residual},
                  {"ball_ok", cert.ball_ok}};
    if (derivative) out.values["dy_dx"] = matrix_json(implicit_derivative(problem, x, solution.y, config));
    out.certificates["ball_ok"] = cert.ball_ok;
    out.result = out.values;
    out.result["step_norms"] = cert.step_norms;
    out.table = single_row(out.values);
    return out;
  };
}

Job theta_job(const RunSpec& spec) {
  const FamilyRef ref = family_ref(spec);
  const SolverConfig config = solver_config(spec, SolverConfig{});
  const Vector v = vector_param(spec.params, "v", "params", ref.v0(), ref.v_dim);
  const Vector eps = vector_param(spec.params, "eps", "params", ref.eps0(), ref.eps_dim);
  return [ref, config, v, eps] {
    const auto family = ref.build();
    const ChordSolver solver(family.as_implicit(), config);
    const auto solution = solver.solve(stack(v, eps));
    const auto& cert = solution.cert;
    Outcome out;
    out.values = {{"v", vector_json(v)},
                  {"eps", vector_json(eps)},
                  {"theta", vector_json(solution.y)},
                  {"R", theoretical_modulus(family, config)},
                  {"iterations", cert.iterations},
                  {"q_measured", cert.q_measured},
                  {"initial_displacement", cert.initial_displacement},
                  {"residual", cert.residual},
                  {"ball_ok", cert.ball_ok}};
    out.certificates["ball_ok"] = cert.ball_ok;
    out.result = out.values;
    out.table = single_row(out.values);
    return out;
  };
}

Json theta_result_json(const ThetaResult& r) {
  return {{"theta", vector_json(r.theta)}, {"R", r.R},
          {"quotient_sup", r.quotient_sup}, {"delta", r.delta_used},
          {"Delta", r.Delta},               {"pairs_used", r.pairs_used},
          {"ine_ok", r.ine_ok}};
}

Json scan_json(const DeltaScan& scan, Table* table) {
  Json entries = Json::array();
  for (const auto& entry : scan.entries) {
    Json row = theta_result_json(entry.result);
    row["eps"] = vector_json(entry.eps);
    entries.push_back(row);
    if (table) {
      std::vector<Cell> cells;
      std::vector<std::string> header;
      flatten(Json{{"delta", entry.delta},
                   {"eps", vector_json(entry.eps)},
                   {"quotient_sup", entry.result.quotient_sup},
                   {"R", entry.result.R},
                   {"Delta", entry.result.Delta},
                   {"pairs_used", entry.result.pairs_used},
                   {"ine_ok", entry.result.ine_ok}},
              header, cells);
      table->header = header;
      table->rows.push_back(std::move(cells));
    }
  }
  return entries;
}

std::vector<double> eps_fractions(const RunSpec& spec) {
  auto fractions = list_param(spec.params, "eps_fractions", "params", {0.0, 0.5, 1.0});
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw SpecError("params.eps_fractions", "expected values in [0, 1]");
  }
  return fractions;
}

std::vector<double> ladder_param(const RunSpec& spec, std::string_view key, std::vector<double> fallback) {
  auto ladder = list_param(spec.params, key, "params", std::move(fallback));
  for (double d : ladder) require_positive(d, "params." + std::string(key));
  return ladder;
}

Job lipschitz_job(const RunSpec& spec) {
  const FamilyRef ref = family_ref(spec);
  const SolverConfig config = solver_config(spec, SolverConfig{});
  const Vector eps = vector_param(spec.params, "eps", "params", ref.eps0(), ref.eps_dim);
  const double delta = number(spec.params, "delta", "params", 1e-2);
  const double Delta = number(spec.params, "Delta", "params", 0.1);
  const int n_pairs = integer(spec.params, "n_pairs", "params", 64);
  require_positive(delta, "params.delta");
  require_positive(Delta, "params.Delta");
  const bool use_ladder = spec.params.contains("ladder");
  const auto ladder = use_ladder ? ladder_param(spec, "ladder", {}) : std::vector<double>{};
  const auto fractions = eps_fractions(spec);
  const std::uint64_t seed = spec.seed;

  return [=] {
    const auto family = ref.build();
    Outcome out;
    if (use_ladder) {
      const auto scan = delta_scan(family, ladder, Delta, n_pairs, seed, config, fractions);
      out.values = {{"delta", optional_json(scan.delta)},
                    {"Delta", scan.Delta},
                    {"R", theoretical_modulus(family, config)},
                    {"ine_ok", scan.delta.has_value()}};
      out.result = out.values;
      out.result["entries"] = scan_json(scan, &out.table);
      out.certificates["ine_ok"] = scan.delta.has_value();
      return out;
    }
    const auto r = empirical_lipschitz_quotient(family, eps, delta, n_pairs, seed, config, Delta);
    out.values = theta_result_json(r);
    out.values["eps"] = vector_json(eps);
    out.certificates["ine_ok"] = r.ine_ok;
    out.result = out.values;
    out.table = single_row(out.values);
    return out;
  };
}

Job assumptions_job(const RunSpec& spec) {
  const FamilyRef ref = family_ref(spec);
  SampleSpec sample;
  const Json& p = spec.params;
  sample.t_radius = number(p, "t_radius", "params", sample.t_radius);
  sample.v_radius = number(p, "v_radius", "params", sample.v_radius);
  sample.eps_radius = number(p, "eps_radius", "params", sample.eps_radius);
  sample.t_pairs = integer(p, "t_pairs", "params", sample.t_pairs);
  sample.eps_v_points = integer(p, "eps_v_points", "params", sample.eps_v_points);
  require_positive(sample.t_radius, "params.t_radius");
  require_positive(sample.v_radius, "params.v_radius");
  require_positive(sample.eps_radius, "params.eps_radius");

  std::vector<double> eps_ladder;
  std::vector<df::Pair> ladder_v;
  std::vector<double> ladder_t;
  if (ref.oscillator) {
    eps_ladder = ladder_param(spec, "eps_ladder", {1e-1, 1e-2, 1e-3});
    const df::Pair v0 = ref.oscillator->v0;
    const Json& vs = field_or_null(p, "ladder_v");
    if (vs.is_null()) {
      for (const df::Pair& d : {df::Pair(0, 0), df::Pair(0.01, 0), df::Pair(-0.01, 0), df::Pair(0, 0.01),
                                df::Pair(0, -0.01)}) {
        ladder_v.push_back(v0 + d);
      }
    } else {
      if (!vs.is_array() || vs.empty()) throw SpecError("params.ladder_v", "expected a list of pairs");
      for (const auto& item : vs) {
        const Vector v = vector_of(item, "params.ladder_v");
        if (v.size() != 2) throw SpecError("params.ladder_v", "expected pairs");
        ladder_v.emplace_back(v(0), v(1));
      }
    }
    const int n_t = integer(p, "ladder_t_points", "params", 64, 2);
    for (int i = 0; i < n_t; ++i) ladder_t.push_back(ref.oscillator->horizon * i / (n_t - 1));
  } else {
    for (std::string_view key : {"eps_ladder", "ladder_v", "ladder_t_points"}) {
      if (p.contains(key)) throw SpecError("params." + std::string(key), "only used with the oscillator problem");
    }
  }
  const std::uint64_t seed = spec.seed;

  return [=] {
    const auto family = ref.build();
    const bool finite_differences = ref.oscillator.has_value() || !family.has_analytic_jacobians();
    if (finite_differences) {
      spdlog::warn("F'_v is approximated by finite differences away from eps0; its continuity at "
                   "eps0 is assumed, not verified");
    }
    const auto est = estimate_assumption_constants(family, sample, seed);
    Outcome out;
    double max_L_eps_v = 0.0, max_L_eps = 0.0;
    Json points = Json::array(), per_eps = Json::array();
    Table& table = out.table;
    table.header = {"quantity", "eps", "v_0", "v_1", "value"};
    auto row = [&](std::string quantity, const Vector& eps, const Vector* v, double value) {
      std::vector<Cell> cells{std::move(quantity), eps.size() > 0 ? Cell(eps(0)) : Cell()};
      for (Eigen::Index i = 0; i < 2; ++i) cells.push_back(v && i < v->size() ? Cell((*v)(i)) : Cell());
      cells.emplace_back(value);
      table.rows.push_back(std::move(cells));
    };
    for (const auto& pe : est.L_eps_v) {
      max_L_eps_v = std::max(max_L_eps_v, pe.value);
      points.push_back({{"eps", vector_json(pe.eps)}, {"v", vector_json(pe.v)}, {"value", pe.value}});
      row("L_eps_v", pe.eps, &pe.v, pe.value);
    }
    for (const auto& ee : est.L_eps) {
      max_L_eps = std::max(max_L_eps, ee.intercept);
      per_eps.push_back({{"eps", vector_json(ee.eps)}, {"intercept", ee.intercept}, {"slope", ee.slope}});
      row("L_eps", ee.eps, nullptr, ee.intercept);
      row("slope", ee.eps, nullptr, ee.slope);
    }
    row("K", Vector(), nullptr, est.K);
    row("lipschitz_F", Vector(), nullptr, est.lipschitz_F);
    out.values = {{"K", est.K},
                  {"lipschitz_F", est.lipschitz_F},
                  {"max_L_eps_v", max_L_eps_v},
                  {"max_L_eps", max_L_eps},
                  {"finite_differences", finite_differences}};
    out.result = out.values;
    out.result["L_eps_v"] = points;
    out.result["L_eps"] = per_eps;
    if (ref.oscillator) {
      const auto report = df::verify_assumption_F(*ref.oscillator, eps_ladder, ladder_v, ladder_t);
      Json rows = Json::array();
      for (const auto& r : report.rows) {
        rows.push_back({{"eps", r.eps}, {"sup_y", r.sup_y}, {"lip_y", r.lip_y}});
        row("sup_y", Vector::Constant(1, r.eps), nullptr, r.sup_y);
        row("lip_y", Vector::Constant(1, r.eps), nullptr, r.lip_y);
      }
      out.values["sup_y_spread"] = report.sup_y_spread;
      out.values["lip_y_spread"] = report.lip_y_spread;
      out.values["assumption_F"] = report.passes;
      out.result.update(out.values);
      out.result["ladder"] = rows;
      out.certificates["assumption_F"] = report.passes;
    }
    return out;
  };
}

Job oscillator_job(const RunSpec& spec) {
  const auto osc = oscillator_only(spec);
  const df::Pair v = pair_param(spec.params, "v", "params", osc.v0);
  const double eps = number(spec.params, "eps", "params", 0.0);
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw SpecError("params.eps", "expected eps >= 0");

  return [osc, v, eps] {
    const auto tr = df::integrate_system(osc, v, eps);
    Outcome out;
    out.values = {{"v", pair_json(v)},
                  {"eps", eps},
                  {"events", tr.events},
                  {"event_count", tr.events.size()},
                  {"steps", tr.step_count()},
                  {"x_end", pair_json(tr.states.back())}};
    out.result = out.values;
    Json states = Json::array(), y = Json::array();
    out.table.header = {"t", "x1", "x2", "u", "u_dot", "y1", "y2"};
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      const double t = tr.times[i];
      const df::Pair& x = tr.states[i];
      const df::Pair uu = df::unrotate(t, x(0), x(1));
      std::vector<Cell> cells{t, x(0), x(1), uu(0), uu(1)};
      if (tr.y_field.empty()) {
        cells.insert(cells.end(), {Cell(), Cell()});
      } else {
        cells.insert(cells.end(), {tr.y_field[i](0), tr.y_field[i](1)});
        y.push_back(pair_json(tr.y_field[i]));
      }
      states.push_back(pair_json(x));
      out.table.rows.push_back(std::move(cells));
    }
    out.result["times"] = tr.times;
    out.result["states"] = states;
    if (!tr.y_field.empty()) out.result["y"] = y;
    return out;
  };
}

Job proposition_job(const RunSpec& spec) {
  const auto osc = oscillator_only(spec);
  const SolverConfig config = solver_config(spec, SolverConfig{});
  const Json& p = spec.params;
  const df::Pair v1 = pair_param(p, "v1", "params", osc.v0);
  const df::Pair v2 = pair_param(p, "v2", "params", v1);
  const double eps = number(p, "eps", "params", 0.0);
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw SpecError("params.eps", "expected eps >= 0");
  const double Delta = number(p, "Delta", "params", 0.1);
  require_positive(Delta, "params.Delta");
  const auto ladder = ladder_param(spec, "ladder", {1e-1, 1e-2, 1e-3});
  const int n_pairs = integer(p, "n_pairs", "params", 64);
  const auto fractions = eps_fractions(spec);
  df::NvGrid grid;
  if (p.contains("grid")) {
    grid.t_points = integer(p["grid"], "t_points", "params.grid", grid.t_points, 2);
    grid.segment_points = integer(p["grid"], "segment_points", "params.grid", grid.segment_points, 2);
    grid.slice_resolution = integer(p["grid"], "slice_resolution", "params.grid", grid.slice_resolution, 2);
  }
  const std::uint64_t seed = spec.seed;

  return [=] {
    const auto family = df::family_F(osc);
    const auto scan = delta_scan(family, ladder, Delta, n_pairs, seed, config, fractions);
    Outcome out;
    out.result["scan"] = scan_json(scan, nullptr);
    out.result["delta"] = optional_json(scan.delta);
    out.certificates["ine_ok"] = scan.delta.has_value();
    const auto report = df::proposition_one_check(osc, v1, v2, eps, Delta, grid, scan.delta, config);
    out.values = {{"theta", report.theta}, {"t0", report.t0},       {"R", report.R},
                  {"Delta", report.Delta}, {"eps", report.eps},     {"delta", report.delta},
                  {"v1", pair_json(v1)},   {"v2", pair_json(v2)},   {"lo", report.lo},
                  {"hi", report.hi},       {"min_abs_F", report.min_abs_F},
                  {"slices_ok", report.slices_ok}, {"nv_ok", report.nv_ok}};
    out.certificates["slices_ok"] = report.slices_ok;
    out.certificates["nv_ok"] = report.nv_ok;
    out.result.update(out.values);
    Json slices = Json::array();
    for (const auto& s : report.slices) {
      slices.push_back({{"s", s.s}, {"sign_changes", s.sign_changes}, {"zero", s.zero}, {"inside", s.inside}});
    }
    out.result["slices"] = slices;
    Json nodes = {{"t", Json::array()}, {"s", Json::array()}, {"v1", Json::array()},
                  {"v2", Json::array()}, {"F", Json::array()}};
    out.table.header = {"t", "s", "v1", "v2", "F"};
    for (const auto& node : report.nodes) {
      nodes["t"].push_back(node.t);
      nodes["s"].push_back(node.s);
      nodes["v1"].push_back(node.v(0));
      nodes["v2"].push_back(node.v(1));
      nodes["F"].push_back(node.F);
      out.table.rows.push_back({node.t, node.s, node.v(0), node.v(1), node.F});
    }
    out.result["nodes"] = nodes;
    return out;
  };
}

Job make_job(const RunSpec& spec) {
  switch (spec.command) {
    case Command::Solve: return solve_job(spec);
    case Command::Theta: return theta_job(spec);
    case Command::Lipschitz: return lipschitz_job(spec);
    case Command::Assumptions: return assumptions_job(spec);
    case Command::Oscillator: return oscillator_job(spec);
    case Command::Proposition: return proposition_job(spec);
  }
  throw SpecError("command", "unsupported");
}

// ---------------------------------------------------------------- execution

PointStatus classify(ErrorCode code) {
  switch (code) {
    case ErrorCode::NoRootInBall:
    case ErrorCode::OutsideBall:
    case ErrorCode::LeftBall:
    case ErrorCode::DeltaBallUnknown:
      return PointStatus::CertificateFailed;
    case ErrorCode::InvalidArgument:
      return PointStatus::Invalid;
    default:
      return PointStatus::NumericalError;
  }
}

std::string describe(const Json& assignments) {
  if (assignments.empty()) return "";
  std::string out = " [";
  bool first = true;
  for (const auto& [path, value] : assignments.items()) {
    if (!first) out += ", ";
    out += path + "=" + value.dump();
    first = false;
  }
  return out + "]";
}

std::string point_file(std::size_t index, Format format) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "point_%04zu.%s", index, format == Format::Csv ? "csv" : "json");
  return buffer;
}

PointRecord execute(const SweepPoint& point, const Job& job, Format format,
                    const std::filesystem::path& out_dir) {
  PointRecord record;
  record.index = point.index;
  record.assignments = point.assignments;
  spdlog::debug("point {}{}: start", point.index, describe(point.assignments));
  Outcome outcome;
  try {
    outcome = job();
  } catch (const Error& e) {
    record.status = classify(e.code());
    record.error_code = std::string(to_string(e.code()));
    record.message = e.what();
    spdlog::info("point {}: {}", point.index, record.message);
    return record;
  }
  record.values = outcome.values;
  record.certificates = outcome.certificates;
  for (const auto& [name, ok] : outcome.certificates.items()) {
    if (!ok.get<bool>()) {
      record.status = PointStatus::CertificateFailed;
      record.message += (record.message.empty() ? "" : ", ") + name + "=false";
    }
  }
  record.file = point_file(point.index, format);
  std::string content;
  if (format == Format::Csv) {
    content = render_csv(outcome.table);
  } else {
    Json doc = {{"index", point.index},
                {"assignments", point.assignments},
                {"command", to_string(point.spec.command)},
                {"certificates", outcome.certificates},
                {"result", outcome.result}};
    content = doc.dump(2) + "\n";
  }
  write_atomically(out_dir / record.file, content);
  spdlog::info("point {}: {}", point.index, to_string(record.status));
  return record;
}

int combined_status(const std::vector<PointRecord>& records) {
  const auto any = [&](PointStatus s) {
    return std::any_of(records.begin(), records.end(), [&](const PointRecord& r) { return r.status == s; });
  };
  if (any(PointStatus::Invalid)) return kExitInvalidSpec;
  if (any(PointStatus::NumericalError)) return kExitNumericalError;
  if (any(PointStatus::CertificateFailed)) return kExitCertificateFailed;
  return kExitOk;
}

std::string summary_csv(const RunSummary& summary) {
  Table table;
  std::vector<std::string> value_columns;
  for (const auto& record : summary.points) {
    std::vector<std::string> header;
    std::vector<Cell> cells;
    flatten(record.values, header, cells);
    for (const auto& h : header) {
      if (std::find(value_columns.begin(), value_columns.end(), h) == value_columns.end()) {
        value_columns.push_back(h);
      }
    }
  }
  std::vector<std::string> assignment_columns;
  if (!summary.points.empty()) {
    for (const auto& [path, value] : summary.points.front().assignments.items()) {
      assignment_columns.push_back(path);
    }
  }
  table.header = {"index", "status", "file"};
  table.header.insert(table.header.end(), assignment_columns.begin(), assignment_columns.end());
  table.header.insert(table.header.end(), value_columns.begin(), value_columns.end());
  for (const auto& record : summary.points) {
    std::vector<Cell> row{static_cast<long long>(record.index), std::string(to_string(record.status)),
                          record.file};
    for (const auto& path : assignment_columns) {
      const Json& value = record.assignments[path];
      row.push_back(value.is_number() ? Cell(value.get<double>()) : Cell(value.dump()));
    }
    std::vector<std::string> header;
    std::vector<Cell> cells;
    flatten(record.values, header, cells);
    for (const auto& column : value_columns) {
      const auto it = std::find(header.begin(), header.end(), column);
      row.push_back(it == header.end() ? Cell() : cells[static_cast<std::size_t>(it - header.begin())]);
    }
    table.rows.push_back(std::move(row));
  }
  return render_csv(table);
}

}  // namespace

std::string_view to_string(PointStatus status) {
  switch (status) {
    case PointStatus::Ok: return "ok";
    case PointStatus::CertificateFailed: return "certificate_failed";
    case PointStatus::Invalid: return "invalid";
    case PointStatus::NumericalError: return "numerical_error";
  }
  return "?";
}

PointStatus parse_point_status(std::string_view text) {
  for (auto s : {PointStatus::Ok, PointStatus::CertificateFailed, PointStatus::Invalid,
                 PointStatus::NumericalError}) {
    if (to_string(s) == text) return s;
  }
  throw SpecError("status", "unknown point status '" + std::string(text) + "'");
}

bool PointRecord::operator==(const PointRecord& other) const {
  return index == other.index && assignments == other.assignments && file == other.file &&
         status == other.status && certificates == other.certificates && values == other.values &&
         error_code == other.error_code && message == other.message;
}

bool RunSummary::operator==(const RunSummary& other) const {
  return command == other.command && seed == other.seed && format == other.format &&
         exit_status == other.exit_status && points == other.points;
}

void to_json(Json& out, const PointRecord& r) {
  out = {{"index", r.index},
         {"assignments", r.assignments},
         {"file", r.file},
         {"status", to_string(r.status)},
         {"certificates", r.certificates},
         {"values", r.values},
         {"error_code", r.error_code},
         {"message", r.message}};
}

void from_json(const Json& in, PointRecord& r) {
  r.index = in.at("index").get<std::size_t>();
  r.assignments = in.at("assignments");
  r.file = in.at("file").get<std::string>();
  r.status = parse_point_status(in.at("status").get<std::string>());
  r.certificates = in.at("certificates");
  r.values = in.at("values");
  r.error_code = in.at("error_code").get<std::string>();
  r.message = in.at("message").get<std::string>();
}

void to_json(Json& out, const RunSummary& s) {
  out = {{"schema", 1},         {"command", s.command},         {"seed", s.seed},
         {"format", s.format},  {"exit_status", s.exit_status}, {"points", s.points}};
}

void from_json(const Json& in, RunSummary& s) {
  s.command = in.at("command").get<std::string>();
  s.seed = in.at("seed").get<std::uint64_t>();
  s.format = in.at("format").get<std::string>();
  s.exit_status = in.at("exit_status").get<int>();
  s.points = in.at("points").get<std::vector<PointRecord>>();
}

RunSpec apply_options(RunSpec spec, const RunOptions& options) {
  if (options.out_dir) spec.output_path = options.out_dir->string();
  if (options.format) spec.format = *options.format;
  if (options.workers) {
    if (*options.workers < 1) throw SpecError("workers", "expected a positive integer");
    spec.workers = *options.workers;
  }
  if (options.seed) spec.seed = *options.seed;
  return spec;
}

RunResult run(const RunSpec& spec) {
  configure_logging();
  const auto points = expand_sweep(spec);
  std::vector<Job> jobs;
  jobs.reserve(points.size());
  for (const auto& point : points) {
    try {
      jobs.push_back(make_job(point.spec));
    } catch (const SpecError& e) {
      if (points.size() == 1) throw;
      throw SpecError(e.field(), std::string(e.what()) + " (sweep point " + std::to_string(point.index) +
                                     describe(point.assignments) + ")");
    }
  }

  RunResult result;
  result.out_dir = spec.output_path;
  std::filesystem::create_directories(result.out_dir);

  std::vector<PointRecord> records(points.size());
  std::atomic<std::size_t> next{0};
  std::mutex failure_mutex;
  std::exception_ptr failure;
  const auto worker = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      try {
        records[i] = execute(points[i], jobs[i], spec.format, result.out_dir);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(spec.workers), points.size());
    std::vector<std::jthread> pool;
    for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);

  result.summary.command = std::string(to_string(spec.command));
  result.summary.seed = spec.seed;
  result.summary.format = std::string(to_string(spec.format));
  result.summary.exit_status = combined_status(records);
  result.summary.points = std::move(records);
  result.exit_status = result.summary.exit_status;

  for (const auto& record : result.summary.points) {
    if (record.status == PointStatus::Ok) continue;
    result.diagnostics.push_back("point " + std::to_string(record.index) + describe(record.assignments) +
                                 ": " + std::string(to_string(record.status)) + ": " + record.message);
  }

  if (spec.format == Format::Csv) write_atomically(result.out_dir / "summary.csv", summary_csv(result.summary));
  write_atomically(result.out_dir / "summary.json", Json(result.summary).dump(2) + "\n");
  return result;
}

void configure_logging() {
  static std::once_flag once;
  std::call_once(once, [] {
    auto logger = spdlog::stderr_color_mt("lipimpl");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
  });
  const char* env = std::getenv("LIPIMPL_LOG");
  const std::string level = env ? env : "";
  if (level.empty()) spdlog::set_level(spdlog::level::warn);
  else if (level == "off") spdlog::set_level(spdlog::level::off);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else {
    spdlog::set_level(spdlog::level::warn);
    spdlog::warn("ignoring LIPIMPL_LOG='{}'; expected off, info or debug", level);
  }
}

int run_main(const std::filesystem::path& spec_path, const RunOptions& options, std::ostream& err) {
  try {
    const RunSpec spec = apply_options(load_run_spec(spec_path), options);
    const RunResult result = run(spec);
    for (const auto& line : result.diagnostics) err << line << '\n';
    return result.exit_status;
  } catch (const SpecError& e) {
    err << spec_path.string() << ": ";
    if (e.line() > 0) err << "line " << e.line() << ", column " << e.column() << ": ";
    if (!e.field().empty()) err << "field '" << e.field() << "': ";
    err << e.what() << '\n';
    return kExitInvalidSpec;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumericalError;
  }
}

}  // namespace lipimpl::cli
