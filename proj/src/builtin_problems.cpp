#include "lipimpl/builtin_problems.hpp"

#include "lipimpl/errors.hpp"

#include <cmath>
#include <numbers>

namespace lipimpl {
namespace {

Vector scalar(double value) { return Vector::Constant(1, value); }

BuiltinProblem affine() {
  ImplicitMap f = [](const Vector& x, const Vector& y) { return Vector(y - x); };
  return {"affine", ImplicitProblem(f, scalar(0.0), scalar(0.0), 1.0), SolverConfig{}};
}

BuiltinProblem linear2() {
  ImplicitMap f = [](const Vector& x, const Vector& y) { return Vector(2.0 * y - x); };
  return {"linear2", ImplicitProblem(f, scalar(0.0), scalar(0.0), 1.0), SolverConfig{}};
}

BuiltinProblem cubic() {
  ImplicitMap f = [](const Vector& x, const Vector& y) {
    return scalar(y(0) * y(0) * y(0) + y(0) - x(0));
  };
  PartialJacobians jac{
      [](const Vector&, const Vector&) { return Matrix::Constant(1, 1, -1.0); },
      [](const Vector&, const Vector& y) { return Matrix::Constant(1, 1, 3.0 * y(0) * y(0) + 1.0); },
  };
  // beta is wide enough that the ball condition holds for |x| <= 0.5.
  SolverConfig config;
  config.alpha = 0.5;
  config.beta = 1.5;
  return {"cubic", ImplicitProblem(f, scalar(0.0), scalar(0.0), 2.0, config.residual_tol, jac),
          config};
}

BuiltinProblem trig() {
  ImplicitMap f = [](const Vector& v, const Vector& t) {
    return scalar(v(0) * std::cos(t(0)) + v(1) * std::sin(t(0)));
  };
  PartialJacobians jac{
      [](const Vector&, const Vector& t) {
        Matrix j(1, 2);
        j << std::cos(t(0)), std::sin(t(0));
        return j;
      },
      [](const Vector& v, const Vector& t) {
        return Matrix::Constant(1, 1, -v(0) * std::sin(t(0)) + v(1) * std::cos(t(0)));
      },
  };
  Vector v0(2);
  v0 << 1.0, 0.0;
  SolverConfig config;
  config.alpha = 0.25;
  return {"trig", ImplicitProblem(f, v0, scalar(std::numbers::pi / 2), 1.0, config.residual_tol, jac),
          config};
}

BuiltinProblem trig_root() {
  ImplicitMap f = [](const Vector&, const Vector& t) {
    return scalar(std::cos(t(0)) + std::sin(t(0)));
  };
  return {"trig_root", ImplicitProblem(f, Vector(0), scalar(0.75 * std::numbers::pi), 1.0),
          SolverConfig{}};
}

}  // namespace

BuiltinProblem builtin_problem(std::string_view name) {
  if (name == "affine") return affine();
  if (name == "linear2") return linear2();
  if (name == "cubic") return cubic();
  if (name == "trig") return trig();
  if (name == "trig_root") return trig_root();
  throw Error(ErrorCode::InvalidArgument, "unknown built-in problem '" + std::string(name) + "'");
}

std::vector<std::string> builtin_problem_names() {
  return {"affine", "linear2", "cubic", "trig", "trig_root"};
}

}  // namespace lipimpl
