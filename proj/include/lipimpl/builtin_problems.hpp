#pragma once

#include "lipimpl/implicit.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace lipimpl {

/// A named test problem with the configuration it is normally solved with.
struct BuiltinProblem {
  std::string name;
  ImplicitProblem problem;
  SolverConfig config;
};

/// Names: "affine" (y - x), "linear2" (2y - x), "cubic" (y^3 + y - x),
/// "trig" (v1 cos t + v2 sin t solved for t, x = v, base (1,0), pi/2) and
/// "trig_root" (cos t + sin t near 3pi/4, no parameter).
/// Throws InvalidArgument for unknown names.
BuiltinProblem builtin_problem(std::string_view name);

std::vector<std::string> builtin_problem_names();

}  // namespace lipimpl
