#include "lipimpl/builtin_problems.hpp"
#include "lipimpl/errors.hpp"
#include "lipimpl/implicit.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace lipimpl {
namespace {

Vector scalar(double v) { return Vector::Constant(1, v); }

template <typename Fn>
ErrorCode error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected lipimpl::Error";
  return ErrorCode::InvalidArgument;
}

// Roots of y^3 + y = x, bisected in 40-digit arithmetic.
constexpr std::array<std::pair<double, double>, 6> kCubicRoots{{
    {0.0, 0.0},
    {0.1, 0.099028852405457313792},
    {0.2, 0.19282993096291295358},
    {0.3, 0.27841799032180994891},
    {0.4, 0.35518945758823016504},
    {0.5, 0.42385379906978327138},
}};

TEST(FrozenJacobian, IdentityForAffineProblem) {
  const auto b = builtin_problem("affine");
  const auto jac = frozen_jacobian(b.problem, b.config);
  EXPECT_NEAR(jac.matrix()(0, 0), 1.0, 1e-10);
  EXPECT_NEAR(jac.inverse()(0, 0), 1.0, 1e-10);
}

TEST(FrozenJacobian, FiniteDifferencedTrigonometricSwitch) {
  // cos t with v frozen at (1, 0); F'_t(pi/2) = -sin(pi/2) = -1.
  ImplicitProblem p([](const Vector&, const Vector& t) { return scalar(std::cos(t(0))); },
                    Vector(0), scalar(std::numbers::pi / 2), 1.0);
  ASSERT_FALSE(p.has_analytic_jacobian_y());
  const auto jac = frozen_jacobian(p, SolverConfig{});
  EXPECT_NEAR(jac.matrix()(0, 0), -1.0, 1e-9);
}

TEST(FrozenJacobian, CubicAtOrigin) {
  const auto b = builtin_problem("cubic");
  EXPECT_DOUBLE_EQ(frozen_jacobian(b.problem, b.config).matrix()(0, 0), 1.0);
}

TEST(FrozenJacobian, InverseResidualForWellConditionedSystem) {
  Matrix a(3, 3);
  a << 4, 1, 0, 1, 3, 1, 0, 1, 2;
  ImplicitProblem p([a](const Vector& x, const Vector& y) { return Vector(a * y - x); },
                    Vector::Zero(3), Vector::Zero(3), 1.0);
  const auto jac = frozen_jacobian(p, SolverConfig{});
  const Matrix residual = jac.matrix() * jac.inverse() - Matrix::Identity(3, 3);
  EXPECT_LE(residual.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FrozenJacobian, RankDeficiencyIsReported) {
  ImplicitProblem p(
      [](const Vector&, const Vector& y) {
        Vector out(2);
        out << y(0) + y(1), 2.0 * (y(0) + y(1));
        return out;
      },
      Vector(0), Vector::Zero(2), 1.0);
  EXPECT_EQ(error_code_of([&] { (void)frozen_jacobian(p, SolverConfig{}); }),
            ErrorCode::SingularJacobian);
}

TEST(FrozenJacobian, IllConditioningIsReported) {
  ImplicitProblem p(
      [](const Vector&, const Vector& y) {
        Vector out(2);
        out << y(0), 1e-14 * y(1);
        return out;
      },
      Vector(0), Vector::Zero(2), 1.0);
  EXPECT_EQ(error_code_of([&] { (void)frozen_jacobian(p, SolverConfig{}); }),
            ErrorCode::SingularJacobian);
}

TEST(ImplicitProblem, RejectsInvalidConstruction) {
  auto f = [](const Vector& x, const Vector& y) { return Vector(y - x); };
  EXPECT_EQ(error_code_of([&] { ImplicitProblem(f, Vector(0), Vector(0), 1.0); }),
            ErrorCode::InvalidArgument);
  EXPECT_EQ(error_code_of([&] { ImplicitProblem(f, scalar(0.0), scalar(0.0), 0.0); }),
            ErrorCode::InvalidArgument);
  EXPECT_EQ(error_code_of([&] { ImplicitProblem(f, scalar(0.0), scalar(1e-3), 1.0); }),
            ErrorCode::InvalidArgument);
}

TEST(SolverConfig, Validation) {
  SolverConfig c;
  c.q_target = 1.0;
  EXPECT_EQ(error_code_of([&] { c.validate(); }), ErrorCode::InvalidArgument);
  c = SolverConfig{};
  c.beta = 2.0;
  EXPECT_EQ(error_code_of([&] { c.validate(1.0); }), ErrorCode::InvalidArgument);
  c = SolverConfig{};
  c.step_tol = 0.0;
  EXPECT_EQ(error_code_of([&] { c.validate(); }), ErrorCode::InvalidArgument);
}

TEST(SolveImplicit, AffineConvergesInOneStep) {
  const auto b = builtin_problem("affine");
  const auto sol = solve_implicit(b.problem, b.config, scalar(0.3));
  EXPECT_DOUBLE_EQ(sol.y(0), 0.3);
  EXPECT_EQ(sol.cert.iterations, 1);
  EXPECT_TRUE(sol.cert.ball_ok);
}

TEST(SolveImplicit, CubicMatchesBisection) {
  const auto b = builtin_problem("cubic");
  for (const auto& [x, root] : kCubicRoots) {
    for (double sign : {1.0, -1.0}) {
      const auto sol = solve_implicit(b.problem, b.config, scalar(sign * x));
      EXPECT_NEAR(sol.y(0), sign * root, 1e-10) << "x = " << sign * x;
      EXPECT_NEAR(sol.y(0), oracle::cubic_root(sign * x), 1e-10);
      EXPECT_LT(sol.cert.q_measured, 1.0);
      EXPECT_TRUE(sol.cert.ball_ok);
    }
  }
}

TEST(SolveImplicit, EmptyParameterSlot) {
  const auto b = builtin_problem("trig_root");
  const auto sol = solve_implicit(b.problem, b.config, Vector(0));
  EXPECT_NEAR(sol.y(0), 0.75 * std::numbers::pi, 1e-12);
}

TEST(SolveImplicit, OutsideAlphaBall) {
  const auto b = builtin_problem("cubic");
  EXPECT_EQ(error_code_of([&] { (void)solve_implicit(b.problem, b.config, scalar(0.6)); }),
            ErrorCode::OutsideBall);
}

TEST(SolveImplicit, LeavingBetaBall) {
  auto b = builtin_problem("cubic");
  b.config.beta = 0.05;
  EXPECT_EQ(error_code_of([&] { (void)solve_implicit(b.problem, b.config, scalar(0.5)); }),
            ErrorCode::LeftBall);
}

TEST(SolveImplicit, ExpandingMapIsRejected) {
  // A_x(y) = x - 3 y |y| has slope 6|y| > 1 away from the origin.
  ImplicitProblem p(
      [](const Vector& x, const Vector& y) { return scalar(y(0) - x(0) + 3.0 * y(0) * std::abs(y(0))); },
      scalar(0.0), scalar(0.0), 100.0);
  SolverConfig c;
  c.alpha = 1.0;
  c.beta = 100.0;
  EXPECT_EQ(error_code_of([&] { (void)solve_implicit(p, c, scalar(0.5)); }),
            ErrorCode::NoContraction);
}

TEST(SolveImplicit, IterationCap) {
  auto b = builtin_problem("cubic");
  b.config.max_iter = 2;
  EXPECT_EQ(error_code_of([&] { (void)solve_implicit(b.problem, b.config, scalar(0.5)); }),
            ErrorCode::MaxIterExceeded);
}

TEST(SolveImplicit, CertificateInvariantsOnRandomParameters) {
  const auto b = builtin_problem("cubic");
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  for (int i = 0; i < 200; ++i) {
    const Vector x = scalar(dist(rng));
    const auto sol = solve_implicit(b.problem, b.config, x);
    EXPECT_LE(std::abs(sol.y(0) * sol.y(0) * sol.y(0) + sol.y(0) - x(0)), b.config.residual_tol);
    EXPECT_EQ(sol.cert.residual <= b.config.residual_tol, true);
    const auto& steps = sol.cert.step_norms;
    for (std::size_t k = 2; k < steps.size(); ++k) {
      if (steps[k - 1] < 1e-12) break;
      EXPECT_LE(steps[k], (sol.cert.q_measured + 0.05) * steps[k - 1]);
    }
    if (sol.cert.ball_ok) EXPECT_LE(std::abs(sol.y(0)), b.config.beta);
  }
}

TEST(SolveImplicit, UniqueSignChangeInBetaBall) {
  const auto b = builtin_problem("cubic");
  for (double x : {-0.5, -0.2, 0.1, 0.4}) {
    int changes = 0;
    double prev = b.problem(scalar(x), scalar(-b.config.beta))(0);
    for (int i = 1; i <= 10000; ++i) {
      const double y = -b.config.beta + 2.0 * b.config.beta * i / 10000;
      const double cur = b.problem(scalar(x), scalar(y))(0);
      if ((prev > 0.0) != (cur > 0.0)) ++changes;
      prev = cur;
    }
    EXPECT_EQ(changes, 1);
  }
}

TEST(ImplicitDerivative, AffineIsOne) {
  const auto b = builtin_problem("affine");
  EXPECT_NEAR(implicit_derivative(b.problem, scalar(0.3), scalar(0.3), b.config)(0, 0), 1.0, 1e-9);
}

TEST(ImplicitDerivative, CubicAgainstClosedFormAndDifferences) {
  const auto b = builtin_problem("cubic");
  const double y = oracle::cubic_root(0.1);
  const double d = implicit_derivative(b.problem, scalar(0.1), scalar(y), b.config)(0, 0);
  EXPECT_NEAR(d, 0.97142066717034254689, 1e-12);
  const double h = 1e-5;
  const double fd = (solve_implicit(b.problem, b.config, scalar(0.1 + h)).y(0) -
                     solve_implicit(b.problem, b.config, scalar(0.1 - h)).y(0)) / (2 * h);
  EXPECT_NEAR(d, fd, 1e-6);
}

TEST(ImplicitDerivative, TrigonometricSwitchSensitivity) {
  const auto b = builtin_problem("trig");
  const Matrix d = implicit_derivative(b.problem, b.problem.x0(), b.problem.y0(), b.config);
  ASSERT_EQ(d.rows(), 1);
  ASSERT_EQ(d.cols(), 2);
  EXPECT_NEAR(d(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(d(0, 1), 1.0, 1e-12);
}

TEST(ImplicitDerivative, FiniteDifferencedJacobiansMatch) {
  // Same cubic without analytic Jacobians.
  ImplicitProblem p([](const Vector& x, const Vector& y) { return scalar(y(0) * y(0) * y(0) + y(0) - x(0)); },
                    scalar(0.0), scalar(0.0), 2.0);
  const double y = oracle::cubic_root(0.3);
  const double expected = 1.0 / (3 * y * y + 1);
  EXPECT_NEAR(implicit_derivative(p, scalar(0.3), scalar(y), SolverConfig{})(0, 0), expected, 1e-8);
}

TEST(ImplicitDerivative, RequiresASolution) {
  const auto b = builtin_problem("cubic");
  EXPECT_EQ(error_code_of([&] { (void)implicit_derivative(b.problem, scalar(0.1), scalar(0.5), b.config); }),
            ErrorCode::InvalidArgument);
}

TEST(ContractionScan, AffineMapsAreConstantInY) {
  for (const char* name : {"affine", "linear2"}) {
    const auto b = builtin_problem(name);
    const auto xs = ball_samples(b.problem.x0(), b.config.alpha, 11, 1);
    const auto ys = ball_samples(b.problem.y0(), b.config.beta, 21, 2);
    EXPECT_LE(contraction_scan(b.problem, b.config, xs, ys), 1e-14) << name;
  }
}

TEST(ContractionScan, CubicMatchesAnalyticBound) {
  auto b = builtin_problem("cubic");
  b.config.beta = 0.1;
  const auto xs = ball_samples(b.problem.x0(), b.config.alpha, 11, 1);
  const auto ys = ball_samples(b.problem.y0(), 0.1, 201, 2);
  const double q = contraction_scan(b.problem, b.config, xs, ys);
  EXPECT_NEAR(q, 3 * 0.1 * 0.1, 1e-3);
  EXPECT_LE(q, 0.03);
}

TEST(ContractionScan, Errors) {
  const auto b = builtin_problem("cubic");
  const std::vector<Vector> none;
  const std::vector<Vector> one{scalar(0.0)};
  EXPECT_EQ(error_code_of([&] { (void)contraction_scan(b.problem, b.config, none, one); }),
            ErrorCode::EmptySamples);
  const std::vector<Vector> far{scalar(5.0)};
  EXPECT_EQ(error_code_of([&] { (void)contraction_scan(b.problem, b.config, one, far); }),
            ErrorCode::OutsideBall);
}

TEST(AlphaSearch, CubicWithNarrowBall) {
  auto b = builtin_problem("cubic");
  b.config.beta = 0.1;
  const auto found = alpha_search(b.problem, b.config);
  EXPECT_DOUBLE_EQ(found.alpha, 0.0625);
  EXPECT_LE(found.q_hat, 0.031);
  EXPECT_LE(found.max_displacement, 0.1 * (1 - found.q_hat));
}

TEST(BallSamples, StayInsideTheBall) {
  Vector c(3);
  c << 1.0, -2.0, 0.5;
  const auto pts = ball_samples(c, 0.25, 50, 3);
  ASSERT_EQ(pts.size(), 50u);
  for (const auto& p : pts) EXPECT_LE((p - c).norm(), 0.25 + 1e-15);
  EXPECT_EQ(ball_samples(c, 0.25, 50, 3), pts);
}

}  // namespace
}  // namespace lipimpl
