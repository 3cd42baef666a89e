#pragma once

#include <Eigen/Dense>

#include <functional>
#include <random>

namespace lipimpl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Induced 2-norm (largest singular value). Zero for empty matrices.
double operator_norm(const Matrix& a);

/// sigma_max / sigma_min; +inf when a singular value vanishes.
double condition_number(const Matrix& a);

/// Central-difference Jacobian of `f` at `at`. The step for every column is
/// `rel_step * max(1, ||at||)`.
Matrix central_difference_jacobian(const std::function<Vector(const Vector&)>& f,
                                   const Vector& at, double rel_step);

/// A point distributed uniformly in the closed ball of `radius` around
/// `center` (Gaussian direction, radius drawn as U^(1/d)).
Vector uniform_in_ball(std::mt19937_64& rng, const Vector& center, double radius);

/// Concatenate two vectors.
Vector stack(const Vector& a, const Vector& b);

}  // namespace lipimpl
