#include "lipimpl/linalg.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

namespace lipimpl {

double operator_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues()(0);
}

double condition_number(const Matrix& a) {
  if (a.size() == 0) return 1.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

Matrix central_difference_jacobian(const std::function<Vector(const Vector&)>& f,
                                   const Vector& at, double rel_step) {
  const double h = rel_step * std::max(1.0, at.norm());
  Vector probe = at;
  Matrix jac;
  for (Eigen::Index j = 0; j < at.size(); ++j) {
    probe(j) = at(j) + h;
    const Vector fp = f(probe);
    probe(j) = at(j) - h;
    const Vector fm = f(probe);
    probe(j) = at(j);
    if (j == 0) jac.resize(fp.size(), at.size());
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  if (at.size() == 0) jac.resize(f(at).size(), 0);
  return jac;
}

Vector uniform_in_ball(std::mt19937_64& rng, const Vector& center, double radius) {
  const auto dim = center.size();
  if (dim == 0) return center;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector dir(dim);
  double n = 0.0;
  while (n == 0.0) {
    for (Eigen::Index d = 0; d < dim; ++d) dir(d) = normal(rng);
    n = dir.norm();
  }
  const double rho = radius * std::pow(unit(rng), 1.0 / static_cast<double>(dim));
  return center + dir * (rho / n);
}

Vector stack(const Vector& a, const Vector& b) {
  Vector out(a.size() + b.size());
  out.head(a.size()) = a;
  out.tail(b.size()) = b;
  return out;
}

}  // namespace lipimpl
