#include "epi/poly.h"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

namespace epi {

Poly poly_mul(const Poly& a, const Poly& b) {
  if (a.empty() || b.empty()) return {};
  Poly out(a.size() + b.size() - 1, 0.0);
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

Poly poly_add(const Poly& a, const Poly& b) {
  Poly out(std::max(a.size(), b.size()), 0.0);
  for (size_t i = 0; i < a.size(); ++i) out[i] += a[i];
  for (size_t i = 0; i < b.size(); ++i) out[i] += b[i];
  return out;
}

Poly poly_scale(const Poly& a, double s) {
  Poly out(a);
  for (double& c : out) c *= s;
  return out;
}

double poly_eval(const Poly& p, double x) {
  double v = 0.0;
  for (size_t i = p.size(); i-- > 0;) v = v * x + p[i];
  return v;
}

namespace {

double poly_deriv_eval(const Poly& p, double x) {
  double v = 0.0;
  for (size_t i = p.size(); i-- > 1;) v = v * x + static_cast<double>(i) * p[i];
  return v;
}

}  // namespace

std::vector<double> real_roots(Poly p, double imag_tol) {
  double scale = 0.0;
  for (double c : p) scale = std::max(scale, std::abs(c));
  if (scale == 0.0) return {};
  while (!p.empty() && std::abs(p.back()) <= 1e-14 * scale) p.pop_back();
  // Strip zero roots.
  std::vector<double> roots;
  size_t lead_zero = 0;
  while (lead_zero < p.size() && p[lead_zero] == 0.0) ++lead_zero;
  if (lead_zero > 0) {
    roots.push_back(0.0);
    p.erase(p.begin(), p.begin() + static_cast<long>(lead_zero));
  }
  const int degree = static_cast<int>(p.size()) - 1;
  if (degree < 1) return roots;
  if (degree == 1) {
    roots.push_back(-p[0] / p[1]);
    return roots;
  }

  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (int i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
  for (int i = 0; i < degree; ++i) companion(i, degree - 1) = -p[i] / p[degree];
  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  const auto& ev = solver.eigenvalues();
  for (int i = 0; i < degree; ++i) {
    const double re = ev(i).real();
    const double im = ev(i).imag();
    if (std::abs(im) > imag_tol * std::max(1.0, std::abs(re))) continue;
    double x = re;
    for (int it = 0; it < 3; ++it) {
      const double d = poly_deriv_eval(p, x);
      if (d == 0.0) break;
      const double step = poly_eval(p, x) / d;
      const double next = x - step;
      if (!std::isfinite(next) || std::abs(poly_eval(p, next)) > std::abs(poly_eval(p, x))) break;
      x = next;
    }
    roots.push_back(x);
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

}  // namespace epi
