#pragma once

#include <vector>

namespace epi {

// Coefficients in ascending degree order: c[0] + c[1] x + ...
using Poly = std::vector<double>;

Poly poly_mul(const Poly& a, const Poly& b);
Poly poly_add(const Poly& a, const Poly& b);
Poly poly_scale(const Poly& a, double s);
double poly_eval(const Poly& p, double x);

// Real roots (each Newton-polished). Leading coefficients that are negligible
// relative to the largest one are dropped first.
std::vector<double> real_roots(Poly p, double imag_tol = 1e-8);

}  // namespace epi
