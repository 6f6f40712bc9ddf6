#include "epi/error_criteria.h"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "epi/error.h"
#include "epi/poly.h"

namespace epi {

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::sampson: return "sampson";
    case Criterion::sed: return "sed";
    case Criterion::epipolar: return "epipolar";
    case Criterion::reprojection: return "reprojection";
  }
  return "sampson";
}

Criterion criterion_from_string(std::string_view s) {
  if (s == "sampson") return Criterion::sampson;
  if (s == "sed") return Criterion::sed;
  if (s == "epipolar") return Criterion::epipolar;
  if (s == "reprojection") return Criterion::reprojection;
  fail(ErrorKind::parse, "unknown criterion '" + std::string(s) + "'");
}

std::string_view to_string(Aggregate a) {
  switch (a) {
    case Aggregate::mean: return "mean";
    case Aggregate::median: return "median";
    case Aggregate::truncated_mean: return "truncated_mean";
  }
  return "mean";
}

double sampson_error(const Mat3& f, const Vec2& pa, const Vec2& pb) {
  const Vec3 xa = homogeneous(pa);
  const Vec3 xb = homogeneous(pb);
  const Vec3 fa = f * xa;
  const Vec3 fb = f.transpose() * xb;
  const double num = xb.dot(fa);
  const double den = fa.x() * fa.x() + fa.y() * fa.y() + fb.x() * fb.x() + fb.y() * fb.y();
  if (!(den > 0.0)) return std::numeric_limits<double>::infinity();
  return num * num / den;
}

double optimal_correction_sq(const Mat3& f, const Vec2& pa, const Vec2& pb) {
  Mat3 ta_inv = Mat3::Identity();
  ta_inv(0, 2) = pa.x();
  ta_inv(1, 2) = pa.y();
  Mat3 tb_inv = Mat3::Identity();
  tb_inv(0, 2) = pb.x();
  tb_inv(1, 2) = pb.y();
  Mat3 f1 = tb_inv.transpose() * f * ta_inv;
  f1 /= f1.norm();

  Eigen::JacobiSVD<Mat3> svd(f1, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 ea = svd.matrixV().col(2);
  Vec3 eb = svd.matrixU().col(2);
  const double sa = std::hypot(ea.x(), ea.y());
  const double sb = std::hypot(eb.x(), eb.y());
  // A point sitting on its epipole lies on every epipolar line; the other
  // point can always be matched by the line through it.
  if (sa <= 1e-12 * ea.norm() || sb <= 1e-12 * eb.norm()) return 0.0;
  ea /= sa;
  eb /= sb;

  Mat3 ra;
  ra << ea.x(), ea.y(), 0.0, -ea.y(), ea.x(), 0.0, 0.0, 0.0, 1.0;
  Mat3 rb;
  rb << eb.x(), eb.y(), 0.0, -eb.y(), eb.x(), 0.0, 0.0, 0.0, 1.0;
  const Mat3 f2 = rb * f1 * ra.transpose();

  const double fa = ea.z();
  const double fb = eb.z();
  const double a = f2(1, 1), b = f2(1, 2), c = f2(2, 1), d = f2(2, 2);

  const Poly p1 = {b, a};
  const Poly p2 = {d, c};
  const Poly q = poly_add(poly_mul(p1, p1), poly_scale(poly_mul(p2, p2), fb * fb));
  const Poly term1 = poly_mul(Poly{0.0, 1.0}, poly_mul(q, q));
  const Poly s = {1.0, 0.0, fa * fa};
  const Poly term2 = poly_scale(poly_mul(poly_mul(s, s), poly_mul(p1, p2)), a * d - b * c);
  const Poly g = poly_add(term1, poly_scale(term2, -1.0));

  auto cost = [&](double t) {
    const double lb = (a * t + b) * (a * t + b) + fb * fb * (c * t + d) * (c * t + d);
    const double ct = (c * t + d) * (c * t + d);
    double v = t * t / (1.0 + fa * fa * t * t);
    v += lb > 0.0 ? ct / lb : 0.0;
    return v;
  };

  double best = cost(0.0);
  for (double t : real_roots(g)) best = std::min(best, cost(t));
  if (fa != 0.0) {
    const double den = a * a + fb * fb * c * c;
    const double at_inf = 1.0 / (fa * fa) + (den > 0.0 ? c * c / den : 0.0);
    best = std::min(best, at_inf);
  }
  return best;
}

double residual(const Mat3& f, const Correspondence& c, Criterion criterion) {
  switch (criterion) {
    case Criterion::sampson: {
      const double r = sampson_error(f, c.pa, c.pb);
      require(std::isfinite(r), ErrorKind::indeterminate, "sampson gradient vanishes");
      return r;
    }
    case Criterion::sed:
    case Criterion::epipolar: {
      const auto lb = epipolar_line(f, c.pa);
      require(lb.has_value(), ErrorKind::indeterminate, "degenerate epipolar line in image B");
      const double db = point_line_distance(*lb, c.pb);
      if (criterion == Criterion::epipolar) return db;
      const auto la = epipolar_line(Mat3(f.transpose()), c.pb);
      require(la.has_value(), ErrorKind::indeterminate, "degenerate epipolar line in image A");
      return db + point_line_distance(*la, c.pa);
    }
    case Criterion::reprojection:
      return std::sqrt(optimal_correction_sq(f, c.pa, c.pb));
  }
  return 0.0;
}

double residual(const FundamentalMatrix& f, const Correspondence& c, Criterion criterion) {
  return residual(f.matrix(), c, criterion);
}

OracleScore oracle_score(const Mat3& f, std::span<const Correspondence> dense, Criterion criterion,
                         const OracleOptions& opts) {
  require(!dense.empty(), ErrorKind::empty_input, "oracle scoring needs dense correspondences");
  require(opts.cap_px > 0.0, ErrorKind::invalid_argument, "cap must be positive");
  const double cap = criterion == Criterion::sampson ? opts.cap_px * opts.cap_px : opts.cap_px;

  OracleScore out;
  out.criterion = criterion;
  out.aggregate = opts.aggregate;
  std::vector<double> values;
  values.reserve(dense.size());
  for (const auto& c : dense) {
    try {
      double r = residual(f, c, criterion);
      if (opts.aggregate == Aggregate::truncated_mean) r = std::min(r, cap);
      values.push_back(r);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::indeterminate) throw;
      ++out.indeterminate;
    }
  }
  require(!values.empty(), ErrorKind::indeterminate, "every dense residual was indeterminate");

  if (opts.aggregate == Aggregate::median) {
    const size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<long>(mid), values.end());
    double m = values[mid];
    if (values.size() % 2 == 0) {
      const double lo = *std::max_element(values.begin(), values.begin() + static_cast<long>(mid));
      m = 0.5 * (m + lo);
    }
    out.value = m;
  } else {
    double sum = 0.0;
    for (double v : values) sum += v;
    out.value = sum / static_cast<double>(values.size());
  }
  return out;
}

OracleScore oracle_score(const FundamentalMatrix& f, std::span<const Correspondence> dense,
                         Criterion criterion, const OracleOptions& opts) {
  return oracle_score(f.matrix(), dense, criterion, opts);
}

}  // namespace epi
