#include "epi/solvers.h"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "epi/error.h"
#include "epi/poly.h"

namespace epi {

std::string_view to_string(Solver s) {
  switch (s) {
    case Solver::f7: return "f7";
    case Solver::f8: return "f8";
    case Solver::e8: return "e8";
  }
  return "f7";
}

Solver solver_from_string(std::string_view s) {
  if (s == "f7") return Solver::f7;
  if (s == "f8") return Solver::f8;
  if (s == "e8") return Solver::e8;
  fail(ErrorKind::parse, "unknown solver '" + std::string(s) + "'");
}

int sample_size(Solver s) { return s == Solver::f7 ? 7 : 8; }

Mat3 hartley_normalization(std::span<const Vec2> points) {
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  double mean_dist = 0.0;
  for (const auto& p : points) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(points.size());
  const double s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
  Mat3 t;
  t << s, 0.0, -s * centroid.x(), 0.0, s, -s * centroid.y(), 0.0, 0.0, 1.0;
  return t;
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, 9>;

struct Normalized {
  Mat3 ta, tb;
  RowMatrix design;
};

// Rows encode p_b^T F p_a = 0 with F in row-major order.
Normalized build_epipolar_system(std::span<const Vec2> a, std::span<const Vec2> b) {
  Normalized out;
  out.ta = hartley_normalization(a);
  out.tb = hartley_normalization(b);
  out.design.resize(static_cast<long>(a.size()), 9);
  for (size_t i = 0; i < a.size(); ++i) {
    const Vec3 xa = out.ta * homogeneous(a[i]);
    const Vec3 xb = out.tb * homogeneous(b[i]);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out.design(static_cast<long>(i), 3 * r + c) = xb(r) * xa(c);
  }
  return out;
}

Mat3 reshape(const Eigen::Matrix<double, 9, 1>& v) {
  Mat3 m;
  m << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  return m;
}

Eigen::Matrix<double, 9, 9> null_basis(const RowMatrix& a, int required_rank) {
  // Pad to at least 9 rows so the full V is available from a square problem.
  Eigen::Matrix<double, Eigen::Dynamic, 9> padded = a;
  if (a.rows() < 9) {
    padded.conservativeResize(9, 9);
    padded.bottomRows(9 - a.rows()).setZero();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(padded, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (!(s(required_rank - 1) > 1e-10 * s(0)))
    fail(ErrorKind::degenerate, "degenerate sample: design matrix is rank deficient");
  return svd.matrixV();
}

void split(std::span<const Correspondence> corrs, std::vector<Vec2>& a, std::vector<Vec2>& b) {
  a.resize(corrs.size());
  b.resize(corrs.size());
  for (size_t i = 0; i < corrs.size(); ++i) {
    a[i] = corrs[i].pa;
    b[i] = corrs[i].pb;
  }
}

std::vector<Mat3> solve_seven(std::span<const Vec2> a, std::span<const Vec2> b) {
  const Normalized sys = build_epipolar_system(a, b);
  const auto v = null_basis(sys.design, 7);
  const Mat3 f1 = reshape(v.col(7));
  const Mat3 f2 = reshape(v.col(8));

  // det(F1 + x F2) is cubic in x; recover it exactly from four samples.
  auto det_at = [&](double x) { return (f1 + x * f2).determinant(); };
  const double d0 = det_at(0.0), d1 = det_at(1.0), dm1 = det_at(-1.0), d2 = det_at(2.0);
  const double c0 = d0;
  const double c2 = 0.5 * (d1 + dm1) - c0;
  const double odd = 0.5 * (d1 - dm1);
  const double c3 = (0.5 * (d2 - c0 - 4.0 * c2) - odd) / 3.0;
  const double c1 = odd - c3;

  std::vector<Mat3> out;
  for (double x : real_roots({c0, c1, c2, c3})) {
    const Mat3 fn = f1 + x * f2;
    out.push_back(FundamentalMatrix::from_matrix(sys.tb.transpose() * fn * sys.ta).matrix());
  }
  // A vanishing cubic term means F2 alone is singular and also a solution.
  const double scale = std::max({std::abs(c0), std::abs(c1), std::abs(c2), std::abs(c3)});
  if (std::abs(c3) <= 1e-14 * scale)
    out.push_back(FundamentalMatrix::from_matrix(sys.tb.transpose() * f2 * sys.ta).matrix());
  if (out.empty()) fail(ErrorKind::degenerate, "degenerate sample: no real seven-point solution");
  return out;
}

Mat3 solve_linear(std::span<const Vec2> a, std::span<const Vec2> b) {
  const Normalized sys = build_epipolar_system(a, b);
  const auto v = null_basis(sys.design, 8);
  return sys.tb.transpose() * reshape(v.col(8)) * sys.ta;
}

}  // namespace

std::vector<Mat3> solve_minimal(std::span<const Correspondence> sample, Solver solver,
                                const CameraIntrinsics& ka, const CameraIntrinsics& kb) {
  const auto n = static_cast<int>(sample.size());
  if (solver == Solver::f7) {
    require(n == 7, ErrorKind::insufficient_data, "F7 needs exactly 7 correspondences");
  } else {
    require(n >= 8, ErrorKind::insufficient_data, "F8/E8 need at least 8 correspondences");
  }
  std::vector<Vec2> a, b;
  split(sample, a, b);
  switch (solver) {
    case Solver::f7: return solve_seven(a, b);
    case Solver::f8: return {FundamentalMatrix::from_matrix(solve_linear(a, b)).matrix()};
    case Solver::e8: {
      const Mat3 ka_inv = ka.inverse();
      const Mat3 kb_inv = kb.inverse();
      for (size_t i = 0; i < a.size(); ++i) {
        a[i] = (ka_inv * homogeneous(a[i])).hnormalized();
        b[i] = (kb_inv * homogeneous(b[i])).hnormalized();
      }
      return {EssentialMatrix::from_matrix(solve_linear(a, b)).matrix()};
    }
  }
  return {};
}

Mat3 fit_homography(std::span<const Correspondence> corrs) {
  require(corrs.size() >= 4, ErrorKind::insufficient_data, "homography needs 4 correspondences");
  std::vector<Vec2> a, b;
  split(corrs, a, b);
  const Mat3 ta = hartley_normalization(a);
  const Mat3 tb = hartley_normalization(b);
  Eigen::Matrix<double, Eigen::Dynamic, 9> design(2 * static_cast<long>(corrs.size()), 9);
  for (size_t i = 0; i < corrs.size(); ++i) {
    const Vec3 x = ta * homogeneous(a[i]);
    const Vec3 y = tb * homogeneous(b[i]);
    const long r = 2 * static_cast<long>(i);
    design.row(r) << -x(0), -x(1), -x(2), 0, 0, 0, y(0) * x(0), y(0) * x(1), y(0) * x(2);
    design.row(r + 1) << 0, 0, 0, -x(0), -x(1), -x(2), y(1) * x(0), y(1) * x(1), y(1) * x(2);
  }
  const auto v = null_basis(design, 8);
  return tb.inverse() * reshape(v.col(8)) * ta;
}

double symmetric_transfer_error(const Mat3& h, const Mat3& h_inv, const Correspondence& c) {
  const Vec3 q = h * homogeneous(c.pa);
  const Vec3 r = h_inv * homogeneous(c.pb);
  if (std::abs(q.z()) < 1e-300 || std::abs(r.z()) < 1e-300)
    return std::numeric_limits<double>::infinity();
  return (q.hnormalized() - c.pb).norm() + (r.hnormalized() - c.pa).norm();
}

}  // namespace epi
