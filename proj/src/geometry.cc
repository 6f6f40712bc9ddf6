#include "epi/geometry.h"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <array>
#include <cmath>
#include <limits>

#include "epi/error.h"

namespace epi {

namespace {

constexpr double kRadToDeg = 180.0 / M_PI;

}  // namespace

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

Mat3 CameraIntrinsics::inverse() const {
  validate();
  Mat3 k;
  k << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
  return k;
}

void CameraIntrinsics::validate() const {
  const bool ok = std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) &&
                  std::isfinite(cy) && fx > 0.0 && fy > 0.0;
  require(ok, ErrorKind::invalid_argument, "intrinsics must be finite with fx, fy > 0");
}

double PoseError::max_deg() const {
  if (!trans_deg) return std::numeric_limits<double>::infinity();
  return std::max(rot_deg, *trans_deg);
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

Mat3 canonicalize(const Mat3& m) {
  const double n = m.norm();
  require(std::isfinite(n) && n > 0.0, ErrorKind::degenerate, "cannot canonicalize a zero matrix");
  Mat3 out = m / n;
  int best = 0;
  double best_abs = -1.0;
  for (int i = 0; i < 9; ++i) {
    const double a = std::abs(out(i / 3, i % 3));
    if (a > best_abs) {
      best_abs = a;
      best = i;
    }
  }
  if (out(best / 3, best % 3) < 0.0) out = -out;
  return out;
}

Mat3 project_rank2(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s = svd.singularValues();
  s(2) = 0.0;
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

Mat3 project_essential(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  const double mean = 0.5 * (s(0) + s(1));
  const Vec3 d(mean, mean, 0.0);
  return svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
}

FundamentalMatrix FundamentalMatrix::from_matrix(const Mat3& m) {
  require(m.allFinite(), ErrorKind::non_finite, "fundamental matrix has non-finite entries");
  // Normalize first so the SVD sees a well-scaled input.
  return FundamentalMatrix(canonicalize(project_rank2(canonicalize(m))));
}

EssentialMatrix EssentialMatrix::from_matrix(const Mat3& m) {
  require(m.allFinite(), ErrorKind::non_finite, "essential matrix has non-finite entries");
  return EssentialMatrix(canonicalize(project_essential(canonicalize(m))));
}

FundamentalMatrix compose_fundamental(const CameraIntrinsics& ka, const CameraIntrinsics& kb,
                                      const RelativePose& pose) {
  require(!pose.zero_baseline(), ErrorKind::invalid_argument,
          "zero-baseline pose has no fundamental matrix");
  const Mat3 e = skew(pose.translation) * pose.rotation;
  return FundamentalMatrix::from_matrix(kb.inverse().transpose() * e * ka.inverse());
}

EssentialMatrix compose_essential(const RelativePose& pose) {
  require(!pose.zero_baseline(), ErrorKind::invalid_argument,
          "zero-baseline pose has no essential matrix");
  return EssentialMatrix::from_matrix(skew(pose.translation) * pose.rotation);
}

EssentialMatrix to_essential(const FundamentalMatrix& f, const CameraIntrinsics& ka,
                             const CameraIntrinsics& kb) {
  ka.validate();
  kb.validate();
  return EssentialMatrix::from_matrix(kb.matrix().transpose() * f.matrix() * ka.matrix());
}

FundamentalMatrix to_fundamental(const EssentialMatrix& e, const CameraIntrinsics& ka,
                                 const CameraIntrinsics& kb) {
  return FundamentalMatrix::from_matrix(kb.inverse().transpose() * e.matrix() * ka.inverse());
}

namespace {

// Depths (in A, in B) of the least-squares intersection of the two rays.
std::pair<double, double> triangulate_depths(const RelativePose& pose, const Vec3& xa,
                                             const Vec3& xb) {
  // lambda * R xa + t = mu * xb
  const Vec3 a1 = pose.rotation * xa;
  const Vec3& a2 = xb;
  const double m11 = a1.dot(a1), m12 = -a1.dot(a2), m22 = a2.dot(a2);
  const double r1 = -a1.dot(pose.translation), r2 = a2.dot(pose.translation);
  const double det = m11 * m22 - m12 * m12;
  if (!(std::abs(det) > 1e-14 * m11 * m22)) return {-1.0, -1.0};
  const double lambda = (m22 * r1 - m12 * r2) / det;
  const Vec3 xb3 = pose.rotation * (lambda * xa) + pose.translation;
  return {lambda * xa.z(), xb3.z()};
}

}  // namespace

int count_in_front(const RelativePose& pose, std::span<const Correspondence> corrs,
                   const CameraIntrinsics& ka, const CameraIntrinsics& kb) {
  const Mat3 ka_inv = ka.inverse();
  const Mat3 kb_inv = kb.inverse();
  int count = 0;
  for (const auto& c : corrs) {
    const Vec3 xa = ka_inv * homogeneous(c.pa);
    const Vec3 xb = kb_inv * homogeneous(c.pb);
    const auto [za, zb] = triangulate_depths(pose, xa, xb);
    if (za > 0.0 && zb > 0.0) ++count;
  }
  return count;
}

RelativePose decompose_essential(const EssentialMatrix& e, std::span<const Correspondence> corrs,
                                 const CameraIntrinsics& ka, const CameraIntrinsics& kb) {
  require(!corrs.empty(), ErrorKind::empty_input,
          "essential decomposition needs at least one correspondence");
  Eigen::JacobiSVD<Mat3> svd(e.matrix(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Mat3 w;
  w << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  const Mat3 r1 = u * w * v.transpose();
  const Mat3 r2 = u * w.transpose() * v.transpose();
  const Vec3 t = u.col(2).normalized();

  const std::array<RelativePose, 4> candidates = {
      RelativePose{r1, t}, RelativePose{r1, -t}, RelativePose{r2, t}, RelativePose{r2, -t}};
  int best = -1;
  int best_count = 0;
  for (int i = 0; i < 4; ++i) {
    const int n = count_in_front(candidates[i], corrs, ka, kb);
    if (n > best_count) {
      best_count = n;
      best = i;
    }
  }
  require(best >= 0, ErrorKind::undecidable,
          "no decomposition candidate places any point in front of both cameras");
  return candidates[best];
}

double rotation_angle_deg(const Mat3& ra, const Mat3& rb) {
  // Entry-wise sums keep rotation_angle_deg(a, b) == rotation_angle_deg(b, a) bit-exactly.
  const Mat3 rel = ra.transpose() * rb;
  double trace = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) trace += ra(j, i) * rb(j, i);
  const Vec3 axis(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  const double c = std::clamp(0.5 * (trace - 1.0), -1.0, 1.0);
  const double s = std::min(0.5 * axis.norm(), 1.0);
  return std::atan2(s, c) * kRadToDeg;
}

double direction_angle_deg(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b)) * kRadToDeg;
}

PoseError pose_error(const RelativePose& est, const RelativePose& gt, const PoseErrorOptions& opts) {
  PoseError err;
  err.rot_deg = rotation_angle_deg(est.rotation, gt.rotation);
  if (!est.zero_baseline() && !gt.zero_baseline()) {
    double angle = direction_angle_deg(est.translation, gt.translation);
    if (opts.sign_agnostic_translation) angle = std::min(angle, 180.0 - angle);
    err.trans_deg = angle;
  }
  return err;
}

std::optional<Vec3> epipolar_line(const Mat3& f, const Vec2& pa) {
  const Vec3 l = f * homogeneous(pa);
  const double n = std::hypot(l.x(), l.y());
  const double scale = f.norm() * homogeneous(pa).norm();
  if (!(n > 1e-14 * scale)) return std::nullopt;
  return l / n;
}

std::optional<Vec3> epipolar_line(const FundamentalMatrix& f, const Vec2& pa) {
  return epipolar_line(f.matrix(), pa);
}

FundamentalMatrix rescale_fundamental(const FundamentalMatrix& f, double sa, double sb) {
  require(std::isfinite(sa) && std::isfinite(sb) && sa > 0.0 && sb > 0.0,
          ErrorKind::invalid_argument, "scale factors must be positive");
  const Vec3 da(1.0 / sa, 1.0 / sa, 1.0);
  const Vec3 db(1.0 / sb, 1.0 / sb, 1.0);
  return FundamentalMatrix::from_matrix(db.asDiagonal() * f.matrix() * da.asDiagonal());
}

}  // namespace epi
