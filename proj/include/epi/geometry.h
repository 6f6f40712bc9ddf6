#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>

namespace epi {

using Mat3 = Eigen::Matrix3d;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

// Baselines shorter than this carry no direction.
inline constexpr double kMinBaseline = 1e-12;

// Pinhole intrinsics, zero skew.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  static CameraIntrinsics identity() { return {}; }

  Mat3 matrix() const;
  Mat3 inverse() const;
  // Throws invalid_argument unless fx, fy are finite and positive.
  void validate() const;
};

// Maps points of camera A into camera B: X_B = rotation * X_A + translation.
struct RelativePose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  bool zero_baseline() const { return translation.norm() < kMinBaseline; }
};

struct Correspondence {
  Vec2 pa = Vec2::Zero();
  Vec2 pb = Vec2::Zero();
};

// Rank-2 pixel-space bilinear form p_b^T F p_a = 0 in canonical form:
// unit Frobenius norm, largest-magnitude entry positive.
class FundamentalMatrix {
 public:
  // Projects onto rank 2 and canonicalizes.
  static FundamentalMatrix from_matrix(const Mat3& m);

  const Mat3& matrix() const { return m_; }

  // Transposition preserves the canonical form, so no re-normalization
  // happens here; F^T^T is bit-identical to F.
  FundamentalMatrix transposed() const { return FundamentalMatrix(m_.transpose()); }

 private:
  explicit FundamentalMatrix(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

// Normalized-camera bilinear form with singular values (s, s, 0), unit norm.
class EssentialMatrix {
 public:
  // Projects onto the essential manifold and canonicalizes.
  static EssentialMatrix from_matrix(const Mat3& m);

  const Mat3& matrix() const { return m_; }

 private:
  explicit EssentialMatrix(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

struct PoseError {
  double rot_deg = 0.0;
  // Empty when either baseline is below kMinBaseline.
  std::optional<double> trans_deg;

  // max(rot, trans); +inf when the translation error is undefined.
  double max_deg() const;
};

struct PoseErrorOptions {
  // Treat t and -t as the same direction.
  bool sign_agnostic_translation = false;
};

Mat3 skew(const Vec3& v);

// Unit Frobenius norm, sign fixed so the largest |entry| is positive
// (first such entry in row-major order on exact ties).
Mat3 canonicalize(const Mat3& m);
Mat3 project_rank2(const Mat3& m);
// Singular values (s1, s2, s3) -> (s, s, 0) with s = (s1 + s2) / 2.
Mat3 project_essential(const Mat3& m);

FundamentalMatrix compose_fundamental(const CameraIntrinsics& ka, const CameraIntrinsics& kb,
                                      const RelativePose& pose);
EssentialMatrix compose_essential(const RelativePose& pose);

// E = Kb^T F Ka, projected onto the essential manifold.
EssentialMatrix to_essential(const FundamentalMatrix& f, const CameraIntrinsics& ka,
                             const CameraIntrinsics& kb);
// F = Kb^-T E Ka^-1.
FundamentalMatrix to_fundamental(const EssentialMatrix& e, const CameraIntrinsics& ka,
                                 const CameraIntrinsics& kb);

// Picks the (R, +-t) candidate with the most correspondences triangulating in
// front of both cameras. Throws empty_input without correspondences and
// undecidable when no candidate has a single point in front.
RelativePose decompose_essential(const EssentialMatrix& e, std::span<const Correspondence> corrs,
                                 const CameraIntrinsics& ka, const CameraIntrinsics& kb);

// Number of correspondences with positive depth in both views under `pose`.
int count_in_front(const RelativePose& pose, std::span<const Correspondence> corrs,
                   const CameraIntrinsics& ka, const CameraIntrinsics& kb);

double rotation_angle_deg(const Mat3& ra, const Mat3& rb);
double direction_angle_deg(const Vec3& a, const Vec3& b);

PoseError pose_error(const RelativePose& est, const RelativePose& gt,
                     const PoseErrorOptions& opts = {});

// l = F p_a scaled so a^2 + b^2 = 1. Empty when p_a is the epipole.
std::optional<Vec3> epipolar_line(const FundamentalMatrix& f, const Vec2& pa);
std::optional<Vec3> epipolar_line(const Mat3& f, const Vec2& pa);

// Unsigned distance of p to a line with a^2 + b^2 = 1.
inline double point_line_distance(const Vec3& line, const Vec2& p) {
  double v = line.x() * p.x() + line.y() * p.y() + line.z();
  return v < 0 ? -v : v;
}

// F' = Sb^-1 F Sa^-1 with S = diag(s, s, 1): the form satisfied by points whose
// coordinates are multiplied by sa (image A) and sb (image B).
FundamentalMatrix rescale_fundamental(const FundamentalMatrix& f, double sa, double sb);

inline Vec3 homogeneous(const Vec2& p) { return {p.x(), p.y(), 1.0}; }

}  // namespace epi
