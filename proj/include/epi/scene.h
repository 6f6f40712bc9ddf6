#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Geometry>

#include "epi/geometry.h"

namespace epi {

// Rectangular textured patch in the frame of camera A:
// X(u, v) = origin + u * axis_u + v * axis_v, |u| <= half_u, |v| <= half_v.
// Infinite extents are allowed (walls of the enclosing room).
struct TexturedPlane {
  Vec3 origin = Vec3::Zero();
  Vec3 axis_u = Vec3::UnitX();
  Vec3 axis_v = Vec3::UnitY();
  double half_u = 1.0;
  double half_v = 1.0;
  std::uint64_t texture_seed = 0;
  Vec3 base_color = Vec3::Constant(0.5);

  Vec3 normal() const { return axis_u.cross(axis_v).normalized(); }
};

struct SyntheticScene {
  std::uint64_t seed = 0;
  int width = 640;
  int height = 480;
  std::vector<TexturedPlane> planes;
  CameraIntrinsics ka, kb;
  RelativePose gt_pose;  // X_B = R X_A + t
  double overlap = 0.0;
};

struct PairSpec {
  double noise_px = 1.0;
  double outlier_rate = 0.0;
  // Correspondence count drawn uniformly from [n_corrs_min, n_corrs_max].
  int n_corrs_min = 200;
  int n_corrs_max = 200;
  double overlap_lo = 0.10;
  double overlap_hi = 0.40;

  void validate() const;
};

struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;  // row-major, 3 interleaved channels in [0, 1]

  float at(int x, int y, int c) const {
    return rgb[(static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)) * 3 +
               static_cast<size_t>(c)];
  }
};

struct RayHit {
  double t = 0.0;  // ray parameter; the direction is not normalized
  int plane = -1;
  double u = 0.0, v = 0.0;
};

// Nearest intersection of origin + t * dir (t > 0) with the scene planes.
std::optional<RayHit> ray_cast(std::span<const TexturedPlane> planes, const Vec3& origin,
                               const Vec3& dir);

// Camera centre and ray direction of pixel p in the frame of camera A.
Vec3 camera_center(const SyntheticScene& s, bool camera_b);
Vec3 pixel_ray(const SyntheticScene& s, bool camera_b, const Vec2& p);

// Surface point seen at pixel pa of camera A and its exact projection into
// B, if it is inside B's frame and not occluded there.
struct Covisible {
  Vec3 point;
  Vec2 pb;
};
std::optional<Covisible> covisible_point(const SyntheticScene& s, const Vec2& pa,
                                         double depth_tolerance = 1e-6);

// Fraction of a 32x32 grid over A (cell centres) co-visible in B with a 1%
// depth-consistency tolerance.
double compute_overlap(const SyntheticScene& s);

// Room of five walls (front, left, right, floor, ceiling) plus 0-3 free
// patches; camera B rotated by up to 45 degrees about a random axis and moved
// 0.5-1.5 m. Resamples until the overlap lies in the band; throws
// insufficient_data after 1000 attempts.
SyntheticScene generate_scene(const PairSpec& spec, std::uint64_t seed);

// Procedural value-noise colour of a plane at plane coordinates (u, v).
Vec3 plane_color(const TexturedPlane& plane, double u, double v);

// Renders the view of camera A or B at the requested resolution. Each plane
// is warped into the image through its plane-to-image homography and
// composited by depth, with 2x2 supersampling. Pixel i spans [i, i+1) in the
// native frame scaled by (width / scene.width, height / scene.height).
Image render_view(const SyntheticScene& s, bool camera_b, int width, int height);

struct CorrespondenceSet {
  std::vector<Correspondence> corrs;
  std::vector<char> inlier;  // 1 = exact projection plus noise
};

// Inliers are co-visible surface points projected exactly into both views
// plus isotropic Gaussian noise; round(outlier_rate * n) entries (at random
// positions) replace pB with a uniform draw over image B.
CorrespondenceSet sample_correspondences(const SyntheticScene& s, const PairSpec& spec,
                                         std::uint64_t seed);

// Noiseless correspondences for every co-visible point of a grid over A with
// the given step (pixels), starting at step / 2.
std::vector<Correspondence> dense_gt(const SyntheticScene& s, double grid_step);

}  // namespace epi
