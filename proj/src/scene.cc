#include "epi/scene.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "epi/error.h"
#include "epi/random.h"

namespace epi {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Mat3 rotation_about(const Vec3& axis, double rad) {
  return Eigen::AngleAxisd(rad, axis.normalized()).toRotationMatrix();
}

Vec3 random_direction(Rng& rng) {
  Vec3 v;
  do {
    v = Vec3(rng.normal(), rng.normal(), rng.normal());
  } while (v.norm() < 1e-9);
  return v.normalized();
}

double lattice(std::uint64_t seed, long i, long j) {
  const auto ui = static_cast<std::uint64_t>(i);
  const auto uj = static_cast<std::uint64_t>(j);
  const std::uint64_t h = splitmix64(seed ^ splitmix64(ui * 0x9E3779B97F4A7C15ULL + uj));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const long i = static_cast<long>(fx), j = static_cast<long>(fy);
  double sx = x - fx, sy = y - fy;
  sx = sx * sx * (3.0 - 2.0 * sx);
  sy = sy * sy * (3.0 - 2.0 * sy);
  const double a = lattice(seed, i, j), b = lattice(seed, i + 1, j);
  const double c = lattice(seed, i, j + 1), d = lattice(seed, i + 1, j + 1);
  return (a * (1 - sx) + b * sx) * (1 - sy) + (c * (1 - sx) + d * sx) * sy;
}

TexturedPlane wall(const Vec3& origin, const Vec3& au, const Vec3& av, Rng& rng) {
  TexturedPlane p;
  p.origin = origin;
  p.axis_u = au;
  p.axis_v = av;
  p.half_u = kInf;
  p.half_v = kInf;
  p.texture_seed = rng.next_u64();
  p.base_color = Vec3(rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0));
  return p;
}

struct Room {
  double half_width, floor_y, ceiling_y, depth;
};

std::vector<TexturedPlane> build_planes(Rng& rng, Room& room) {
  room.half_width = rng.uniform(2.5, 4.0);
  room.floor_y = rng.uniform(1.2, 1.8);
  room.ceiling_y = -rng.uniform(1.2, 2.0);
  room.depth = rng.uniform(4.0, 7.0);
  std::vector<TexturedPlane> planes;
  const Vec3 ex = Vec3::UnitX(), ey = Vec3::UnitY(), ez = Vec3::UnitZ();
  planes.push_back(wall(Vec3(0, 0, room.depth), ex, ey, rng));
  planes.push_back(wall(Vec3(-room.half_width, 0, 0), ez, ey, rng));
  planes.push_back(wall(Vec3(room.half_width, 0, 0), ez, ey, rng));
  planes.push_back(wall(Vec3(0, room.floor_y, 0), ex, ez, rng));
  planes.push_back(wall(Vec3(0, room.ceiling_y, 0), ex, ez, rng));

  const int objects = rng.uniform_int(0, 3);
  for (int k = 0; k < objects; ++k) {
    TexturedPlane p;
    p.origin = Vec3(rng.uniform(-0.6, 0.6) * room.half_width,
                    rng.uniform(room.ceiling_y * 0.6, room.floor_y * 0.6),
                    rng.uniform(2.0, room.depth - 0.5));
    // Tilt the patch by up to 50 degrees away from facing camera A.
    const Mat3 tilt = rotation_about(random_direction(rng), rng.uniform(0.0, 50.0) * M_PI / 180.0);
    p.axis_u = tilt * ex;
    p.axis_v = tilt * ey;
    p.half_u = rng.uniform(0.3, 1.0);
    p.half_v = rng.uniform(0.3, 1.0);
    p.texture_seed = rng.next_u64();
    p.base_color = Vec3(rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0));
    planes.push_back(p);
  }
  return planes;
}

bool inside_frame(const SyntheticScene& s, const Vec2& p) {
  return p.x() >= 0.0 && p.y() >= 0.0 && p.x() < s.width && p.y() < s.height;
}

}  // namespace

void PairSpec::validate() const {
  require(std::isfinite(noise_px) && noise_px >= 0.0, ErrorKind::invalid_argument,
          "noise must be finite and non-negative");
  require(outlier_rate >= 0.0 && outlier_rate < 1.0, ErrorKind::invalid_argument,
          "outlier rate must lie in [0, 1)");
  require(n_corrs_min >= 1 && n_corrs_max >= n_corrs_min, ErrorKind::invalid_argument,
          "correspondence count range is empty");
  require(overlap_lo >= 0.0 && overlap_hi <= 1.0 && overlap_lo <= overlap_hi,
          ErrorKind::invalid_argument, "overlap band must satisfy 0 <= lo <= hi <= 1");
  // Full overlap is only guaranteed by identical views, and the generator
  // never produces a zero baseline.
  require(overlap_lo < 1.0, ErrorKind::invalid_argument,
          "an overlap band of exactly 1 requires identical camera poses");
}

std::optional<RayHit> ray_cast(std::span<const TexturedPlane> planes, const Vec3& origin,
                               const Vec3& dir) {
  std::optional<RayHit> best;
  for (size_t k = 0; k < planes.size(); ++k) {
    const auto& p = planes[k];
    const Vec3 n = p.axis_u.cross(p.axis_v);
    const double denom = n.dot(dir);
    if (std::abs(denom) < 1e-300) continue;
    const double t = n.dot(p.origin - origin) / denom;
    if (!(t > 1e-12)) continue;
    if (best && t >= best->t) continue;
    const Vec3 rel = origin + t * dir - p.origin;
    const double u = rel.dot(p.axis_u);
    const double v = rel.dot(p.axis_v);
    if (std::abs(u) > p.half_u || std::abs(v) > p.half_v) continue;
    best = RayHit{t, static_cast<int>(k), u, v};
  }
  return best;
}

Vec3 camera_center(const SyntheticScene& s, bool camera_b) {
  if (!camera_b) return Vec3::Zero();
  return -s.gt_pose.rotation.transpose() * s.gt_pose.translation;
}

Vec3 pixel_ray(const SyntheticScene& s, bool camera_b, const Vec2& p) {
  const CameraIntrinsics& k = camera_b ? s.kb : s.ka;
  const Vec3 d = k.inverse() * homogeneous(p);
  return camera_b ? Vec3(s.gt_pose.rotation.transpose() * d) : d;
}

std::optional<Covisible> covisible_point(const SyntheticScene& s, const Vec2& pa,
                                         double depth_tolerance) {
  const auto hit = ray_cast(s.planes, Vec3::Zero(), pixel_ray(s, false, pa));
  if (!hit) return std::nullopt;
  const Vec3 x = hit->t * pixel_ray(s, false, pa);
  const Vec3 xb = s.gt_pose.rotation * x + s.gt_pose.translation;
  if (!(xb.z() > 0.0)) return std::nullopt;
  const Vec2 pb(s.kb.fx * xb.x() / xb.z() + s.kb.cx, s.kb.fy * xb.y() / xb.z() + s.kb.cy);
  if (!inside_frame(s, pb)) return std::nullopt;
  const Vec3 cb = camera_center(s, true);
  const auto back = ray_cast(s.planes, cb, x - cb);
  if (!back || std::abs(back->t - 1.0) > depth_tolerance) return std::nullopt;
  return Covisible{x, pb};
}

double compute_overlap(const SyntheticScene& s) {
  int hits = 0;
  for (int j = 0; j < 32; ++j) {
    for (int i = 0; i < 32; ++i) {
      const Vec2 pa((i + 0.5) * s.width / 32.0, (j + 0.5) * s.height / 32.0);
      if (covisible_point(s, pa, 0.01)) ++hits;
    }
  }
  return hits / 1024.0;
}

SyntheticScene generate_scene(const PairSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    SyntheticScene s;
    s.seed = seed;
    s.ka = {500.0, 500.0, 320.0, 240.0};
    s.kb = s.ka;
    Room room{};
    s.planes = build_planes(rng, room);

    const Vec3 center = random_direction(rng) * rng.uniform(0.5, 1.5);
    const double margin = 0.3;
    const bool inside = std::abs(center.x()) < room.half_width - margin &&
                        center.y() < room.floor_y - margin && center.y() > room.ceiling_y + margin &&
                        center.z() < room.depth - 1.0;
    const Mat3 r = rotation_about(random_direction(rng), rng.uniform(0.0, 45.0) * M_PI / 180.0);
    if (!inside) continue;
    s.gt_pose.rotation = r;
    s.gt_pose.translation = -r * center;
    if (s.gt_pose.zero_baseline()) continue;
    s.overlap = compute_overlap(s);
    if (s.overlap >= spec.overlap_lo && s.overlap <= spec.overlap_hi) return s;
  }
  fail(ErrorKind::insufficient_data, "could not reach the requested overlap band in 1000 attempts");
}

Vec3 plane_color(const TexturedPlane& plane, double u, double v) {
  const std::uint64_t s = plane.texture_seed;
  double n = 0.5 * value_noise(s, u / 0.8, v / 0.8) + 0.3 * value_noise(s + 1, u / 0.4, v / 0.4) +
             0.2 * value_noise(s + 2, u / 0.2, v / 0.2);
  Vec3 c = plane.base_color * (0.3 + 0.7 * n);
  for (int ch = 0; ch < 3; ++ch)
    c(ch) += 0.15 * (value_noise(s + 3 + static_cast<std::uint64_t>(ch), u / 0.3, v / 0.3) - 0.5);
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

Image render_view(const SyntheticScene& s, bool camera_b, int width, int height) {
  require(width > 0 && height > 0, ErrorKind::invalid_argument, "render size must be positive");
  const CameraIntrinsics& k = camera_b ? s.kb : s.ka;
  const Mat3 rot = camera_b ? s.gt_pose.rotation : Mat3::Identity();
  const Vec3 trans = camera_b ? s.gt_pose.translation : Vec3::Zero();

  // Per-plane inverse homographies from native pixels to plane coordinates.
  struct Warp {
    Mat3 to_plane;  // [u v 1] ~ to_plane * p
    Mat3 g;         // camera point = g * [u v 1]
    bool valid;
  };
  std::vector<Warp> warps;
  for (const auto& p : s.planes) {
    Mat3 g;
    g.col(0) = rot * p.axis_u;
    g.col(1) = rot * p.axis_v;
    g.col(2) = rot * p.origin + trans;
    const Mat3 h = k.matrix() * g;
    const bool valid = std::abs(h.determinant()) > 1e-12 * std::pow(h.norm(), 3);
    warps.push_back({valid ? Mat3(h.inverse()) : Mat3::Zero(), g, valid});
  }

  Image img;
  img.width = width;
  img.height = height;
  img.rgb.assign(static_cast<size_t>(width) * static_cast<size_t>(height) * 3, 0.0f);
  const double sx = static_cast<double>(s.width) / width;
  const double sy = static_cast<double>(s.height) / height;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      Vec3 acc = Vec3::Zero();
      for (int sub = 0; sub < 4; ++sub) {
        const Vec2 p((x + 0.25 + 0.5 * (sub % 2)) * sx, (y + 0.25 + 0.5 * (sub / 2)) * sy);
        double best_depth = kInf;
        Vec3 color = Vec3::Zero();
        for (size_t i = 0; i < warps.size(); ++i) {
          if (!warps[i].valid) continue;
          const Vec3 q = warps[i].to_plane * homogeneous(p);
          if (q.z() == 0.0) continue;
          const double u = q.x() / q.z(), v = q.y() / q.z();
          const auto& pl = s.planes[i];
          if (std::abs(u) > pl.half_u || std::abs(v) > pl.half_v) continue;
          const double depth = (warps[i].g * Vec3(u, v, 1.0)).z();
          if (!(depth > 1e-9) || depth >= best_depth) continue;
          best_depth = depth;
          color = plane_color(pl, u, v);
        }
        acc += color;
      }
      const size_t o = (static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)) * 3;
      for (int c = 0; c < 3; ++c) img.rgb[o + static_cast<size_t>(c)] = static_cast<float>(acc(c) / 4.0);
    }
  }
  return img;
}

CorrespondenceSet sample_correspondences(const SyntheticScene& s, const PairSpec& spec,
                                         std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const int n = rng.uniform_int(spec.n_corrs_min, spec.n_corrs_max);
  const int outliers = static_cast<int>(std::lround(spec.outlier_rate * n));
  CorrespondenceSet out;
  out.corrs.resize(static_cast<size_t>(n));
  out.inlier.assign(static_cast<size_t>(n), 1);
  for (int i : rng.sample_distinct(n, outliers)) out.inlier[static_cast<size_t>(i)] = 0;

  const long max_draws = 10000L * n;
  long draws = 0;
  for (int i = 0; i < n; ++i) {
    std::optional<Covisible> cv;
    Vec2 pa;
    while (!cv) {
      require(draws++ < max_draws, ErrorKind::insufficient_data,
              "scene has no co-visible surface to sample from");
      pa = Vec2(rng.uniform(0.0, s.width), rng.uniform(0.0, s.height));
      cv = covisible_point(s, pa);
    }
    auto& c = out.corrs[static_cast<size_t>(i)];
    c.pa = pa + spec.noise_px * Vec2(rng.normal(), rng.normal());
    if (out.inlier[static_cast<size_t>(i)]) {
      c.pb = cv->pb + spec.noise_px * Vec2(rng.normal(), rng.normal());
    } else {
      c.pb = Vec2(rng.uniform(0.0, s.width), rng.uniform(0.0, s.height));
    }
  }
  return out;
}

std::vector<Correspondence> dense_gt(const SyntheticScene& s, double grid_step) {
  require(grid_step > 0.0, ErrorKind::invalid_argument, "grid step must be positive");
  std::vector<Correspondence> out;
  for (double y = grid_step / 2; y < s.height; y += grid_step) {
    for (double x = grid_step / 2; x < s.width; x += grid_step) {
      const Vec2 pa(x, y);
      if (auto cv = covisible_point(s, pa)) out.push_back({pa, cv->pb});
    }
  }
  require(!out.empty(), ErrorKind::empty_input, "no co-visible grid point");
  return out;
}

}  // namespace epi
