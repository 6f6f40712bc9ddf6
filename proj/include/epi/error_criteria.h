#pragma once

#include <span>
#include <string_view>

#include "epi/geometry.h"

namespace epi {

enum class Criterion { sampson, sed, epipolar, reprojection };
enum class Aggregate { mean, median, truncated_mean };

std::string_view to_string(Criterion c);
Criterion criterion_from_string(std::string_view s);
std::string_view to_string(Aggregate a);

// Residual of one correspondence. Units: pixels^2 for sampson (first-order
// squared geometric error), pixels for the others.
//   sampson      (pb^T F pa)^2 / ((F pa)_1^2 + (F pa)_2^2 + (F^T pb)_1^2 + (F^T pb)_2^2)
//   sed          d(pb, F pa) + d(pa, F^T pb)
//   epipolar     d(pb, F pa)
//   reprojection sqrt of the minimal summed squared correction of (pa, pb)
//                onto the exact constraint
// Throws indeterminate when an epipolar line (or the sampson gradient)
// vanishes.
double residual(const FundamentalMatrix& f, const Correspondence& c, Criterion criterion);
double residual(const Mat3& f, const Correspondence& c, Criterion criterion);

// Non-throwing Sampson error; +inf when indeterminate. Hot path for scoring.
double sampson_error(const Mat3& f, const Vec2& pa, const Vec2& pb);

// Minimal summed squared correction, exact via the degree-6 epipolar pencil
// polynomial. Returns pixels^2.
double optimal_correction_sq(const Mat3& f, const Vec2& pa, const Vec2& pb);

struct OracleOptions {
  Aggregate aggregate = Aggregate::truncated_mean;
  // Per-residual cap in pixels. Sampson residuals (pixels^2) clamp at cap^2.
  double cap_px = 10.0;
};

struct OracleScore {
  double value = 0.0;  // lower is better
  Criterion criterion = Criterion::sampson;
  Aggregate aggregate = Aggregate::truncated_mean;
  // Correspondences skipped because their residual was indeterminate.
  std::size_t indeterminate = 0;
};

OracleScore oracle_score(const FundamentalMatrix& f, std::span<const Correspondence> dense,
                         Criterion criterion, const OracleOptions& opts = {});
OracleScore oracle_score(const Mat3& f, std::span<const Correspondence> dense, Criterion criterion,
                         const OracleOptions& opts = {});

}  // namespace epi
