#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "epi/geometry.h"

namespace epi {

enum class Solver { f7, f8, e8 };

std::string_view to_string(Solver s);
Solver solver_from_string(std::string_view s);
int sample_size(Solver s);

// F7: real roots of det(F1 + lambda F2) = 0 over the Hartley-normalized null
// space (1-3 solutions). F8: rank-2 projected least squares. E8: least
// squares in normalized camera coordinates projected onto the essential
// manifold. F7/F8 return canonical fundamental matrices, E8 canonical
// essential matrices.
//
// Throws insufficient_data on a wrong sample size and degenerate when the
// design matrix loses rank (e.g. coincident points).
std::vector<Mat3> solve_minimal(std::span<const Correspondence> sample, Solver solver,
                                const CameraIntrinsics& ka, const CameraIntrinsics& kb);

// Normalized DLT homography mapping image A onto image B (>= 4 points).
Mat3 fit_homography(std::span<const Correspondence> corrs);

// d(pb, H pa) + d(pa, H^-1 pb); +inf if a point maps to infinity.
double symmetric_transfer_error(const Mat3& h, const Mat3& h_inv, const Correspondence& c);

// Similarity transform moving the centroid to the origin with mean distance sqrt(2).
Mat3 hartley_normalization(std::span<const Vec2> points);

}  // namespace epi
