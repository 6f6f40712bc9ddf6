#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "epi/geometry.h"
#include "epi/solvers.h"

namespace epi {

enum class ModelKind { fundamental, essential };

std::string_view to_string(ModelKind k);
ModelKind model_kind_from_string(std::string_view s);

struct HypothesisPool {
  ModelKind kind = ModelKind::fundamental;
  Solver solver = Solver::f7;
  std::uint64_t seed = 0;
  // Canonical F (pixel space) or E (normalized camera space) per entry.
  std::vector<Mat3> hypotheses;
  // Minimal-sample indices into the source correspondence list. An empty
  // entry marks an injected hypothesis (e.g. the ground truth).
  std::vector<std::vector<int>> provenance;
  std::size_t attempts = 0;
  std::size_t skipped_samples = 0;

  std::size_t size() const { return hypotheses.size(); }
  // Pixel-space fundamental matrix of hypothesis i.
  Mat3 fundamental(std::size_t i, const CameraIntrinsics& ka, const CameraIntrinsics& kb) const;
};

// Pixel-space F for a model of the given kind.
Mat3 as_fundamental(const Mat3& model, ModelKind kind, const CameraIntrinsics& ka,
                    const CameraIntrinsics& kb);

// Draws uniform minimal samples from a stream keyed by `seed` and appends
// every solution until exactly n hypotheses are held. Degenerate samples are
// skipped and counted. Throws insufficient_data when corrs cannot fill one
// sample and degenerate after 100 n attempts.
HypothesisPool generate_pool(std::span<const Correspondence> corrs, std::size_t n, Solver solver,
                             std::uint64_t seed, const CameraIntrinsics& ka,
                             const CameraIntrinsics& kb);

enum class ScoreMethod { ransac, msac, marginalized };

std::string_view to_string(ScoreMethod m);
ScoreMethod score_method_from_string(std::string_view s);

struct ScoreOutcome {
  double value = 0.0;  // higher is better
  bool empty_input = false;
};

// Scores with Sampson residuals r (pixels^2) against threshold t (pixels):
//   ransac        #{r < t^2}
//   msac          sum max(0, 1 - r / t^2)
//   marginalized  mean msac over 8 log-spaced thresholds in [t/4, 4t]
// Invariant to correspondence order (gains are summed in sorted order) and
// to the scale of f.
ScoreOutcome score(const Mat3& f, std::span<const Correspondence> corrs, ScoreMethod method,
                   double threshold_px);

std::vector<double> marginalization_thresholds(double threshold_px);

struct ScoreRecord {
  int hypothesis_index = 0;
  double value = 0.0;  // higher is better for every method
  std::string method;
};

// argmax value; ties go to the lowest hypothesis index.
int select_best(std::size_t pool_size, std::span<const ScoreRecord> records);
int select_best(std::span<const double> values);

std::vector<int> inlier_indices(const Mat3& f, std::span<const Correspondence> corrs,
                                double threshold_px);

struct RefineResult {
  Mat3 model;
  bool accepted = false;     // refined model replaced the input
  bool low_support = false;  // fewer than 8 inliers; input returned
  int iterations = 0;
  double initial_cost = 0.0;  // summed Sampson over inliers
  double final_cost = 0.0;
};

// Least-squares refit (F8/E8) on the inliers followed by Levenberg-Marquardt
// on the summed Sampson error, re-projecting onto the model manifold after
// every step. The result is kept only if the inlier-set MSAC score does not
// drop.
RefineResult refine(const Mat3& model, ModelKind kind, std::span<const Correspondence> corrs,
                    double threshold_px, const CameraIntrinsics& ka, const CameraIntrinsics& kb);

struct DegeneracyResult {
  bool homography_degenerate = false;
  bool low_support = false;
  std::size_t inliers = 0;
  double homography_fraction = 0.0;
};

// Fits a homography to the inliers of f (20-iteration 4-point consensus plus
// a DLT refit) and flags degeneracy when >= 80% of them have symmetric
// transfer error below the threshold.
DegeneracyResult degeneracy_check(const Mat3& f, std::span<const Correspondence> corrs,
                                  double threshold_px, std::uint64_t seed = 0x5eed);

}  // namespace epi
