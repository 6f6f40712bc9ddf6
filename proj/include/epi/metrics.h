#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "epi/geometry.h"
#include "epi/robust.h"

namespace epi {

inline constexpr double kGoodPoseDeg = 10.0;
inline constexpr int kSplitBoundary = 100;

// Mean over T = 1, 2, ..., max_thresh degrees of the fraction of errors <= T.
// Non-finite errors (undefined poses) count as above every threshold.
double maa(std::span<const double> errors, double max_thresh = 10.0);

// Median with the mean of the middle pair for even counts; non-finite entries
// sort last. Throws empty_input.
double median(std::vector<double> values);

// Pose of a pool member against the ground truth. The decomposition uses the
// given correspondences for cheirality; an undecidable decomposition yields
// infinite rotation error and undefined translation.
PoseError hypothesis_pose_error(const Mat3& model, ModelKind kind,
                                std::span<const Correspondence> corrs,
                                const CameraIntrinsics& ka, const CameraIntrinsics& kb,
                                const RelativePose& gt);

std::vector<PoseError> pool_pose_errors(const HypothesisPool& pool,
                                        std::span<const Correspondence> corrs,
                                        const CameraIntrinsics& ka, const CameraIntrinsics& kb,
                                        const RelativePose& gt);

// Inserts `model` at `position` with an empty provenance entry.
void inject_hypothesis(HypothesisPool& pool, const Mat3& model, std::size_t position);

enum class FailureClass { selected_good, scoring_failure, pre_scoring_failure, degenerate };
inline constexpr std::array<FailureClass, 4> kFailureClasses = {
    FailureClass::selected_good, FailureClass::scoring_failure, FailureClass::pre_scoring_failure,
    FailureClass::degenerate};

std::string_view to_string(FailureClass c);
FailureClass failure_class_from_string(std::string_view s);

// Precedence: good, pre-scoring, degenerate, scoring. `selected_degenerate`
// is consulted only when the pool holds a good hypothesis but the selected one
// is not.
FailureClass classify_failure(std::span<const double> pool_max_errors, int selected,
                              const std::function<bool()>& selected_degenerate);

FailureClass classify_failure(const HypothesisPool& pool, int selected, const RelativePose& gt,
                              std::span<const Correspondence> corrs, const CameraIntrinsics& ka,
                              const CameraIntrinsics& kb, double threshold_px);

enum class FilterMode { none, corresp, candidate };

std::string_view to_string(FilterMode m);
FilterMode filter_mode_from_string(std::string_view s);

inline int default_candidate_k(ModelKind kind) { return kind == ModelKind::fundamental ? 10 : 20; }

// The k highest base scores (ties to the lower index), ordered by rank.
std::vector<int> top_k(std::span<const double> base_scores, int k);

// Index of the lowest cost; ties go to the lowest index.
int select_min(std::span<const double> costs);

// Hybrid selection. `rescorer_cost(i)` is lower-is-better (e.g. a predicted
// pose error) and is only called for the hypotheses it has to rank.
//   corresp:   n_corrs < 100 ranks the whole pool by the rescorer, otherwise
//              the base scores decide.
//   candidate: the rescorer ranks the top-k base-scored hypotheses; k larger
//              than the pool is clamped.
//   none:      base scores only.
int combine_filter(FilterMode mode, std::span<const double> base_scores,
                   const std::function<double(int)>& rescorer_cost, int n_corrs, int k);

enum class Modality { unimodal, multimodal };
enum class ModalityRule { max_pairwise, min_max_difference };

std::string_view to_string(Modality m);

struct ModalityResult {
  Modality modality = Modality::unimodal;
  double min_distance = 0.0;
  double max_distance = 0.0;
  std::vector<int> excluded;  // members whose decomposition was undecidable
};

// d(i, j) = max(rotation angle, translation direction angle) between the
// decomposed poses. max_pairwise: unimodal iff max d < 10 degrees.
// min_max_difference: multimodal iff max d - min d > 10 degrees.
double pose_distance_deg(const RelativePose& a, const RelativePose& b);

ModalityResult modality_analysis(std::span<const Mat3> top, ModelKind kind,
                                 std::span<const Correspondence> corrs, const CameraIntrinsics& ka,
                                 const CameraIntrinsics& kb,
                                 ModalityRule rule = ModalityRule::max_pairwise);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

// Bins of the given width over [0, 180]; non-finite values land in the last bin.
std::vector<HistogramBin> histogram(std::span<const double> values, double bin_width = 5.0,
                                    double max_value = 180.0);

// ---------------------------------------------------------------------------
// Report assembly.

struct PairOutcome {
  std::string pair_id;
  int selected_index = -1;
  PoseError error;
  int n_corrs = 0;
  FailureClass failure = FailureClass::scoring_failure;
};

struct MaaTriple {
  double r = 0.0, t = 0.0, max = 0.0;
};

struct SplitSummary {
  std::size_t pairs = 0;
  MaaTriple maa;
  double median_r = 0.0;
  double median_t = 0.0;
};

struct ScorerReport {
  std::string scorer;
  std::vector<PairOutcome> pairs;
  SplitSummary all, low, high;  // low: n_corrs < 100
  std::array<double, 4> failure_fractions{};  // indexed like kFailureClasses
};

struct EvalReport {
  double maa_max = 10.0;
  std::vector<ScorerReport> scorers;
  std::vector<HistogramBin> pool_rot_histogram;
  std::vector<HistogramBin> pool_trans_histogram;
  std::size_t unimodal = 0;
  std::size_t multimodal = 0;
};

// Per-pair inputs the report needs.
struct EvalPair {
  std::string pair_id;
  std::vector<Correspondence> corrs;
  CameraIntrinsics ka, kb;
  RelativePose gt;
  const HypothesisPool* pool = nullptr;
};

struct EvalConfig {
  double maa_max = 10.0;
  double threshold_px = 1.0;
  bool refine = false;
  ModalityRule modality_rule = ModalityRule::max_pairwise;
  std::size_t modality_k = 5;
};

struct ScorerSelections {
  std::string scorer;
  std::vector<int> selected;  // per pair, parallel to the pair list
  // Optional base scores (higher is better) per pair for the modality study.
  std::vector<std::vector<double>> base_scores;
};

SplitSummary summarize(std::span<const PairOutcome> rows, double maa_max);

EvalReport evaluate(std::span<const EvalPair> pairs, std::span<const ScorerSelections> scorers,
                    const EvalConfig& config);

}  // namespace epi
