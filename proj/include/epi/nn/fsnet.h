#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epi/geometry.h"
#include "epi/nn/graph.h"
#include "epi/nn/ops.h"
#include "epi/scene.h"

namespace epi::nn {

struct NetworkConfig {
  std::string name = "desk";
  int height = 64;
  int width = 64;
  int channels = 32;       // C
  int depth = 2;           // N_t interleaved (self, cross) blocks
  int samples = 17;        // D
  int query_stride = 2;
  double clamp_scale = 25.0;  // t_s
  int regressor_size = 128;   // C'
  int heads = 8;
  int precision = 32;

  static NetworkConfig desk();
  static NetworkConfig paper();
  static NetworkConfig named(const std::string& name);

  void validate() const;

  int feature_height() const { return height / 4; }
  int feature_width() const { return width / 4; }
  int query_height() const { return (feature_height() + query_stride - 1) / query_stride; }
  int query_width() const { return (feature_width() + query_stride - 1) / query_stride; }

  // Output widths of the nine extractor layers (0-8).
  std::array<int, 9> extractor_widths() const;
  // Output widths of the four regressor residual blocks.
  std::array<int, 4> regressor_widths() const;

  bool operator==(const NetworkConfig&) const = default;
};

template <typename T>
struct Weights {
  NetworkConfig config;
  ParameterSet<T> params;
};

// Deterministic initialization from a seed: He-normal convolutions and
// linear maps, unit normalization scales, zero shifts and biases.
template <typename T>
Weights<T> init_weights(const NetworkConfig& config, std::uint64_t seed);

template <typename U, typename T>
Weights<U> convert_weights(const Weights<T>& w);

// Network input [3, H, W] plus the map from the pixel frame in which
// hypotheses are expressed to input pixels (x_in = to_input * x_frame).
template <typename T>
struct PreparedImage {
  Tensor<T> pixels;
  Mat3 to_input = Mat3::Identity();
};

// Centre-crops to the configured aspect ratio and resizes with 2x2
// supersampled bilinear filtering. `image` covers a frame of frame_width x
// frame_height pixels at a uniform scale.
template <typename T>
PreparedImage<T> prepare_image(const Image& image, int frame_width, int frame_height,
                               const NetworkConfig& config);

// --- Stages -----------------------------------------------------------------

template <typename T>
Var extract_features(Graph<T>& g, Weights<T>& w, Var image);

// N_t interleaved self and cross blocks. Both sides of every block are
// computed from the previous block's outputs, so swapping the inputs swaps
// the outputs exactly.
template <typename T>
std::pair<Var, Var> transform_pair(Graph<T>& g, Weights<T>& w, Var fa, Var fb);

// Single-layer attention message (before any residual addition); exposed for
// equivalence tests. x [C, N], source [C, M].
template <typename T>
Var attention_message(Graph<T>& g, Weights<T>& w, const std::string& prefix, Var x, Var source);

// Epipolar sampling geometry in continuous feature-map coordinates: cell
// (u, v) covers [u, u+1) x [v, v+1). The clipped segment runs from the
// entry point (smaller x, then smaller y) to the exit point.
struct ClippedSegment {
  Vec2 entry;
  Vec2 exit;
};
std::optional<ClippedSegment> clip_line(const Vec3& line, double width, double height);

// D equidistant points from entry to exit; empty when the line misses.
std::vector<Vec2> epipolar_samples(const Vec3& line, double width, double height, int d);

// Maps from hypothesis-frame F to the feature-map line map F_feat with
// l_B = F_feat * x_A in feature coordinates. Entries are summed in a
// value-sorted order, so the result for F^T with swapped transforms is the
// exact transpose.
Mat3 feature_fundamental(const Mat3& f, const Mat3& to_input_a, const Mat3& to_input_b);

// Sampling plan for every stride-spaced query of map A against map B.
SamplePlan epipolar_plan(const Mat3& f_feat, const NetworkConfig& config);
// Plan that reads the stride-spaced query cells themselves.
SamplePlan query_plan(const NetworkConfig& config);

template <typename T>
Var epipolar_cross_attention(Graph<T>& g, Weights<T>& w, Var fa, Var fb, const Mat3& f_feat);

// Returns [2, 1]: (e_R, e_t) in degrees, >= 0 by the softplus head.
template <typename T>
Var regress_pose_error(Graph<T>& g, Weights<T>& w, Var fia, Var fib);

struct ScoreOutput {
  double e_rot = 0.0;
  double e_trans = 0.0;
  double max() const { return e_rot > e_trans ? e_rot : e_trans; }
};

// Per-pair cache of the transformed feature maps (the part shared by every
// hypothesis).
template <typename T>
struct PairFeatures {
  Tensor<T> fa, fb;
  Mat3 to_input_a = Mat3::Identity();
  Mat3 to_input_b = Mat3::Identity();
};

template <typename T>
class FeatureCache {
 public:
  // Computes (or returns) the features of the pair registered under `key`.
  const PairFeatures<T>& get(const std::string& key, const PreparedImage<T>& a,
                             const PreparedImage<T>& b, Weights<T>& w);
  std::size_t extract_calls() const { return extract_calls_; }
  std::size_t transform_calls() const { return transform_calls_; }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  std::map<std::string, PairFeatures<T>> entries_;
  std::size_t extract_calls_ = 0;
  std::size_t transform_calls_ = 0;
};

template <typename T>
PairFeatures<T> compute_pair_features(const PreparedImage<T>& a, const PreparedImage<T>& b,
                                      Weights<T>& w);

// Epipolar attention both ways plus the regressor for one hypothesis. Pure
// given the weights; safe to call concurrently.
template <typename T>
ScoreOutput score_hypothesis(const PairFeatures<T>& features, const Mat3& f, Weights<T>& w);

template <typename T>
ScoreOutput forward_score(const PreparedImage<T>& a, const PreparedImage<T>& b, const Mat3& f,
                          Weights<T>& w, FeatureCache<T>& cache, const std::string& key);

// argmin of max(e_R, e_t); ties go to the lowest index.
int select_hypothesis(std::span<const ScoreOutput> scores);

// --- Losses -------------------------------------------------------------------

struct LossValue {
  double value = 0.0;
  double d_rot = 0.0;    // d loss / d e_R
  double d_trans = 0.0;  // d loss / d e_t
};

// |g(gt_t) - g(e_t)| + |g(gt_R) - g(e_R)| with g(x) = tanh(x / t_s). The
// derivative of |.| at 0 is taken as 0. Throws invalid_argument when the
// ground-truth translation error is undefined.
LossValue loss_soft_l1(const ScoreOutput& pred, const PoseError& gt, double clamp_scale);

// -(1 + f)^w [y log f + (1 - y) log(1 - f)], f clamped to [1e-7, 1 - 1e-7].
double loss_weighted_ce(double confidence, int label, double w_exp);
double loss_weighted_ce_grad(double confidence, int label, double w_exp);

// Confidence of a hypothesis being correct from predicted errors:
// sigmoid((10 - max(e_R, e_t)) / 2.5).
double confidence_from_errors(const ScoreOutput& pred);
int correctness_label(const PoseError& gt);
LossValue loss_weighted_ce(const ScoreOutput& pred, const PoseError& gt, double w_exp);

}  // namespace epi::nn
