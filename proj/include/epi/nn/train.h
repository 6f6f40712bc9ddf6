#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epi/geometry.h"
#include "epi/nn/fsnet.h"
#include "epi/random.h"
#include "epi/robust.h"
#include "epi/scene.h"

namespace epi::nn {

enum class LossKind { soft_l1, weighted_ce };
std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& s);

// Pose-error bins (degrees, on max(e_R, e_t)) used for batch sampling.
inline constexpr std::array<double, 7> kBinEdges = {0, 5, 10, 20, 40, 90, 180};

// Bin index in [0, 6); the last bin includes 180. -1 for non-finite errors.
int pose_error_bin(double max_deg);

// Uniform over non-empty bins, then uniform within the bin. Hypotheses with
// an undefined translation error are left out.
class BinSampler {
 public:
  explicit BinSampler(std::span<const PoseError> errors);
  int sample(Rng& rng) const;
  std::size_t non_empty() const { return non_empty_.size(); }
  const std::array<std::vector<int>, kBinEdges.size() - 1>& bins() const { return bins_; }

 private:
  std::array<std::vector<int>, kBinEdges.size() - 1> bins_;
  std::vector<int> non_empty_;
};

template <typename T>
struct TrainPair {
  PreparedImage<T> a, b;
  std::vector<Mat3> hypotheses;  // pixel-frame F
  std::vector<PoseError> errors;
};

template <typename U, typename T>
TrainPair<U> convert_pair(const TrainPair<T>& p);

// Render size used for network inputs; a 4:3 frame centre-cropped to the
// square input keeps 96 x 96 source pixels for a 64 x 64 input.
inline constexpr int kRenderWidth = 128;
inline constexpr int kRenderHeight = 96;

// Renders and prepares both views of a scene.
template <typename T>
std::pair<PreparedImage<T>, PreparedImage<T>> prepare_views(const SyntheticScene& scene,
                                                            const NetworkConfig& config);

// Renders both views and attaches per-hypothesis pose errors against the
// scene's ground truth.
template <typename T>
TrainPair<T> make_train_pair(const SyntheticScene& scene, const HypothesisPool& pool,
                             std::span<const Correspondence> corrs, const NetworkConfig& config);

struct TrainHyper {
  double lr = 1e-4;
  double momentum = 0.9;
  int batch = 8;
  int steps = 2000;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::soft_l1;
  double ce_weight = 2.0;
};

struct TrainLogRow {
  int step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  Weights<float> weights;
  std::vector<TrainLogRow> log;
};

// Loss of one (pair, hypothesis) sample. With `backward`, d(loss * grad_scale)
// is accumulated into the parameter gradients. `branch_log` receives the
// branch of every non-smooth op, the loss included.
template <typename T>
double sample_loss(Weights<T>& w, const TrainPair<T>& pair, std::size_t hypothesis, LossKind loss,
                   double ce_weight, bool backward, double grad_scale = 1.0,
                   std::vector<std::uint8_t>* branch_log = nullptr);

// Momentum SGD over batches drawn per pair with BinSampler. Pairs without
// any hypothesis of defined pose error are never drawn. Throws non_finite
// when a batch loss is not finite.
TrainResult train_toy(std::span<const TrainPair<float>> data, Weights<float> init,
                      const TrainHyper& hyper,
                      const std::function<void(const TrainLogRow&)>& progress = {});

void write_training_log(std::ostream& os, std::span<const TrainLogRow> log);

struct GradCheckOptions {
  int min_params = 200;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::soft_l1;
  double ce_weight = 2.0;
  double step = 1e-5;
  // Negates the largest-magnitude checked analytic entry.
  bool sabotage = false;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  // Probes redrawn because the +-step evaluations took a different branch
  // of some non-smooth op than the base point.
  std::size_t kink_redraws = 0;
  double max_abs_analytic = 0.0;
  std::size_t checked = 0;
  std::size_t tensors = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Reverse-mode gradients of the mean batch loss against central differences
// on a seeded subsample spanning every parameter tensor. Relative error uses
// the denominator max(|analytic|, |numeric|, 1e-8). A central difference
// straddling a kink does not approximate the derivative, so such probes are
// replaced by another entry of the same tensor. Throws when a tensor has no
// kink-free entry within a bounded number of draws.
GradCheckReport grad_check(Weights<double>& w, std::span<const TrainPair<double>> pairs,
                           std::span<const std::size_t> hypotheses, const GradCheckOptions& opt);

}  // namespace epi::nn
