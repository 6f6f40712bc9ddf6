#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epi/io.h"
#include "epi/metrics.h"
#include "epi/nn/train.h"

namespace epi::pipeline {

// Stage functions behind the CLI. They work on in-memory records; the CLI
// handles files and manifests. Item i of every stage draws from
// derive_seed(seed, <stage>, i), so outputs do not depend on worker count.

struct SceneGenOptions {
  std::size_t n = 10;
  std::uint64_t seed = 0;
  double overlap_min = 0.10;
  double overlap_max = 0.40;
};

std::vector<io::SceneRecord> gen_scenes(const SceneGenOptions& opt);

struct PairGenOptions {
  double noise_px = 1.0;
  double outlier_rate = 0.0;
  int n_corr_min = 200;
  int n_corr_max = 200;
  std::uint64_t seed = 0;
};

// One pair per scene.
std::vector<io::PairRecord> gen_pairs(std::span<const io::SceneRecord> scenes,
                                      const PairGenOptions& opt);

struct PoolGenOptions {
  ModelKind kind = ModelKind::fundamental;
  std::size_t n = 500;
  Solver solver = Solver::f7;
  std::uint64_t seed = 0;
  // Replaces nothing: the ground-truth model is inserted at a seeded random
  // position, so the pool holds n + 1 entries.
  bool inject_gt = false;
};

struct PoolGenResult {
  std::vector<io::PoolRecord> pools;
  // Pairs whose correspondences could not fill a pool; they are left out.
  std::vector<std::string> skipped;
};

PoolGenResult gen_pools(std::span<const io::PairRecord> pairs, const PoolGenOptions& opt);

// Ground-truth model of a pair in the requested parameterization.
Mat3 ground_truth_model(const SyntheticScene& scene, ModelKind kind);

// Scoring methods: ransac, msac, marginalized, oracle-sampson, oracle-pose,
// fsnet. All scores are higher-is-better; oracle and fsnet scores are
// negated costs.
struct ScoreOptions {
  std::string method = "msac";
  double threshold_px = 1.0;
  // fsnet only.
  std::optional<nn::Weights<float>> weights;
  // oracle-sampson: dense ground-truth grid step in pixels.
  double dense_step_px = 8.0;
};

const std::vector<std::string>& score_methods();

io::ScoreFile score_pools(std::span<const io::PairRecord> pairs,
                          std::span<const io::PoolRecord> pools, const ScoreOptions& opt);

// Pools joined to their pairs by id. Throws invalid_argument on unknown ids.
std::vector<const io::PairRecord*> match_pairs(std::span<const io::PairRecord> pairs,
                                               std::span<const io::PoolRecord> pools);

std::vector<nn::TrainPair<float>> build_train_set(std::span<const io::PairRecord> pairs,
                                                  std::span<const io::PoolRecord> pools,
                                                  const nn::NetworkConfig& config);

struct EvalOptions {
  EvalConfig config;
  FilterMode filter = FilterMode::none;
  int k = 0;  // 0 picks the per-model default
};

// Evaluates every score file in `scores` (one scorer each). With a filter,
// the first file is the base scorer and `rescorer` ranks its selections;
// the combination is reported as an extra scorer named
// "<base>+<rescorer>:<filter>".
EvalReport run_eval(std::span<const io::PairRecord> pairs, std::span<const io::PoolRecord> pools,
                    std::span<const io::ScoreFile> scores, const io::ScoreFile* rescorer,
                    const EvalOptions& opt);

// Selections of the combined scorer, per pool.
std::vector<int> combined_selection(std::span<const io::PairRecord> pairs,
                                    std::span<const io::PoolRecord> pools,
                                    const io::ScoreFile& base, const io::ScoreFile& rescorer,
                                    FilterMode filter, int k);

// Two seeded scenes with 20-hypothesis F7 pools (30% outliers) and one
// checked hypothesis each, in 64-bit precision.
struct GradCheckFixture {
  std::vector<nn::TrainPair<double>> pairs;
  std::vector<std::size_t> hypotheses;
};

GradCheckFixture gradcheck_fixture(const nn::NetworkConfig& config, std::uint64_t seed);

io::json report_json(const EvalReport& report, const io::json& meta);
std::string pairs_csv(const EvalReport& report);
std::string histogram_csv(std::span<const HistogramBin> bins);

}  // namespace epi::pipeline
