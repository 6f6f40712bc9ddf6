#include "epi/pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "epi/error.h"
#include "epi/error_criteria.h"
#include "epi/parallel.h"
#include "epi/random.h"

namespace epi::pipeline {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string make_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

const io::PairRecord& pair_of(const std::map<std::string, const io::PairRecord*>& index,
                              const std::string& id) {
  const auto it = index.find(id);
  if (it == index.end()) fail(ErrorKind::invalid_argument, "unknown pair id '" + id + "'");
  return *it->second;
}

std::map<std::string, const io::PairRecord*> index_pairs(std::span<const io::PairRecord> pairs) {
  std::map<std::string, const io::PairRecord*> index;
  for (const auto& p : pairs)
    if (!index.emplace(p.pair_id, &p).second)
      fail(ErrorKind::invalid_argument, "duplicate pair id '" + p.pair_id + "'");
  return index;
}

// Score rows aligned with the pool list.
std::vector<const io::ScoreRow*> align_scores(const io::ScoreFile& scores,
                                              std::span<const io::PoolRecord> pools) {
  std::map<std::string, const io::ScoreRow*> by_id;
  for (const auto& r : scores.rows) by_id.emplace(r.pair_id, &r);
  std::vector<const io::ScoreRow*> out;
  for (const auto& pool : pools) {
    const auto it = by_id.find(pool.pair_id);
    if (it == by_id.end())
      fail(ErrorKind::invalid_argument,
           "scores '" + scores.method + "' have no row for pair '" + pool.pair_id + "'");
    if (it->second->scores.size() != pool.pool.size())
      fail(ErrorKind::invalid_argument,
           "scores '" + scores.method + "' do not match the pool of pair '" + pool.pair_id + "'");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

std::vector<io::SceneRecord> gen_scenes(const SceneGenOptions& opt) {
  PairSpec spec;
  spec.overlap_lo = opt.overlap_min;
  spec.overlap_hi = opt.overlap_max;
  spec.validate();
  std::vector<io::SceneRecord> out(opt.n);
  parallel_for(opt.n, [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(opt.seed, "scene", i);
    out[i] = {make_id("s", i), seed, generate_scene(spec, seed)};
  });
  return out;
}

std::vector<io::PairRecord> gen_pairs(std::span<const io::SceneRecord> scenes,
                                      const PairGenOptions& opt) {
  PairSpec spec;
  spec.noise_px = opt.noise_px;
  spec.outlier_rate = opt.outlier_rate;
  spec.n_corrs_min = opt.n_corr_min;
  spec.n_corrs_max = opt.n_corr_max;
  spec.validate();
  std::vector<io::PairRecord> out(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t i) {
    io::PairRecord& p = out[i];
    p.pair_id = make_id("p", i);
    p.scene_id = scenes[i].scene_id;
    p.seed = derive_seed(opt.seed, "pair", i);
    p.scene = scenes[i].scene;
    p.set = sample_correspondences(p.scene, spec, p.seed);
    p.spec = spec;
    p.spec.n_corrs_min = p.spec.n_corrs_max = static_cast<int>(p.set.corrs.size());
  });
  return out;
}

Mat3 ground_truth_model(const SyntheticScene& scene, ModelKind kind) {
  if (kind == ModelKind::essential) return compose_essential(scene.gt_pose).matrix();
  return compose_fundamental(scene.ka, scene.kb, scene.gt_pose).matrix();
}

PoolGenResult gen_pools(std::span<const io::PairRecord> pairs, const PoolGenOptions& opt) {
  require(opt.n > 0, ErrorKind::invalid_argument, "pool size must be positive");
  const ModelKind solver_kind = opt.solver == Solver::e8 ? ModelKind::essential : ModelKind::fundamental;
  require(solver_kind == opt.kind, ErrorKind::invalid_argument,
          "solver does not produce the requested model kind");
  std::vector<std::optional<io::PoolRecord>> slots(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    const auto& p = pairs[i];
    const std::uint64_t seed = derive_seed(opt.seed, "pool", i);
    io::PoolRecord r;
    r.pair_id = p.pair_id;
    try {
      r.pool = generate_pool(p.set.corrs, opt.n, opt.solver, seed, p.scene.ka, p.scene.kb);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate && e.kind() != ErrorKind::insufficient_data) throw;
      return;
    }
    if (opt.inject_gt) {
      Rng rng(derive_seed(seed, "inject-gt"));
      r.injected_index = static_cast<int>(rng.uniform_index(r.pool.size() + 1));
      inject_hypothesis(r.pool, ground_truth_model(p.scene, opt.kind),
                        static_cast<std::size_t>(r.injected_index));
    }
    slots[i] = std::move(r);
  });
  PoolGenResult out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i])
      out.pools.push_back(std::move(*slots[i]));
    else
      out.skipped.push_back(pairs[i].pair_id);
  }
  return out;
}

const std::vector<std::string>& score_methods() {
  static const std::vector<std::string> methods = {"ransac",         "msac",        "marginalized",
                                                   "oracle-sampson", "oracle-pose", "fsnet"};
  return methods;
}

std::vector<const io::PairRecord*> match_pairs(std::span<const io::PairRecord> pairs,
                                               std::span<const io::PoolRecord> pools) {
  const auto index = index_pairs(pairs);
  std::vector<const io::PairRecord*> out;
  for (const auto& pool : pools) out.push_back(&pair_of(index, pool.pair_id));
  return out;
}

io::ScoreFile score_pools(std::span<const io::PairRecord> pairs,
                          std::span<const io::PoolRecord> pools, const ScoreOptions& opt) {
  const auto& methods = score_methods();
  if (std::find(methods.begin(), methods.end(), opt.method) == methods.end())
    fail(ErrorKind::invalid_argument, "unknown scoring method '" + opt.method + "'");
  require(opt.threshold_px > 0.0 && std::isfinite(opt.threshold_px), ErrorKind::invalid_argument,
          "threshold must be positive and finite");
  const auto matched = match_pairs(pairs, pools);

  io::ScoreFile out;
  out.method = opt.method;
  out.threshold_px = opt.threshold_px;
  out.rows.resize(pools.size());

  if (opt.method == "fsnet") {
    require(opt.weights.has_value(), ErrorKind::invalid_argument, "fsnet scoring needs weights");
    // Sequential: the network graph binds to one shared weight set.
    nn::Weights<float> w = *opt.weights;
    for (std::size_t i = 0; i < pools.size(); ++i) {
      const auto& p = *matched[i];
      const auto& pool = pools[i].pool;
      const auto [a, b] = nn::prepare_views<float>(p.scene, w.config);
      const auto feats = nn::compute_pair_features(a, b, w);
      io::ScoreRow& row = out.rows[i];
      row.pair_id = pools[i].pair_id;
      std::vector<nn::ScoreOutput> outs;
      for (std::size_t h = 0; h < pool.size(); ++h) {
        const auto s = nn::score_hypothesis(feats, pool.fundamental(h, p.scene.ka, p.scene.kb), w);
        outs.push_back(s);
        row.scores.push_back(-s.max());
        row.e_rot.push_back(s.e_rot);
        row.e_trans.push_back(s.e_trans);
      }
      row.selected = nn::select_hypothesis(outs);
    }
    return out;
  }

  parallel_for(pools.size(), [&](std::size_t i) {
    const auto& p = *matched[i];
    const auto& pool = pools[i].pool;
    io::ScoreRow& row = out.rows[i];
    row.pair_id = pools[i].pair_id;
    row.scores.resize(pool.size());
    std::vector<Correspondence> dense;
    if (opt.method == "oracle-sampson") dense = dense_gt(p.scene, opt.dense_step_px);
    for (std::size_t h = 0; h < pool.size(); ++h) {
      const Mat3 f = pool.fundamental(h, p.scene.ka, p.scene.kb);
      double v;
      if (opt.method == "oracle-pose") {
        v = -hypothesis_pose_error(pool.hypotheses[h], pool.kind, p.set.corrs, p.scene.ka,
                                   p.scene.kb, p.scene.gt_pose)
                 .max_deg();
      } else if (opt.method == "oracle-sampson") {
        OracleOptions oo;
        v = -oracle_score(f, dense, Criterion::sampson, oo).value;
      } else {
        v = score(f, p.set.corrs, score_method_from_string(opt.method), opt.threshold_px).value;
      }
      row.scores[h] = std::isnan(v) ? -kInf : v;
    }
    row.selected = select_best(row.scores);
  });
  return out;
}

std::vector<nn::TrainPair<float>> build_train_set(std::span<const io::PairRecord> pairs,
                                                  std::span<const io::PoolRecord> pools,
                                                  const nn::NetworkConfig& config) {
  const auto matched = match_pairs(pairs, pools);
  std::vector<nn::TrainPair<float>> out(pools.size());
  parallel_for(pools.size(), [&](std::size_t i) {
    const auto& p = *matched[i];
    out[i] = nn::make_train_pair<float>(p.scene, pools[i].pool, p.set.corrs, config);
  });
  return out;
}

std::vector<int> combined_selection(std::span<const io::PairRecord> pairs,
                                    std::span<const io::PoolRecord> pools,
                                    const io::ScoreFile& base, const io::ScoreFile& rescorer,
                                    FilterMode filter, int k) {
  const auto matched = match_pairs(pairs, pools);
  const auto b = align_scores(base, pools);
  const auto r = align_scores(rescorer, pools);
  std::vector<int> out(pools.size());
  for (std::size_t i = 0; i < pools.size(); ++i) {
    const int kk = k > 0 ? k : default_candidate_k(pools[i].pool.kind);
    const auto& rs = r[i]->scores;
    out[i] = combine_filter(filter, b[i]->scores,
                            [&](int h) { return -rs[static_cast<std::size_t>(h)]; },
                            static_cast<int>(matched[i]->set.corrs.size()), kk);
  }
  return out;
}

EvalReport run_eval(std::span<const io::PairRecord> pairs, std::span<const io::PoolRecord> pools,
                    std::span<const io::ScoreFile> scores, const io::ScoreFile* rescorer,
                    const EvalOptions& opt) {
  require(!pools.empty(), ErrorKind::empty_input, "evaluation over an empty pool set");
  require(!scores.empty(), ErrorKind::invalid_argument, "evaluation needs at least one score file");
  if (opt.filter != FilterMode::none)
    require(rescorer != nullptr, ErrorKind::invalid_argument, "a filter needs a rescorer");
  const auto matched = match_pairs(pairs, pools);

  std::vector<EvalPair> eval_pairs;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    const auto& p = *matched[i];
    eval_pairs.push_back({p.pair_id, p.set.corrs, p.scene.ka, p.scene.kb, p.scene.gt_pose,
                          &pools[i].pool});
  }

  std::vector<ScorerSelections> sels;
  for (const auto& f : scores) {
    ScorerSelections s;
    s.scorer = f.method;
    for (const auto* row : align_scores(f, pools)) {
      s.selected.push_back(select_best(row->scores));
      s.base_scores.push_back(row->scores);
    }
    sels.push_back(std::move(s));
  }
  if (opt.filter != FilterMode::none) {
    ScorerSelections s;
    s.scorer = scores.front().method + "+" + rescorer->method + ":" + std::string(to_string(opt.filter));
    s.selected = combined_selection(pairs, pools, scores.front(), *rescorer, opt.filter, opt.k);
    sels.push_back(std::move(s));
  }
  return evaluate(eval_pairs, sels, opt.config);
}

GradCheckFixture gradcheck_fixture(const nn::NetworkConfig& config, std::uint64_t seed) {
  GradCheckFixture fx;
  PairSpec spec;
  spec.outlier_rate = 0.3;
  for (std::uint64_t s = 0; s < 2; ++s) {
    const std::uint64_t item = derive_seed(seed, "grad-check-pair", s);
    const auto scene = generate_scene(spec, item);
    const auto set = sample_correspondences(scene, spec, item);
    const auto pool = generate_pool(set.corrs, 20, Solver::f7, item, scene.ka, scene.kb);
    fx.pairs.push_back(nn::make_train_pair<double>(scene, pool, set.corrs, config));
    fx.hypotheses.push_back(3 + s);
  }
  return fx;
}

namespace {

// Empty splits carry null statistics.
io::json split_json(const SplitSummary& s) {
  if (s.pairs == 0)
    return io::json{{"pairs", 0}, {"maa_r", nullptr}, {"maa_t", nullptr}, {"maa_max", nullptr},
                    {"median_r", nullptr}, {"median_t", nullptr}};
  return io::json{{"pairs", s.pairs},
                  {"maa_r", io::number(s.maa.r)},
                  {"maa_t", io::number(s.maa.t)},
                  {"maa_max", io::number(s.maa.max)},
                  {"median_r", io::number(s.median_r)},
                  {"median_t", io::number(s.median_t)}};
}

io::json histogram_json(std::span<const HistogramBin> bins) {
  io::json a = io::json::array();
  for (const auto& b : bins) a.push_back(io::json{{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}});
  return a;
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

io::json report_json(const EvalReport& report, const io::json& meta) {
  io::json scorers = io::json::array();
  for (const auto& s : report.scorers) {
    io::json failures = io::json::object();
    for (std::size_t c = 0; c < kFailureClasses.size(); ++c)
      failures[std::string(to_string(kFailureClasses[c]))] = io::number(s.failure_fractions[c]);
    scorers.push_back(io::json{{"scorer", s.scorer},
                               {"all", split_json(s.all)},
                               {"n_corrs_0_100", split_json(s.low)},
                               {"n_corrs_100_inf", split_json(s.high)},
                               {"failure_fractions", failures}});
  }
  return io::json{{"schema", "epi.report"},
                  {"version", io::kSchemaVersion},
                  {"meta", meta},
                  {"maa_max_deg", report.maa_max},
                  {"maa_threshold_step_deg", 1},
                  {"accuracy_rule", "error <= threshold"},
                  {"split_boundary", kSplitBoundary},
                  {"scorers", scorers},
                  {"modality", io::json{{"unimodal", report.unimodal}, {"multimodal", report.multimodal}}},
                  {"pool_rot_histogram", histogram_json(report.pool_rot_histogram)},
                  {"pool_trans_histogram", histogram_json(report.pool_trans_histogram)}};
}

std::string pairs_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "pair_id,scorer,selected_index,e_R,e_t,n_corrs,failure_class\n";
  for (const auto& s : report.scorers)
    for (const auto& r : s.pairs)
      os << r.pair_id << ',' << s.scorer << ',' << r.selected_index << ',' << fmt(r.error.rot_deg)
         << ',' << (r.error.trans_deg ? fmt(*r.error.trans_deg) : std::string("nan")) << ','
         << r.n_corrs << ',' << to_string(r.failure) << '\n';
  return os.str();
}

std::string histogram_csv(std::span<const HistogramBin> bins) {
  std::ostringstream os;
  os << "bin_lo,bin_hi,count\n";
  for (const auto& b : bins) os << fmt(b.lo) << ',' << fmt(b.hi) << ',' << b.count << '\n';
  return os.str();
}

}  // namespace epi::pipeline
