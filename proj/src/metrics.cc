#include "epi/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "epi/error.h"
#include "epi/parallel.h"

namespace epi {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double finite_or_inf(double v) { return std::isfinite(v) ? v : kInf; }

}  // namespace

double maa(std::span<const double> errors, double max_thresh) {
  require(!errors.empty(), ErrorKind::empty_input, "mAA of an empty error list");
  require(std::isfinite(max_thresh) && max_thresh >= 1.0, ErrorKind::invalid_argument,
          "mAA maximum threshold must be at least 1 degree");
  std::vector<double> sorted(errors.size());
  std::transform(errors.begin(), errors.end(), sorted.begin(), finite_or_inf);
  std::sort(sorted.begin(), sorted.end());
  const int n_thresh = static_cast<int>(std::floor(max_thresh));
  // Integer accumulation keeps the result independent of summation order.
  std::uint64_t hits = 0;
  for (int t = 1; t <= n_thresh; ++t)
    hits += static_cast<std::uint64_t>(
        std::upper_bound(sorted.begin(), sorted.end(), static_cast<double>(t)) - sorted.begin());
  return static_cast<double>(hits) /
         (static_cast<double>(errors.size()) * static_cast<double>(n_thresh));
}

double median(std::vector<double> values) {
  require(!values.empty(), ErrorKind::empty_input, "median of an empty list");
  for (double& v : values) v = finite_or_inf(v);
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  const double a = values[n / 2 - 1], b = values[n / 2];
  if (!std::isfinite(a) || !std::isfinite(b)) return std::isfinite(a) ? b : a;
  return 0.5 * (a + b);
}

PoseError hypothesis_pose_error(const Mat3& model, ModelKind kind,
                                std::span<const Correspondence> corrs,
                                const CameraIntrinsics& ka, const CameraIntrinsics& kb,
                                const RelativePose& gt) {
  try {
    const EssentialMatrix e = kind == ModelKind::essential
                                  ? EssentialMatrix::from_matrix(model)
                                  : to_essential(FundamentalMatrix::from_matrix(model), ka, kb);
    return pose_error(decompose_essential(e, corrs, ka, kb), gt);
  } catch (const Error& err) {
    if (err.kind() != ErrorKind::undecidable && err.kind() != ErrorKind::degenerate) throw;
    PoseError bad;
    bad.rot_deg = kInf;
    return bad;
  }
}

std::vector<PoseError> pool_pose_errors(const HypothesisPool& pool,
                                        std::span<const Correspondence> corrs,
                                        const CameraIntrinsics& ka, const CameraIntrinsics& kb,
                                        const RelativePose& gt) {
  std::vector<PoseError> out(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i)
    out[i] = hypothesis_pose_error(pool.hypotheses[i], pool.kind, corrs, ka, kb, gt);
  return out;
}

void inject_hypothesis(HypothesisPool& pool, const Mat3& model, std::size_t position) {
  require(position <= pool.size(), ErrorKind::invalid_argument, "injection position out of range");
  const Mat3 m = pool.kind == ModelKind::essential ? project_essential(model) : project_rank2(model);
  pool.hypotheses.insert(pool.hypotheses.begin() + static_cast<std::ptrdiff_t>(position),
                         canonicalize(m));
  pool.provenance.insert(pool.provenance.begin() + static_cast<std::ptrdiff_t>(position),
                         std::vector<int>{});
}

std::string_view to_string(FailureClass c) {
  switch (c) {
    case FailureClass::selected_good: return "SELECTED_GOOD";
    case FailureClass::scoring_failure: return "SCORING_FAILURE";
    case FailureClass::pre_scoring_failure: return "PRE_SCORING_FAILURE";
    case FailureClass::degenerate: return "DEGENERATE";
  }
  return "?";
}

FailureClass failure_class_from_string(std::string_view s) {
  for (auto c : kFailureClasses)
    if (to_string(c) == s) return c;
  fail(ErrorKind::parse, "unknown failure class '" + std::string(s) + "'");
}

FailureClass classify_failure(std::span<const double> pool_max_errors, int selected,
                              const std::function<bool()>& selected_degenerate) {
  require(selected >= 0 && static_cast<std::size_t>(selected) < pool_max_errors.size(),
          ErrorKind::invalid_argument, "selected index outside the pool");
  if (pool_max_errors[static_cast<std::size_t>(selected)] < kGoodPoseDeg)
    return FailureClass::selected_good;
  const bool any_good = std::any_of(pool_max_errors.begin(), pool_max_errors.end(),
                                    [](double e) { return e < kGoodPoseDeg; });
  if (!any_good) return FailureClass::pre_scoring_failure;
  if (selected_degenerate()) return FailureClass::degenerate;
  return FailureClass::scoring_failure;
}

FailureClass classify_failure(const HypothesisPool& pool, int selected, const RelativePose& gt,
                              std::span<const Correspondence> corrs, const CameraIntrinsics& ka,
                              const CameraIntrinsics& kb, double threshold_px) {
  std::vector<double> errs(pool.size());
  const auto pe = pool_pose_errors(pool, corrs, ka, kb, gt);
  for (std::size_t i = 0; i < pe.size(); ++i) errs[i] = pe[i].max_deg();
  return classify_failure(errs, selected, [&] {
    const Mat3 f = pool.fundamental(static_cast<std::size_t>(selected), ka, kb);
    return degeneracy_check(f, corrs, threshold_px).homography_degenerate;
  });
}

std::string_view to_string(FilterMode m) {
  switch (m) {
    case FilterMode::none: return "none";
    case FilterMode::corresp: return "corresp";
    case FilterMode::candidate: return "candidate";
  }
  return "?";
}

FilterMode filter_mode_from_string(std::string_view s) {
  for (auto m : {FilterMode::none, FilterMode::corresp, FilterMode::candidate})
    if (to_string(m) == s) return m;
  fail(ErrorKind::invalid_argument, "unknown filter '" + std::string(s) + "'");
}

std::vector<int> top_k(std::span<const double> base_scores, int k) {
  require(k > 0, ErrorKind::invalid_argument, "k must be positive");
  std::vector<int> idx(base_scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t kk = std::min(base_scores.size(), static_cast<std::size_t>(k));
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(),
                    [&](int a, int b) {
                      const double va = base_scores[static_cast<std::size_t>(a)];
                      const double vb = base_scores[static_cast<std::size_t>(b)];
                      return va != vb ? va > vb : a < b;
                    });
  idx.resize(kk);
  return idx;
}

int select_min(std::span<const double> costs) {
  require(!costs.empty(), ErrorKind::empty_input, "selection over an empty pool");
  int best = 0;
  for (std::size_t i = 1; i < costs.size(); ++i)
    if (costs[i] < costs[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

int combine_filter(FilterMode mode, std::span<const double> base_scores,
                   const std::function<double(int)>& rescorer_cost, int n_corrs, int k) {
  require(!base_scores.empty(), ErrorKind::empty_input, "selection over an empty pool");
  auto rescore_min = [&](std::vector<int> candidates) {
    std::sort(candidates.begin(), candidates.end());
    int best = candidates.front();
    double best_cost = rescorer_cost(best);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
      const double c = rescorer_cost(candidates[i]);
      if (c < best_cost) {
        best_cost = c;
        best = candidates[i];
      }
    }
    return best;
  };
  switch (mode) {
    case FilterMode::none: return select_best(base_scores);
    case FilterMode::corresp: {
      if (n_corrs >= kSplitBoundary) return select_best(base_scores);
      std::vector<int> all(base_scores.size());
      std::iota(all.begin(), all.end(), 0);
      return rescore_min(std::move(all));
    }
    case FilterMode::candidate: return rescore_min(top_k(base_scores, k));
  }
  return -1;
}

std::string_view to_string(Modality m) {
  return m == Modality::unimodal ? "UNIMODAL" : "MULTIMODAL";
}

double pose_distance_deg(const RelativePose& a, const RelativePose& b) {
  return std::max(rotation_angle_deg(a.rotation, b.rotation),
                  direction_angle_deg(a.translation, b.translation));
}

ModalityResult modality_analysis(std::span<const Mat3> top, ModelKind kind,
                                 std::span<const Correspondence> corrs, const CameraIntrinsics& ka,
                                 const CameraIntrinsics& kb, ModalityRule rule) {
  ModalityResult res;
  std::vector<RelativePose> poses;
  for (std::size_t i = 0; i < top.size(); ++i) {
    try {
      const EssentialMatrix e = kind == ModelKind::essential
                                    ? EssentialMatrix::from_matrix(top[i])
                                    : to_essential(FundamentalMatrix::from_matrix(top[i]), ka, kb);
      poses.push_back(decompose_essential(e, corrs, ka, kb));
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::undecidable && err.kind() != ErrorKind::degenerate) throw;
      res.excluded.push_back(static_cast<int>(i));
    }
  }
  if (poses.size() < 2) return res;
  res.min_distance = kInf;
  for (std::size_t i = 0; i < poses.size(); ++i)
    for (std::size_t j = i + 1; j < poses.size(); ++j) {
      const double d = pose_distance_deg(poses[i], poses[j]);
      res.min_distance = std::min(res.min_distance, d);
      res.max_distance = std::max(res.max_distance, d);
    }
  const bool multi = rule == ModalityRule::max_pairwise
                         ? !(res.max_distance < kGoodPoseDeg)
                         : res.max_distance - res.min_distance > kGoodPoseDeg;
  res.modality = multi ? Modality::multimodal : Modality::unimodal;
  return res;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<int> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return v[static_cast<std::size_t>(a)] < v[static_cast<std::size_t>(b)];
  });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() &&
           v[static_cast<std::size_t>(idx[j + 1])] == v[static_cast<std::size_t>(idx[i])])
      ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[static_cast<std::size_t>(idx[k])] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::invalid_argument,
          "spearman needs two equally long lists of at least two values");
  for (double v : x) require(!std::isnan(v), ErrorKind::non_finite, "NaN in rank correlation");
  for (double v : y) require(!std::isnan(v), ErrorKind::non_finite, "NaN in rank correlation");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = 0.5 * (n + 1.0);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<HistogramBin> histogram(std::span<const double> values, double bin_width,
                                    double max_value) {
  require(bin_width > 0.0 && max_value > 0.0, ErrorKind::invalid_argument,
          "histogram bins must be positive");
  const auto n_bins = static_cast<std::size_t>(std::ceil(max_value / bin_width));
  std::vector<HistogramBin> bins(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    bins[b].lo = static_cast<double>(b) * bin_width;
    bins[b].hi = std::min(max_value, static_cast<double>(b + 1) * bin_width);
  }
  for (double v : values) {
    std::size_t b = n_bins - 1;
    if (std::isfinite(v) && v < max_value)
      b = std::min(n_bins - 1, static_cast<std::size_t>(std::max(0.0, v) / bin_width));
    ++bins[b].count;
  }
  return bins;
}

SplitSummary summarize(std::span<const PairOutcome> rows, double maa_max) {
  SplitSummary s;
  s.pairs = rows.size();
  if (rows.empty()) return s;
  std::vector<double> r, t, m;
  for (const auto& row : rows) {
    r.push_back(row.error.rot_deg);
    t.push_back(row.error.trans_deg ? *row.error.trans_deg : kInf);
    m.push_back(row.error.max_deg());
  }
  s.maa = {maa(r, maa_max), maa(t, maa_max), maa(m, maa_max)};
  s.median_r = median(r);
  s.median_t = median(t);
  return s;
}

EvalReport evaluate(std::span<const EvalPair> pairs, std::span<const ScorerSelections> scorers,
                    const EvalConfig& config) {
  require(!pairs.empty(), ErrorKind::empty_input, "evaluation over an empty pair set");
  for (const auto& p : pairs)
    require(p.pool != nullptr && p.pool->size() > 0, ErrorKind::invalid_argument,
            "every evaluated pair needs a non-empty pool");
  for (const auto& s : scorers)
    require(s.selected.size() == pairs.size(), ErrorKind::invalid_argument,
            "scorer selections do not match the pair list");

  EvalReport report;
  report.maa_max = config.maa_max;

  std::vector<std::vector<PoseError>> pool_errors(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    const auto& p = pairs[i];
    pool_errors[i] = pool_pose_errors(*p.pool, p.corrs, p.ka, p.kb, p.gt);
  });

  std::vector<double> all_rot, all_trans;
  for (const auto& errs : pool_errors)
    for (const auto& e : errs) {
      all_rot.push_back(e.rot_deg);
      all_trans.push_back(e.trans_deg ? *e.trans_deg : kInf);
    }
  report.pool_rot_histogram = histogram(all_rot);
  report.pool_trans_histogram = histogram(all_trans);

  for (const auto& sel : scorers) {
    ScorerReport sr;
    sr.scorer = sel.scorer;
    sr.pairs.resize(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) {
      const auto& p = pairs[i];
      const int idx = sel.selected[i];
      require(idx >= 0 && static_cast<std::size_t>(idx) < p.pool->size(),
              ErrorKind::invalid_argument, "selected index outside the pool");
      PairOutcome& row = sr.pairs[i];
      row.pair_id = p.pair_id;
      row.selected_index = idx;
      row.n_corrs = static_cast<int>(p.corrs.size());
      const auto ui = static_cast<std::size_t>(idx);
      row.error = pool_errors[i][ui];
      if (config.refine) {
        const auto ref = refine(p.pool->hypotheses[ui], p.pool->kind, p.corrs,
                                config.threshold_px, p.ka, p.kb);
        if (ref.accepted)
          row.error = hypothesis_pose_error(ref.model, p.pool->kind, p.corrs, p.ka, p.kb, p.gt);
      }
      std::vector<double> maxes(pool_errors[i].size());
      for (std::size_t h = 0; h < maxes.size(); ++h) maxes[h] = pool_errors[i][h].max_deg();
      // The class follows the refined error only for the selected-good test.
      if (row.error.max_deg() < kGoodPoseDeg) {
        row.failure = FailureClass::selected_good;
      } else {
        maxes[ui] = std::max(maxes[ui], kGoodPoseDeg);
        row.failure = classify_failure(maxes, idx, [&] {
          return degeneracy_check(p.pool->fundamental(ui, p.ka, p.kb), p.corrs,
                                  config.threshold_px)
              .homography_degenerate;
        });
      }
    });

    std::vector<PairOutcome> low, high;
    std::array<std::size_t, 4> counts{};
    for (const auto& row : sr.pairs) {
      (row.n_corrs < kSplitBoundary ? low : high).push_back(row);
      for (std::size_t c = 0; c < kFailureClasses.size(); ++c)
        if (kFailureClasses[c] == row.failure) ++counts[c];
    }
    sr.all = summarize(sr.pairs, config.maa_max);
    sr.low = summarize(low, config.maa_max);
    sr.high = summarize(high, config.maa_max);
    // The last fraction is the complement so the four always sum to 1.
    double acc = 0.0;
    for (std::size_t c = 0; c + 1 < counts.size(); ++c) {
      sr.failure_fractions[c] =
          static_cast<double>(counts[c]) / static_cast<double>(sr.pairs.size());
      acc += sr.failure_fractions[c];
    }
    sr.failure_fractions.back() = 1.0 - acc;
    report.scorers.push_back(std::move(sr));
  }

  // Modality of the first scorer's top-k, when it carries base scores.
  if (!scorers.empty() && scorers.front().base_scores.size() == pairs.size()) {
    std::vector<int> kinds(pairs.size(), -1);
    parallel_for(pairs.size(), [&](std::size_t i) {
      const auto& p = pairs[i];
      const auto idx = top_k(scorers.front().base_scores[i], static_cast<int>(config.modality_k));
      if (idx.size() < 2) return;
      std::vector<Mat3> top;
      for (int h : idx) top.push_back(p.pool->hypotheses[static_cast<std::size_t>(h)]);
      kinds[i] = static_cast<int>(
          modality_analysis(top, p.pool->kind, p.corrs, p.ka, p.kb, config.modality_rule).modality);
    });
    for (int k : kinds) {
      if (k == static_cast<int>(Modality::unimodal)) ++report.unimodal;
      if (k == static_cast<int>(Modality::multimodal)) ++report.multimodal;
    }
  }
  return report;
}

}  // namespace epi
