#include "epi/nn/train.h"

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <tuple>

#include "epi/metrics.h"

namespace epi::nn {

std::string to_string(LossKind kind) {
  return kind == LossKind::soft_l1 ? "soft-l1" : "weighted-ce";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "soft-l1") return LossKind::soft_l1;
  if (s == "weighted-ce") return LossKind::weighted_ce;
  fail(ErrorKind::invalid_argument, "unknown loss '" + s + "' (soft-l1|weighted-ce)");
}

int pose_error_bin(double max_deg) {
  if (!std::isfinite(max_deg) || max_deg < 0.0) return -1;
  for (std::size_t i = 1; i + 1 < kBinEdges.size(); ++i)
    if (max_deg < kBinEdges[i]) return static_cast<int>(i) - 1;
  return static_cast<int>(kBinEdges.size()) - 2;
}

BinSampler::BinSampler(std::span<const PoseError> errors) {
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].trans_deg) continue;
    const int b = pose_error_bin(errors[i].max_deg());
    if (b >= 0) bins_[static_cast<std::size_t>(b)].push_back(static_cast<int>(i));
  }
  for (std::size_t b = 0; b < bins_.size(); ++b)
    if (!bins_[b].empty()) non_empty_.push_back(static_cast<int>(b));
}

int BinSampler::sample(Rng& rng) const {
  require(!non_empty_.empty(), ErrorKind::empty_input, "no hypothesis with a defined pose error");
  const auto& bin = bins_[static_cast<std::size_t>(non_empty_[rng.uniform_index(non_empty_.size())])];
  return bin[rng.uniform_index(bin.size())];
}

template <typename U, typename T>
TrainPair<U> convert_pair(const TrainPair<T>& p) {
  TrainPair<U> out;
  out.a.pixels = p.a.pixels.template cast<U>();
  out.a.to_input = p.a.to_input;
  out.b.pixels = p.b.pixels.template cast<U>();
  out.b.to_input = p.b.to_input;
  out.hypotheses = p.hypotheses;
  out.errors = p.errors;
  return out;
}

template <typename T>
std::pair<PreparedImage<T>, PreparedImage<T>> prepare_views(const SyntheticScene& scene,
                                                            const NetworkConfig& config) {
  return {prepare_image<T>(render_view(scene, false, kRenderWidth, kRenderHeight), scene.width,
                           scene.height, config),
          prepare_image<T>(render_view(scene, true, kRenderWidth, kRenderHeight), scene.width,
                           scene.height, config)};
}

template <typename T>
TrainPair<T> make_train_pair(const SyntheticScene& scene, const HypothesisPool& pool,
                             std::span<const Correspondence> corrs, const NetworkConfig& config) {
  TrainPair<T> out;
  std::tie(out.a, out.b) = prepare_views<T>(scene, config);
  for (std::size_t i = 0; i < pool.size(); ++i)
    out.hypotheses.push_back(pool.fundamental(i, scene.ka, scene.kb));
  out.errors = pool_pose_errors(pool, corrs, scene.ka, scene.kb, scene.gt_pose);
  return out;
}

template <typename T>
double sample_loss(Weights<T>& w, const TrainPair<T>& pair, std::size_t hypothesis, LossKind loss,
                   double ce_weight, bool backward, double grad_scale,
                   std::vector<std::uint8_t>* branch_log) {
  require(hypothesis < pair.hypotheses.size() && pair.hypotheses.size() == pair.errors.size(),
          ErrorKind::invalid_argument, "hypothesis index out of range");
  const Mat3& f = pair.hypotheses[hypothesis];
  const Mat3 ff = feature_fundamental(f, pair.a.to_input, pair.b.to_input);
  Graph<T> g(backward);
  g.set_branch_log(branch_log);
  const Var fa = extract_features(g, w, g.input(pair.a.pixels));
  const Var fb = extract_features(g, w, g.input(pair.b.pixels));
  const auto [ta, tb] = transform_pair(g, w, fa, fb);
  const Var ia = epipolar_cross_attention(g, w, ta, tb, ff);
  const Var ib = epipolar_cross_attention(g, w, tb, ta, Mat3(ff.transpose()));
  const Var out = regress_pose_error(g, w, ia, ib);
  const auto& ov = g.value(out);
  const ScoreOutput pred{static_cast<double>(ov.data[0]), static_cast<double>(ov.data[1])};
  const PoseError& gt = pair.errors[hypothesis];
  const LossValue lv = loss == LossKind::soft_l1 ? loss_soft_l1(pred, gt, w.config.clamp_scale)
                                                 : loss_weighted_ce(pred, gt, ce_weight);
  if (branch_log) {
    if (loss == LossKind::soft_l1) {
      const double ts = w.config.clamp_scale;
      for (double d : {std::tanh(gt.rot_deg / ts) - std::tanh(pred.e_rot / ts),
                       std::tanh(gt.trans_deg.value_or(0.0) / ts) - std::tanh(pred.e_trans / ts)}) {
        branch_log->push_back(d > 0.0);
        branch_log->push_back(d < 0.0);
      }
    } else {
      const double f = confidence_from_errors(pred);
      branch_log->push_back(pred.e_rot >= pred.e_trans);
      branch_log->push_back(f < 1e-7);
      branch_log->push_back(f > 1.0 - 1e-7);
    }
  }
  if (backward) {
    Tensor<T> seed({2, 1});
    seed.data[0] = static_cast<T>(lv.d_rot * grad_scale);
    seed.data[1] = static_cast<T>(lv.d_trans * grad_scale);
    g.backward(out, seed);
  }
  return lv.value;
}

TrainResult train_toy(std::span<const TrainPair<float>> data, Weights<float> init,
                      const TrainHyper& hyper,
                      const std::function<void(const TrainLogRow&)>& progress) {
  require(!data.empty(), ErrorKind::empty_input, "empty training set");
  require(hyper.batch > 0 && hyper.steps >= 0 && hyper.lr > 0.0, ErrorKind::invalid_argument,
          "batch and learning rate must be positive");
  std::vector<BinSampler> samplers;
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < data.size(); ++i) {
    samplers.emplace_back(data[i].errors);
    if (samplers.back().non_empty() > 0) usable.push_back(i);
  }
  require(!usable.empty(), ErrorKind::empty_input, "no training pair has a defined pose error");

  TrainResult result;
  result.weights = std::move(init);
  auto& ps = result.weights.params;
  std::vector<std::vector<double>> velocity(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) velocity[i].assign(ps[i].value.size(), 0.0);

  for (int step = 0; step < hyper.steps; ++step) {
    Rng rng(derive_seed(hyper.seed, "train-batch", static_cast<std::uint64_t>(step)));
    ps.zero_grad();
    double loss = 0.0;
    for (int b = 0; b < hyper.batch; ++b) {
      const std::size_t p = usable[rng.uniform_index(usable.size())];
      const auto h = static_cast<std::size_t>(samplers[p].sample(rng));
      loss += sample_loss(result.weights, data[p], h, hyper.loss, hyper.ce_weight, true,
                          1.0 / hyper.batch);
    }
    loss /= hyper.batch;
    double sq = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (float gv : ps[i].grad.data) sq += static_cast<double>(gv) * gv;
    const TrainLogRow row{step, loss, std::sqrt(sq)};
    if (!std::isfinite(loss) || !std::isfinite(row.grad_norm))
      fail(ErrorKind::non_finite, "non-finite training loss at step " + std::to_string(step) +
                                      " (loss " + std::to_string(loss) + ", grad norm " +
                                      std::to_string(row.grad_norm) + ")");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& v = velocity[i];
      auto& p = ps[i];
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = hyper.momentum * v[j] - hyper.lr * p.grad.data[j];
        p.value.data[j] = static_cast<float>(p.value.data[j] + v[j]);
      }
    }
    result.log.push_back(row);
    if (progress) progress(row);
  }
  return result;
}

void write_training_log(std::ostream& os, std::span<const TrainLogRow> log) {
  os << "step,loss,grad_norm\n";
  os.precision(17);
  for (const auto& r : log) os << r.step << ',' << r.loss << ',' << r.grad_norm << '\n';
}

GradCheckReport grad_check(Weights<double>& w, std::span<const TrainPair<double>> pairs,
                           std::span<const std::size_t> hypotheses, const GradCheckOptions& opt) {
  require(!pairs.empty() && pairs.size() == hypotheses.size(), ErrorKind::invalid_argument,
          "grad_check needs one hypothesis index per pair");
  auto& ps = w.params;
  const double n = static_cast<double>(pairs.size());
  auto batch_loss = [&](bool backward, std::vector<std::uint8_t>* log) {
    double l = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      l += sample_loss(w, pairs[i], hypotheses[i], opt.loss, opt.ce_weight, backward, 1.0 / n, log);
    return l / n;
  };
  ps.zero_grad();
  std::vector<std::uint8_t> base;
  batch_loss(true, &base);

  struct Probe {
    std::size_t tensor, index;
    double analytic, numeric;
  };
  std::vector<Probe> probes;
  GradCheckReport rep;
  rep.tensors = ps.size();
  // An equal share of probes per tensor, at least one each.
  const std::size_t per = std::max<std::size_t>(
      1, (static_cast<std::size_t>(opt.min_params) + ps.size() - 1) / ps.size());
  std::vector<std::uint8_t> plus, minus;
  for (std::size_t t = 0; t < ps.size(); ++t) {
    Rng rng(derive_seed(opt.seed, "grad-check", t));
    const std::size_t sz = ps[t].value.size();
    const std::size_t want = std::min(per, sz);
    // Visit entries in a seeded random order until enough kink-free ones.
    const auto order = rng.sample_distinct(static_cast<int>(sz), static_cast<int>(std::min<std::size_t>(sz, want + 64)));
    std::size_t got = 0;
    for (int j : order) {
      if (got == want) break;
      double& x = ps[t].value.data[static_cast<std::size_t>(j)];
      const double x0 = x;
      // Shrink the step before giving up on an entry: early layers feed so
      // many units that some unit sits within 1e-5 of a kink for every entry.
      std::optional<double> numeric;
      for (int shrink = 0; shrink < 3 && !numeric; ++shrink) {
        const double h = opt.step * std::pow(0.1, shrink);
        plus.clear();
        minus.clear();
        x = x0 + h;
        const double lp = batch_loss(false, &plus);
        x = x0 - h;
        const double lm = batch_loss(false, &minus);
        x = x0;
        if (plus == base && minus == base) numeric = (lp - lm) / (2.0 * h);
      }
      if (!numeric) {
        ++rep.kink_redraws;
        continue;
      }
      probes.push_back({t, static_cast<std::size_t>(j), ps[t].grad.data[static_cast<std::size_t>(j)], *numeric});
      ++got;
    }
    if (got < want)
      fail(ErrorKind::indeterminate, "grad_check: tensor '" + ps[t].name +
                                         "' has too few entries away from kinks");
  }

  if (opt.sabotage) {
    const auto it = std::max_element(probes.begin(), probes.end(), [](const Probe& a, const Probe& b) {
      return std::abs(a.analytic) < std::abs(b.analytic);
    });
    it->analytic = -it->analytic;
  }
  rep.checked = probes.size();
  for (std::size_t k = 0; k < probes.size(); ++k) {
    const auto& p = probes[k];
    const double rel = std::abs(p.analytic - p.numeric) /
                       std::max({std::abs(p.analytic), std::abs(p.numeric), 1e-8});
    rep.max_abs_analytic = std::max(rep.max_abs_analytic, std::abs(p.analytic));
    if (rel > rep.max_rel_error || k == 0) {
      rep.max_rel_error = rel;
      rep.worst_param = ps[p.tensor].name;
      rep.worst_index = p.index;
      rep.worst_analytic = p.analytic;
      rep.worst_numeric = p.numeric;
    }
  }
  return rep;
}

template std::pair<PreparedImage<float>, PreparedImage<float>> prepare_views<float>(
    const SyntheticScene&, const NetworkConfig&);
template TrainPair<float> make_train_pair<float>(const SyntheticScene&, const HypothesisPool&,
                                                 std::span<const Correspondence>, const NetworkConfig&);
template TrainPair<double> make_train_pair<double>(const SyntheticScene&, const HypothesisPool&,
                                                   std::span<const Correspondence>, const NetworkConfig&);
template TrainPair<double> convert_pair<double, float>(const TrainPair<float>&);
template TrainPair<float> convert_pair<float, double>(const TrainPair<double>&);
template double sample_loss<float>(Weights<float>&, const TrainPair<float>&, std::size_t, LossKind,
                                   double, bool, double, std::vector<std::uint8_t>*);
template double sample_loss<double>(Weights<double>&, const TrainPair<double>&, std::size_t,
                                    LossKind, double, bool, double, std::vector<std::uint8_t>*);

}  // namespace epi::nn
