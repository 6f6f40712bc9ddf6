#include <doctest.h>

#include <algorithm>

#include "../common/synthetic.h"
#include "epi/error.h"
#include "epi/metrics.h"
#include "epi/scene.h"

using namespace epi;
using namespace epi::testing;

namespace {

// Brute force: every (error, threshold) pair checked individually.
double maa_oracle(const std::vector<double>& errors, int max_thresh) {
  std::uint64_t hits = 0;
  for (int t = 1; t <= max_thresh; ++t)
    for (double e : errors)
      if (std::isfinite(e) && e <= t) ++hits;
  return static_cast<double>(hits) / (static_cast<double>(errors.size()) * max_thresh);
}

struct PairFixture {
  SyntheticScene scene;
  CorrespondenceSet set;
  HypothesisPool pool;
  Mat3 gt_f;
};

PairFixture make_pair(std::uint64_t seed, std::size_t pool_size, double outliers = 0.3) {
  PairFixture p;
  p.scene = generate_scene(PairSpec{}, seed);
  PairSpec spec;
  spec.outlier_rate = outliers;
  spec.n_corrs_min = spec.n_corrs_max = 150;
  p.set = sample_correspondences(p.scene, spec, seed);
  p.pool = generate_pool(p.set.corrs, pool_size, Solver::f7, seed, p.scene.ka, p.scene.kb);
  p.gt_f = compose_fundamental(p.scene.ka, p.scene.kb, p.scene.gt_pose).matrix();
  return p;
}

}  // namespace

TEST_CASE("maa") {
  CHECK(maa(std::vector<double>(7, 0.0)) == 1.0);
  CHECK(maa(std::vector<double>(7, 180.0)) == 0.0);
  CHECK(maa(std::vector<double>{5.0}, 10.0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(maa(std::vector<double>{1.0}, 10.0) == 1.0);  // accuracy uses <=
  CHECK(maa(std::vector<double>{std::numeric_limits<double>::infinity(), 0.0}) == 0.5);
  CHECK(maa(std::vector<double>{std::nan(""), 0.0}) == 0.5);
  CHECK_THROWS_AS(maa(std::vector<double>{}), Error);

  SUBCASE("matches brute-force enumeration exactly") {
    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<double> errs(static_cast<std::size_t>(rng.uniform_int(1, 60)));
      for (auto& e : errs) {
        const double u = rng.uniform();
        e = u < 0.1 ? static_cast<double>(rng.uniform_int(0, 12)) : rng.uniform(0.0, 20.0);
      }
      CHECK(maa(errs, 10.0) == maa_oracle(errs, 10));
    }
  }
  SUBCASE("monotone in the threshold and order invariant") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> errs(20);
      for (auto& e : errs) e = rng.uniform(0.0, 30.0);
      double prev = 0.0;
      for (int m = 1; m <= 30; ++m) {
        const double v = maa(errs, m);
        CHECK(v >= prev);
        prev = v;
      }
      auto shuffled = errs;
      std::reverse(shuffled.begin(), shuffled.end());
      CHECK(maa(shuffled) == maa(errs));
    }
  }
}

TEST_CASE("median") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(median({1.0, std::numeric_limits<double>::infinity()}) == std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(median({}), Error);
}

TEST_CASE("hypothesis_pose_error") {
  const auto p = make_pair(1, 20);
  const auto gt = hypothesis_pose_error(canonicalize(p.gt_f), ModelKind::fundamental, p.set.corrs,
                                        p.scene.ka, p.scene.kb, p.scene.gt_pose);
  CHECK(gt.max_deg() < 1e-6);
  const Mat3 e = compose_essential(p.scene.gt_pose).matrix();
  const auto ge = hypothesis_pose_error(e, ModelKind::essential, p.set.corrs, p.scene.ka,
                                        p.scene.kb, p.scene.gt_pose);
  CHECK(ge.max_deg() < 1e-6);

  HypothesisPool pool = p.pool;
  inject_hypothesis(pool, p.gt_f, 7);
  CHECK(pool.size() == 21);
  CHECK(pool.provenance[7].empty());
  CHECK(pool_pose_errors(pool, p.set.corrs, p.scene.ka, p.scene.kb, p.scene.gt_pose)[7].max_deg() <
        1e-6);
}

TEST_CASE("classify_failure") {
  auto never = [] { return false; };
  SUBCASE("precedence") {
    const std::vector<double> errs{30.0, 2.0, 50.0};
    CHECK(classify_failure(errs, 1, never) == FailureClass::selected_good);
    CHECK(classify_failure(errs, 0, never) == FailureClass::scoring_failure);
    CHECK(classify_failure(errs, 0, [] { return true; }) == FailureClass::degenerate);
    const std::vector<double> bad{30.0, 12.0, 50.0};
    CHECK(classify_failure(bad, 0, [] { return true; }) == FailureClass::pre_scoring_failure);
    CHECK_THROWS_AS(classify_failure(errs, 3, never), Error);
  }
  SUBCASE("permuting non-selected members keeps the class") {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> errs(10);
      for (auto& e : errs) e = rng.uniform(0.0, 40.0);
      const int sel = rng.uniform_int(0, 9);
      const bool degen = rng.uniform() < 0.5;
      const auto c0 = classify_failure(errs, sel, [&] { return degen; });
      auto perm = errs;
      std::swap(perm[static_cast<std::size_t>(sel)], perm[0]);
      std::reverse(perm.begin() + 1, perm.end());
      CHECK(classify_failure(perm, 0, [&] { return degen; }) == c0);
    }
  }
  SUBCASE("selected ground truth is good") {
    auto p = make_pair(2, 30);
    inject_hypothesis(p.pool, p.gt_f, 0);
    CHECK(classify_failure(p.pool, 0, p.scene.gt_pose, p.set.corrs, p.scene.ka, p.scene.kb, 1.0) ==
          FailureClass::selected_good);
  }
  SUBCASE("pool of random matrices is a pre-scoring failure") {
    const auto p = make_pair(3, 5);
    Rng rng(11);
    HypothesisPool pool;
    for (int i = 0; i < 30; ++i) {
      Mat3 m;
      for (int k = 0; k < 9; ++k) m(k / 3, k % 3) = rng.normal();
      pool.hypotheses.push_back(canonicalize(project_rank2(m)));
      pool.provenance.emplace_back();
    }
    const auto errs = pool_pose_errors(pool, p.set.corrs, p.scene.ka, p.scene.kb, p.scene.gt_pose);
    REQUIRE(std::all_of(errs.begin(), errs.end(), [](const PoseError& e) { return e.max_deg() >= 10.0; }));
    CHECK(classify_failure(pool, 4, p.scene.gt_pose, p.set.corrs, p.scene.ka, p.scene.kb, 1.0) ==
          FailureClass::pre_scoring_failure);
  }
  SUBCASE("planar-degenerate selection") {
    // Every point of one plane satisfies [e']x H for any epipole e', so such
    // a model has full support yet the wrong pose.
    Rng rng(5);
    const auto pose = random_pose(rng);
    const auto k = random_intrinsics(rng);
    const Vec3 n(0.1, -0.2, 1.0);
    const double d = 5.0;
    const Mat3 h = k.matrix() * (pose.rotation + pose.translation * n.transpose() / d) * k.inverse();
    std::vector<Correspondence> corrs;
    for (int i = 0; i < 120; ++i) {
      const Vec2 pa(rng.uniform(0, 640), rng.uniform(0, 480));
      const Vec3 q = h * homogeneous(pa);
      corrs.push_back({pa, q.head<2>() / q.z()});
    }
    const Mat3 gt_f = compose_fundamental(k, k, pose).matrix();
    const Mat3 wrong = skew(Vec3(-800.0, 2000.0, 1.0)) * h;
    HypothesisPool pool;
    pool.hypotheses = {canonicalize(gt_f), canonicalize(project_rank2(wrong))};
    pool.provenance.resize(2);
    const auto errs = pool_pose_errors(pool, corrs, k, k, pose);
    REQUIRE(errs[0].max_deg() < 1e-6);
    REQUIRE(errs[1].max_deg() >= 10.0);
    CHECK(classify_failure(pool, 1, pose, corrs, k, k, 1.0) == FailureClass::degenerate);
  }
}

TEST_CASE("combine_filter") {
  const std::vector<double> base{3.0, 9.0, 9.0, 1.0, 7.0, 8.0};
  const std::vector<double> cost{5.0, 4.0, 6.0, 0.0, 1.0, 2.0};
  auto r = [&](int i) { return cost[static_cast<std::size_t>(i)]; };

  CHECK(top_k(base, 3) == std::vector<int>{1, 2, 5});
  CHECK(top_k(base, 100).size() == base.size());
  CHECK(combine_filter(FilterMode::candidate, base, r, 50, 1) == select_best(base));
  CHECK(combine_filter(FilterMode::candidate, base, r, 50, 3) == 5);
  CHECK(combine_filter(FilterMode::candidate, base, r, 50, 6) == select_min(cost));
  CHECK(combine_filter(FilterMode::candidate, base, r, 50, 60) == select_min(cost));
  CHECK(combine_filter(FilterMode::corresp, base, r, 99, 10) == 3);
  CHECK(combine_filter(FilterMode::corresp, base, r, 100, 10) == 1);
  CHECK(combine_filter(FilterMode::none, base, r, 10, 10) == 1);
  CHECK_THROWS_AS(combine_filter(FilterMode::candidate, base, r, 50, 0), Error);
  CHECK(select_min(std::vector<double>{2.0, 1.0, 1.0}) == 1);

  SUBCASE("rescorer only sees the candidates") {
    int calls = 0;
    combine_filter(FilterMode::candidate, base, [&](int i) { ++calls; return r(i); }, 50, 2);
    CHECK(calls == 2);
  }
  SUBCASE("oracle rescorer never loses to the base selection") {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> b(40), truth(40);
      for (std::size_t i = 0; i < b.size(); ++i) {
        b[i] = rng.uniform_int(0, 20);
        truth[i] = rng.uniform(0, 90);
      }
      auto oracle = [&](int i) { return truth[static_cast<std::size_t>(i)]; };
      const int base_sel = select_best(b);
      for (int k : {1, 5, 10, 40}) {
        const int sel = combine_filter(FilterMode::candidate, b, oracle, 50, k);
        CHECK(truth[static_cast<std::size_t>(sel)] <= truth[static_cast<std::size_t>(base_sel)]);
      }
    }
  }
}

TEST_CASE("modality_analysis") {
  Rng rng(14);
  const auto pose = random_pose(rng);
  const auto ka = random_intrinsics(rng);
  const auto kb = random_intrinsics(rng);
  const auto corrs = random_correspondences(rng, pose, ka, kb, 60);
  const Mat3 f = compose_fundamental(ka, kb, pose).matrix();

  SUBCASE("five copies") {
    const std::vector<Mat3> top(5, f);
    const auto res = modality_analysis(top, ModelKind::fundamental, corrs, ka, kb);
    CHECK(res.modality == Modality::unimodal);
    CHECK(res.max_distance < 1e-6);
  }
  SUBCASE("one member rotated by 90 degrees") {
    std::vector<Mat3> top;
    for (int i = 0; i < 4; ++i) {
      RelativePose p = pose;
      p.rotation = axis_angle(random_unit(rng), 0.5) * pose.rotation;
      top.push_back(compose_fundamental(ka, kb, p).matrix());
    }
    RelativePose far = pose;
    far.rotation = axis_angle(Vec3::UnitY(), 90.0) * pose.rotation;
    top.push_back(compose_fundamental(ka, kb, far).matrix());
    const auto res = modality_analysis(top, ModelKind::fundamental, corrs, ka, kb);
    CHECK(res.modality == Modality::multimodal);
  }
  SUBCASE("matches an all-pairs recomputation") {
    for (int trial = 0; trial < 30; ++trial) {
      const double spread = rng.uniform(0.0, 20.0);
      std::vector<Mat3> top;
      std::vector<RelativePose> poses;
      for (int i = 0; i < 5; ++i) {
        RelativePose p = pose;
        p.rotation = axis_angle(random_unit(rng), rng.uniform(0.0, spread)) * pose.rotation;
        p.translation = (pose.translation + rng.uniform(0.0, 0.2) * random_unit(rng)).eval();
        top.push_back(compose_fundamental(ka, kb, p).matrix());
        poses.push_back(p);
      }
      const auto res = modality_analysis(top, ModelKind::fundamental, corrs, ka, kb);
      if (!res.excluded.empty()) continue;
      // Independent recomputation from the decomposed poses.
      std::vector<RelativePose> dec;
      for (const auto& m : top)
        dec.push_back(decompose_essential(
            to_essential(FundamentalMatrix::from_matrix(m), ka, kb), corrs, ka, kb));
      double mx = 0.0, mn = 1e9;
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
          if (i == j) continue;
          const double d = std::max(rotation_angle_deg(dec[i].rotation, dec[j].rotation),
                                    direction_angle_deg(dec[i].translation, dec[j].translation));
          mx = std::max(mx, d);
          mn = std::min(mn, d);
        }
      CHECK(res.max_distance == doctest::Approx(mx).epsilon(1e-12));
      CHECK((res.modality == Modality::unimodal) == (mx < 10.0));
      const auto diff = modality_analysis(top, ModelKind::fundamental, corrs, ka, kb,
                                          ModalityRule::min_max_difference);
      CHECK((diff.modality == Modality::multimodal) == (mx - mn > 10.0));
    }
  }
}

TEST_CASE("spearman") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  CHECK(spearman(x, std::vector<double>{2, 4, 6, 8, 10}) == doctest::Approx(1.0));
  CHECK(spearman(x, std::vector<double>{5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
  // Ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4): rho = 4.5 / sqrt(4.5 * 5).
  CHECK(spearman(std::vector<double>{1, 2, 2, 3}, std::vector<double>{1, 2, 3, 4}) ==
        doctest::Approx(4.5 / std::sqrt(4.5 * 5.0)));
  CHECK(spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}) == 0.0);
  CHECK_THROWS_AS(spearman(x, std::vector<double>{1, 2}), Error);
}

TEST_CASE("histogram") {
  const std::vector<double> v{0.0, 4.99, 5.0, 179.0, 180.0, std::numeric_limits<double>::infinity()};
  const auto h = histogram(v);
  CHECK(h.size() == 36);
  CHECK(h[0].count == 2);
  CHECK(h[1].count == 1);
  CHECK(h.back().count == 3);
  std::size_t total = 0;
  for (const auto& b : h) total += b.count;
  CHECK(total == v.size());
}

TEST_CASE("evaluate") {
  std::vector<PairFixture> fixtures;
  for (std::uint64_t s = 0; s < 6; ++s) {
    fixtures.push_back(make_pair(40 + s, 40));
    inject_hypothesis(fixtures.back().pool, fixtures.back().gt_f, s * 3);
  }
  std::vector<EvalPair> pairs;
  for (std::size_t i = 0; i < fixtures.size(); ++i) {
    const auto& f = fixtures[i];
    pairs.push_back({"p" + std::to_string(i), f.set.corrs, f.scene.ka, f.scene.kb,
                     f.scene.gt_pose, &f.pool});
  }
  ScorerSelections oracle{"oracle-pose", {}, {}};
  ScorerSelections ransac{"ransac", {}, {}};
  for (const auto& f : fixtures) {
    const auto errs = pool_pose_errors(f.pool, f.set.corrs, f.scene.ka, f.scene.kb, f.scene.gt_pose);
    std::vector<double> cost;
    for (const auto& e : errs) cost.push_back(e.max_deg());
    oracle.selected.push_back(select_min(cost));
    std::vector<double> vals;
    for (std::size_t h = 0; h < f.pool.size(); ++h)
      vals.push_back(score(f.pool.hypotheses[h], f.set.corrs, ScoreMethod::ransac, 1.0).value);
    ransac.selected.push_back(select_best(vals));
    ransac.base_scores.push_back(vals);
  }
  const std::vector<ScorerSelections> scorers{ransac, oracle};
  const auto report = evaluate(pairs, scorers, {});
  REQUIRE(report.scorers.size() == 2);
  const auto& orep = report.scorers[1];
  CHECK(orep.failure_fractions[0] == 1.0);
  for (const auto& sr : report.scorers) {
    double sum = 0.0;
    for (double f : sr.failure_fractions) sum += f;
    CHECK(sum == 1.0);
    std::vector<double> col;
    for (const auto& row : sr.pairs) col.push_back(row.error.max_deg());
    CHECK(sr.all.maa.max == maa_oracle(col, 10));
    CHECK(sr.low.pairs + sr.high.pairs == sr.pairs.size());
  }
  CHECK(report.unimodal + report.multimodal <= pairs.size());
  std::size_t hist_total = 0;
  for (const auto& b : report.pool_rot_histogram) hist_total += b.count;
  CHECK(hist_total == 6 * 41);

  SUBCASE("mismatched selections") {
    ScorerSelections bad{"x", {0}, {}};
    CHECK_THROWS_AS(evaluate(pairs, std::vector<ScorerSelections>{bad}, {}), Error);
    CHECK_THROWS_AS(evaluate({}, scorers, {}), Error);
  }
}
