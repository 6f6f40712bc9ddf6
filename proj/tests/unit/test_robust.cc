#include <doctest.h>

#include <algorithm>

#include "../common/synthetic.h"
#include "epi/error.h"
#include "epi/error_criteria.h"
#include "epi/robust.h"

using namespace epi;
using namespace epi::testing;

namespace {

struct Setup {
  RelativePose pose;
  CameraIntrinsics ka, kb;
  std::vector<Correspondence> clean;
  std::vector<Correspondence> noisy;  // clean + noise + outliers
};

Setup make_setup(std::uint64_t seed, int n, double noise, double outlier_rate) {
  Rng rng(seed);
  Setup s;
  s.pose = random_pose(rng);
  s.ka = {500, 500, 320, 240};
  s.kb = s.ka;
  s.clean = random_correspondences(rng, s.pose, s.ka, s.kb, n);
  s.noisy = s.clean;
  const int outliers = static_cast<int>(std::lround(outlier_rate * n));
  for (int i = 0; i < n; ++i) {
    auto& c = s.noisy[static_cast<size_t>(i)];
    if (i < outliers) {
      c.pb = Vec2(rng.uniform(0, 640), rng.uniform(0, 480));
    } else {
      c.pa += noise * Vec2(rng.normal(), rng.normal());
      c.pb += noise * Vec2(rng.normal(), rng.normal());
    }
  }
  return s;
}

double mean_sampson(const Mat3& f, const std::vector<Correspondence>& corrs) {
  double s = 0;
  for (const auto& c : corrs) s += sampson_error(f, c.pa, c.pb);
  return s / static_cast<double>(corrs.size());
}

}  // namespace

TEST_CASE("generate_pool") {
  const auto s = make_setup(1, 200, 1.0, 0.3);
  SUBCASE("deterministic and exact size") {
    const auto a = generate_pool(s.noisy, 500, Solver::f7, 42, s.ka, s.kb);
    const auto b = generate_pool(s.noisy, 500, Solver::f7, 42, s.ka, s.kb);
    REQUIRE(a.size() == 500);
    REQUIRE(b.size() == 500);
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(std::memcmp(a.hypotheses[i].data(), b.hypotheses[i].data(), sizeof(double) * 9) == 0);
      CHECK(a.provenance[i] == b.provenance[i]);
    }
    const auto c = generate_pool(s.noisy, 500, Solver::f7, 43, s.ka, s.kb);
    CHECK((c.hypotheses[0] - a.hypotheses[0]).norm() > 0.0);
  }
  SUBCASE("provenance indexes the source and reproduces the model") {
    const auto pool = generate_pool(s.noisy, 50, Solver::f7, 7, s.ka, s.kb);
    for (size_t i = 0; i < pool.size(); ++i) {
      const auto& idx = pool.provenance[i];
      REQUIRE(idx.size() == 7);
      std::vector<Correspondence> sample;
      for (int j : idx) {
        REQUIRE(j >= 0);
        REQUIRE(j < 200);
        sample.push_back(s.noisy[static_cast<size_t>(j)]);
      }
      auto sorted = idx;
      std::sort(sorted.begin(), sorted.end());
      CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
      for (const auto& c : sample) CHECK(sampson_error(pool.hypotheses[i], c.pa, c.pb) < 1e-6);
    }
  }
  SUBCASE("essential pools satisfy the manifold") {
    const auto pool = generate_pool(s.noisy, 30, Solver::e8, 9, s.ka, s.kb);
    CHECK(pool.kind == ModelKind::essential);
    for (const auto& e : pool.hypotheses) {
      Eigen::JacobiSVD<Mat3> svd(e);
      const Vec3 sv = svd.singularValues();
      CHECK(std::abs(sv(0) - sv(1)) / sv(0) < 1e-6);
      CHECK(std::abs(e.norm() - 1.0) < 1e-12);
    }
  }
  SUBCASE("too few correspondences") {
    std::vector<Correspondence> six(s.noisy.begin(), s.noisy.begin() + 6);
    CHECK_THROWS_AS(generate_pool(six, 10, Solver::f7, 1, s.ka, s.kb), Error);
  }
  SUBCASE("all-degenerate input exhausts the attempt budget") {
    std::vector<Correspondence> same(20, Correspondence{Vec2(1, 2), Vec2(3, 4)});
    CHECK_THROWS_AS(generate_pool(same, 5, Solver::f7, 1, s.ka, s.kb), Error);
  }
}

TEST_CASE("score") {
  const auto s = make_setup(2, 100, 0.0, 0.0);
  const Mat3 gt = compose_fundamental(s.ka, s.kb, s.pose).matrix();
  SUBCASE("exact correspondences are all inliers") {
    CHECK(score(gt, s.clean, ScoreMethod::ransac, 1.0).value == 100.0);
    CHECK(score(gt, s.clean, ScoreMethod::msac, 1.0).value == doctest::Approx(100.0));
  }
  SUBCASE("empty input is flagged") {
    const auto out = score(gt, {}, ScoreMethod::msac, 1.0);
    CHECK(out.empty_input);
    CHECK(out.value == 0.0);
    CHECK_THROWS_AS(score(gt, s.clean, ScoreMethod::msac, 0.0), Error);
  }
  SUBCASE("order and scale invariance") {
    const auto n = make_setup(3, 300, 1.0, 0.3);
    Rng rng(5);
    auto shuffled = n.noisy;
    for (size_t i = shuffled.size() - 1; i > 0; --i)
      std::swap(shuffled[i], shuffled[rng.uniform_index(i + 1)]);
    const Mat3 f = compose_fundamental(n.ka, n.kb, n.pose).matrix();
    for (auto m : {ScoreMethod::ransac, ScoreMethod::msac, ScoreMethod::marginalized}) {
      const double a = score(f, n.noisy, m, 1.5).value;
      CHECK(score(f, shuffled, m, 1.5).value == a);
      CHECK(score(Mat3(-1e3 * f), n.noisy, m, 1.5).value == doctest::Approx(a).epsilon(1e-12));
    }
  }
  SUBCASE("50 inliers and 50 uniform outliers") {
    Rng rng(8);
    auto corrs = std::vector<Correspondence>(s.clean.begin(), s.clean.begin() + 50);
    int lucky = 0;
    for (int i = 0; i < 50; ++i) {
      const Correspondence c{Vec2(rng.uniform(0, 640), rng.uniform(0, 480)),
                             Vec2(rng.uniform(0, 640), rng.uniform(0, 480))};
      const Vec3 fa = gt * homogeneous(c.pa);
      const Vec3 fb = gt.transpose() * homogeneous(c.pb);
      const double num = homogeneous(c.pb).dot(fa);
      const double r = num * num / (fa.head<2>().squaredNorm() + fb.head<2>().squaredNorm());
      if (r < 1.0) ++lucky;
      corrs.push_back(c);
    }
    const double v = score(gt, corrs, ScoreMethod::ransac, 1.0).value;
    CHECK(v == 50.0 + lucky);
    CHECK(v >= 50.0);
    CHECK(v <= 55.0);
  }
  SUBCASE("msac gain is monotone in residuals") {
    const auto n = make_setup(4, 50, 0.5, 0.0);
    const Mat3 f = compose_fundamental(n.ka, n.kb, n.pose).matrix();
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      auto moved = n.noisy;
      const auto i = rng.uniform_index(moved.size());
      const double before_r = sampson_error(f, moved[i].pa, moved[i].pb);
      moved[i].pb += Vec2(rng.normal(), rng.normal()) * 0.7;
      const double after_r = sampson_error(f, moved[i].pa, moved[i].pb);
      const double a = score(f, n.noisy, ScoreMethod::msac, 1.0).value;
      const double b = score(f, moved, ScoreMethod::msac, 1.0).value;
      if (after_r > before_r) CHECK(b <= a + 1e-12);
      if (after_r < before_r) CHECK(b >= a - 1e-12);
    }
  }
  SUBCASE("marginalization grid") {
    const auto t = marginalization_thresholds(2.0);
    REQUIRE(t.size() == 8);
    CHECK(t.front() == doctest::Approx(0.5));
    CHECK(t.back() == doctest::Approx(8.0));
    for (size_t i = 1; i < t.size(); ++i) CHECK(t[i] / t[i - 1] == doctest::Approx(t[1] / t[0]));
  }
}

namespace {

// Relative change of the best hypothesis' score when the threshold moves by
// +-25%, worst case over both directions.
double threshold_sensitivity(const Setup& n, const HypothesisPool& pool, ScoreMethod m) {
  std::vector<double> v;
  for (const auto& h : pool.hypotheses) v.push_back(score(h, n.noisy, m, 1.0).value);
  const Mat3& best = pool.hypotheses[static_cast<size_t>(select_best(v))];
  const double base = score(best, n.noisy, m, 1.0).value;
  double worst = 0.0;
  for (double factor : {0.75, 1.25})
    worst = std::max(worst, std::abs(score(best, n.noisy, m, factor).value - base) / base);
  return worst;
}

}  // namespace

TEST_CASE("marginalized score is less threshold sensitive than msac") {
  for (double noise : {0.05, 0.5, 1.0}) {
    double marg_sum = 0.0, msac_sum = 0.0;
    for (std::uint64_t seed = 10; seed < 20; ++seed) {
      const auto n = make_setup(seed, 200, noise, 0.3);
      const auto pool = generate_pool(n.noisy, 100, Solver::f7, seed, n.ka, n.kb);
      const double marg = threshold_sensitivity(n, pool, ScoreMethod::marginalized);
      marg_sum += marg;
      msac_sum += threshold_sensitivity(n, pool, ScoreMethod::msac);
      if (noise <= 0.05) CHECK(marg < 0.10);
    }
    if (noise > 0.05) CHECK(marg_sum < msac_sum);
  }
}

TEST_CASE("select_best") {
  CHECK(select_best(std::vector<double>{3.0}) == 0);
  CHECK(select_best(std::vector<double>{1.0, 5.0, 5.0, 2.0}) == 1);
  CHECK_THROWS_AS(select_best(std::vector<double>{}), Error);
  std::vector<ScoreRecord> recs{{1, 2.0, "msac"}, {0, 2.0, "msac"}};
  CHECK(select_best(2, recs) == 0);
  CHECK_THROWS_AS(select_best(3, recs), Error);

  SUBCASE("injected ground truth wins under inlier counting") {
    const auto n = make_setup(30, 200, 1.0, 0.3);
    auto pool = generate_pool(n.noisy, 100, Solver::f7, 1, n.ka, n.kb);
    const size_t k = 37;
    pool.hypotheses.insert(pool.hypotheses.begin() + k, compose_fundamental(n.ka, n.kb, n.pose).matrix());
    std::vector<double> v;
    for (const auto& h : pool.hypotheses) v.push_back(score(h, n.clean, ScoreMethod::ransac, 0.5).value);
    CHECK(select_best(v) == static_cast<int>(k));
  }
}

TEST_CASE("refine") {
  SUBCASE("ground truth on noiseless inliers stays put") {
    const auto s = make_setup(40, 100, 0.0, 0.0);
    const Mat3 gt = compose_fundamental(s.ka, s.kb, s.pose).matrix();
    const auto r = refine(gt, ModelKind::fundamental, s.clean, 1.0, s.ka, s.kb);
    CHECK(!r.low_support);
    CHECK((r.model - gt).norm() < 1e-10);
  }
  SUBCASE("too few inliers") {
    const auto s = make_setup(41, 7, 0.0, 0.0);
    const Mat3 gt = compose_fundamental(s.ka, s.kb, s.pose).matrix();
    const auto r = refine(gt, ModelKind::fundamental, s.clean, 1.0, s.ka, s.kb);
    CHECK(r.low_support);
    CHECK(!r.accepted);
    CHECK(r.model == gt);
  }
  SUBCASE("perturbed input improves") {
    int better = 0;
    const int trials = 100;
    for (int t = 0; t < trials; ++t) {
      const auto s = make_setup(1000 + static_cast<std::uint64_t>(t), 100, 0.5, 0.0);
      Rng rng(2000 + static_cast<std::uint64_t>(t));
      // 1% entrywise noise on the unit-norm calibrated form, mapped to pixels.
      Mat3 noisy = compose_essential(s.pose).matrix();
      for (int i = 0; i < 9; ++i) noisy(i / 3, i % 3) += 0.01 * rng.normal();
      const Mat3 input = to_fundamental(EssentialMatrix::from_matrix(noisy), s.ka, s.kb).matrix();
      // Large threshold so every correspondence counts as an inlier.
      const double th = 50.0;
      const auto r = refine(input, ModelKind::fundamental, s.noisy, th, s.ka, s.kb);
      CHECK(mean_sampson(r.model, s.noisy) <= mean_sampson(input, s.noisy) + 1e-12);
      auto pose_of = [&](const Mat3& f) {
        const auto e = to_essential(FundamentalMatrix::from_matrix(f), s.ka, s.kb);
        return decompose_essential(e, s.clean, s.ka, s.kb);
      };
      if (pose_error(pose_of(r.model), s.pose).max_deg() <= pose_error(pose_of(input), s.pose).max_deg())
        ++better;
    }
    CHECK(better >= 90);
  }
  SUBCASE("essential refinement") {
    const auto s = make_setup(43, 150, 0.5, 0.2);
    const Mat3 gt = compose_essential(s.pose).matrix();
    Rng rng(3);
    Mat3 noisy = gt;
    for (int i = 0; i < 9; ++i) noisy(i / 3, i % 3) += 0.003 * rng.normal();
    const Mat3 input = EssentialMatrix::from_matrix(noisy).matrix();
    const auto r = refine(input, ModelKind::essential, s.noisy, 3.0, s.ka, s.kb);
    Eigen::JacobiSVD<Mat3> svd(r.model);
    CHECK(std::abs(svd.singularValues()(0) - svd.singularValues()(1)) < 1e-9);
    const auto fi = as_fundamental(input, ModelKind::essential, s.ka, s.kb);
    const auto fo = as_fundamental(r.model, ModelKind::essential, s.ka, s.kb);
    CHECK(score(fo, s.noisy, ScoreMethod::msac, 3.0).value >= score(fi, s.noisy, ScoreMethod::msac, 3.0).value - 1e-9);
  }
}

TEST_CASE("degeneracy_check") {
  Rng rng(50);
  const CameraIntrinsics k{500, 500, 320, 240};
  const auto pose = random_pose(rng);
  const Mat3 f = compose_fundamental(k, k, pose).matrix();
  auto plane_points = [&](const Vec3& normal, double d, int n) {
    std::vector<Correspondence> out;
    while (static_cast<int>(out.size()) < n) {
      const Vec3 ray((rng.uniform(0, 640) - 320) / 500, (rng.uniform(0, 480) - 240) / 500, 1.0);
      const double depth = d / normal.dot(ray);
      if (depth <= 0.5 || depth > 50) continue;
      const Vec3 x = depth * ray;
      const Vec3 xb = pose.rotation * x + pose.translation;
      if (xb.z() < 0.5) continue;
      out.push_back({project(k, x), project(k, xb)});
    }
    return out;
  };
  SUBCASE("single plane") {
    const auto corrs = plane_points(Vec3(0.1, 0.2, 1).normalized(), 5.0, 100);
    const auto r = degeneracy_check(f, corrs, 1.0);
    CHECK(r.homography_degenerate);
    CHECK(r.inliers == 100);
  }
  SUBCASE("two planes split evenly") {
    auto corrs = plane_points(Vec3(0.1, 0.2, 1).normalized(), 5.0, 50);
    const auto second = plane_points(Vec3(-0.7, 0.1, 0.7).normalized(), 3.0, 50);
    corrs.insert(corrs.end(), second.begin(), second.end());
    const auto r = degeneracy_check(f, corrs, 1.0);
    CHECK(!r.homography_degenerate);
    CHECK(r.homography_fraction < 0.8);
  }
  SUBCASE("empty inlier set") {
    const auto r = degeneracy_check(f, {}, 1.0);
    CHECK(!r.homography_degenerate);
    CHECK(r.low_support);
  }
}
