#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>

#include "epi/error.h"
#include "epi/geometry.h"
#include "epi/nn/fsnet.h"
#include "epi/random.h"
#include "epi/scene.h"

using namespace epi;
using namespace epi::nn;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double sd = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = sd * rng.normal();
  return t;
}

// Central-difference check of d(sum c * op(inputs)) / d inputs.
using OpFn = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

double op_grad_error(const OpFn& op, std::vector<Tensor<double>> inputs, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> coef;
  std::vector<Tensor<double>> analytic;
  {
    std::vector<Parameter<double>> ps(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      ps[i].value = inputs[i];
      ps[i].grad = Tensor<double>(inputs[i].shape);
    }
    Graph<double> g(true);
    std::vector<Var> vars;
    for (auto& p : ps) vars.push_back(g.param(p));
    const Var y = op(g, vars);
    coef = random_tensor(g.value(y).shape, rng);
    g.backward(y, coef);
    for (auto& p : ps) analytic.push_back(p.grad);
  }
  auto eval = [&](const std::vector<Tensor<double>>& in) {
    Graph<double> g(false);
    std::vector<Var> vars;
    for (const auto& t : in) vars.push_back(g.input(t));
    const auto& y = g.value(op(g, vars));
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += coef.data[i] * y.data[i];
    return s;
  };
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      auto plus = inputs, minus = inputs;
      plus[i].data[j] += h;
      minus[i].data[j] -= h;
      const double num = (eval(plus) - eval(minus)) / (2 * h);
      const double ana = analytic[i].data[j];
      worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}));
    }
  return worst;
}

// Explicit O(N M) evaluation of the kernelized attention.
Tensor<double> quadratic_attention(const Tensor<double>& q, const Tensor<double>& k,
                                   const Tensor<double>& v, int heads) {
  auto phi = [](double x) { return x > 0 ? x + 1.0 : std::exp(x); };
  const int c = q.dim(0), n = q.dim(1), m = k.dim(1), dh = c / heads;
  Tensor<double> out({c, n});
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < n; ++i) {
      double den = 0.0;
      std::vector<double> num(static_cast<std::size_t>(dh), 0.0);
      for (int j = 0; j < m; ++j) {
        double sim = 0.0;
        for (int r = 0; r < dh; ++r) sim += phi(q.at(h * dh + r, i)) * phi(k.at(h * dh + r, j));
        den += sim;
        for (int r = 0; r < dh; ++r) num[static_cast<std::size_t>(r)] += sim * v.at(h * dh + r, j);
      }
      for (int r = 0; r < dh; ++r) out.at(h * dh + r, i) = num[static_cast<std::size_t>(r)] / den;
    }
  return out;
}

// Slab clipping: intersect the parameter intervals the two axis slabs allow.
std::optional<std::pair<Vec2, Vec2>> clip_oracle(const Vec3& l, double w, double h) {
  const double n = std::hypot(l.x(), l.y());
  const Vec2 dir(-l.y() / n, l.x() / n);
  const Vec2 p0 = -l.z() / n * Vec2(l.x() / n, l.y() / n);
  double t0 = -1e300, t1 = 1e300;
  for (int ax = 0; ax < 2; ++ax) {
    const double lo = 0.0, hi = ax == 0 ? w : h;
    if (std::abs(dir(ax)) < 1e-15) {
      if (p0(ax) < lo - 1e-9 || p0(ax) > hi + 1e-9) return std::nullopt;
      continue;
    }
    double a = (lo - p0(ax)) / dir(ax), b = (hi - p0(ax)) / dir(ax);
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  if (t0 > t1 + 1e-12) return std::nullopt;
  Vec2 a = p0 + t0 * dir, b = p0 + t1 * dir;
  if (b.x() < a.x() || (b.x() == a.x() && b.y() < a.y())) std::swap(a, b);
  return std::pair{a, b};
}

Image test_image(std::uint64_t seed, int w, int h) {
  Rng rng(seed);
  Image img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<std::size_t>(w * h * 3));
  for (auto& v : img.rgb) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("op gradients match central differences") {
  Rng rng(7);
  auto T = [&](std::vector<int> s) { return random_tensor(std::move(s), rng); };
  CHECK(op_grad_error([](auto& g, const auto& v) { return conv2d(g, v[0], v[1], 1, 1); },
                      {T({2, 5, 6}), T({3, 2, 3, 3})}, 1) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return conv2d(g, v[0], v[1], 2, 1); },
                      {T({2, 6, 6}), T({3, 2, 3, 3})}, 2) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return conv2d(g, v[0], v[1], 2, 0); },
                      {T({2, 6, 6}), T({3, 2, 1, 1})}, 3) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return conv2d(g, v[0], v[1], 1, 0); },
                      {T({2, 4, 4}), T({3, 2, 1, 1})}, 4) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return channel_affine(g, v[0], v[1], v[2]); },
                      {T({3, 4, 2}), T({3}), T({3})}, 5) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return relu(g, v[0]); }, {T({4, 5})}, 6) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return leaky_relu(g, v[0], 0.1); }, {T({4, 5})}, 7) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return softplus(g, v[0]); }, {T({4, 5})}, 8) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return scale(g, v[0], 2.5); }, {T({4, 5})}, 9) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return add(g, v[0], v[1]); }, {T({4, 5}), T({4, 5})}, 10) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return maximum(g, v[0], v[1]); }, {T({4, 5}), T({4, 5})}, 11) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return concat_channels(g, v[0], v[1]); },
                      {T({2, 3, 3}), T({3, 3, 3})}, 12) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return upsample2x(g, v[0]); }, {T({2, 3, 4})}, 13) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return avg_pool(g, v[0]); }, {T({3, 3, 4})}, 14) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return linear(g, v[0], v[1]); }, {T({4, 6}), T({3, 4})}, 15) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return linear(g, v[0], v[1], v[2]); },
                      {T({4, 6}), T({3, 4}), T({3})}, 16) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return linear_attention(g, v[0], v[1], v[2], 2); },
                      {T({4, 5}), T({4, 7}), T({4, 7})}, 17) < 1e-6);
  CHECK(op_grad_error([](auto& g, const auto& v) { return candidate_attention(g, v[0], v[1], v[2], 2, 3); },
                      {T({4, 5}), T({4, 15}), T({4, 15})}, 18) < 1e-6);
  SamplePlan plan;
  plan.map_size = 12;
  plan.columns = 3;
  plan.offsets = {0, 2, 2, 5};
  plan.taps = {{0, 0.25}, {5, 0.75}, {3, 0.5}, {11, 0.3}, {3, 0.2}};
  CHECK(op_grad_error([&](auto& g, const auto& v) { return gather_samples(g, v[0], plan); },
                      {T({2, 3, 4})}, 19) < 1e-6);
}

TEST_CASE("linear attention equals the quadratic evaluation") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(seed, "attn"));
    // 8x8 maps as 64 tokens, 32 channels, 8 heads.
    const auto q = random_tensor({32, 64}, rng), k = random_tensor({32, 64}, rng),
               v = random_tensor({32, 64}, rng);
    Graph<double> g(false);
    const auto& out = g.value(linear_attention(g, g.input(q), g.input(k), g.input(v), 8));
    const auto ref = quadratic_attention(q, k, v, 8);
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i)
      worst = std::max(worst, std::abs(out.data[i] - ref.data[i]) / std::max(std::abs(ref.data[i]), 1e-12));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("attention message vanishes for zero values") {
  auto w = init_weights<double>(NetworkConfig::desk(), 3);
  Rng rng(4);
  auto x = random_tensor({32, 64}, rng);
  Graph<double> g(false);
  // Zeroing the value projection makes V = 0 for any source.
  w.params.get("tr.0.self.v").value = Tensor<double>({32, 32});
  const auto& msg = g.value(attention_message(g, w, "tr.0.self", g.input(x), g.input(x)));
  for (double v : msg.data) CHECK(v == 0.0);
}

TEST_CASE("transform_pair swaps outputs when inputs are swapped") {
  auto w = init_weights<double>(NetworkConfig::desk(), 5);
  Rng rng(6);
  const auto a = random_tensor({32, 16, 16}, rng), b = random_tensor({32, 16, 16}, rng);
  Graph<double> g(false);
  const auto [ab_a, ab_b] = transform_pair(g, w, g.input(a), g.input(b));
  const auto [ba_b, ba_a] = transform_pair(g, w, g.input(b), g.input(a));
  CHECK(g.value(ab_a).data == g.value(ba_a).data);
  CHECK(g.value(ab_b).data == g.value(ba_b).data);
  CHECK(g.value(ab_a).shape == std::vector<int>{32, 16, 16});
  CHECK(g.value(ab_a).data != a.data);

  Graph<double> g2(false);
  CHECK_THROWS_AS(transform_pair(g2, w, g2.input(a), g2.input(random_tensor({32, 8, 16}, rng))), Error);
}

TEST_CASE("line clipping matches the slab oracle") {
  Rng rng(11);
  int hits = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double w = 16.0, h = 12.0;
    // Lines through a random point near the map with a random direction.
    const Vec2 p(rng.uniform(-4.0, 20.0), rng.uniform(-4.0, 16.0));
    const double ang = rng.uniform(0.0, M_PI);
    const Vec3 l(std::sin(ang), -std::cos(ang), -(std::sin(ang) * p.x() - std::cos(ang) * p.y()));
    const Vec3 ls = l * rng.uniform(0.1, 10.0);
    const auto seg = clip_line(ls, w, h);
    const auto ref = clip_oracle(l, w, h);
    REQUIRE(seg.has_value() == ref.has_value());
    if (!seg) continue;
    ++hits;
    CHECK((seg->entry - ref->first).norm() < 1e-9);
    CHECK((seg->exit - ref->second).norm() < 1e-9);

    const int d = 2 + trial % 20;
    const auto s = epipolar_samples(ls, w, h, d);
    REQUIRE(s.size() == static_cast<std::size_t>(d));
    const Vec3 ln = l / std::hypot(l.x(), l.y());
    const double step = (s[1] - s[0]).norm();
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(std::abs(ln.dot(Vec3(s[i].x(), s[i].y(), 1.0))) < 1e-6);
      CHECK(s[i].x() >= 0.0);
      CHECK(s[i].x() <= w);
      CHECK(s[i].y() >= 0.0);
      CHECK(s[i].y() <= h);
      if (i > 0) CHECK(std::abs((s[i] - s[i - 1]).norm() - step) < 1e-9);
    }
  }
  CHECK(hits > 300);
}

TEST_CASE("epipolar samples for a horizontal line") {
  const Mat3 f = (Mat3() << 0, 0, 0, 0, 0, -1, 0, 1, 0).finished();
  for (double v : {0.5, 3.5, 7.25}) {
    for (double u : {0.5, 9.5}) {
      const Vec3 l = f * Vec3(u, v, 1.0);
      const auto s = epipolar_samples(l, 16.0, 16.0, 5);
      REQUIRE(s.size() == 5);
      for (int i = 0; i < 5; ++i) {
        CHECK(s[static_cast<std::size_t>(i)].y() == doctest::Approx(v).epsilon(1e-12));
        CHECK(s[static_cast<std::size_t>(i)].x() == doctest::Approx(4.0 * i).epsilon(1e-12));
      }
    }
  }
  const auto d2 = epipolar_samples(f * Vec3(2.0, 5.0, 1.0), 16.0, 16.0, 2);
  REQUIRE(d2.size() == 2);
  CHECK(d2[0] == Vec2(0.0, 5.0));
  CHECK(d2[1] == Vec2(16.0, 5.0));
  // Outside the map: no samples.
  CHECK(epipolar_samples(f * Vec3(2.0, 20.0, 1.0), 16.0, 16.0, 4).empty());
  CHECK_THROWS_AS(epipolar_samples(f * Vec3(2.0, 5.0, 1.0), 16.0, 16.0, 1), Error);
}

TEST_CASE("feature fundamental is exactly transposed under a swap") {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    Mat3 f;
    for (int i = 0; i < 9; ++i) f(i / 3, i % 3) = rng.normal();
    Mat3 ta = Mat3::Identity(), tb = Mat3::Identity();
    ta(0, 0) = ta(1, 1) = rng.uniform(0.05, 0.2);
    ta(0, 2) = rng.uniform(-10, 0);
    tb(0, 0) = tb(1, 1) = rng.uniform(0.05, 0.2);
    tb(1, 2) = rng.uniform(-10, 0);
    const Mat3 ab = feature_fundamental(f, ta, tb);
    const Mat3 ba = feature_fundamental(f.transpose(), tb, ta);
    CHECK(ab == Mat3(ba.transpose()));
    // Point-line incidence maps through the transforms.
    const Vec3 xa(rng.uniform(0, 640), rng.uniform(0, 480), 1.0);
    const Vec3 lb = f * xa;
    Mat3 s = Mat3::Identity();
    s(0, 0) = s(1, 1) = 0.25;
    const Vec3 xb_on = [&] {
      // A frame point on lb.
      const double x = 100.0;
      return Vec3(x, -(lb.x() * x + lb.z()) / lb.y(), 1.0);
    }();
    const Vec3 fa = s * ta * xa, fb = s * tb * xb_on;
    CHECK(std::abs(fb.dot(ab * fa)) < 1e-9 * ab.norm() * fa.norm() * fb.norm());
  }
}

TEST_CASE("zero samples attend to the value bias") {
  auto cfg = NetworkConfig::desk();
  auto w = init_weights<double>(cfg, 13);
  Rng rng(14);
  for (auto& v : w.params.get("epi.v.bias").value.data) v = rng.normal();
  // A line far outside the map for every query.
  const Mat3 f_feat = (Mat3() << 0, 0, 0, 0, 0, 0, 0, 0, 1).finished();
  const auto plan = epipolar_plan(f_feat, cfg);
  CHECK(plan.taps.empty());
  const auto fa = random_tensor({32, 16, 16}, rng), fb = random_tensor({32, 16, 16}, rng);
  Graph<double> g(false);
  const auto q = gather_samples(g, g.input(fa), query_plan(cfg));
  const auto s = gather_samples(g, g.input(fb), plan);
  const auto k = linear(g, s, g.param(w.params.get("epi.k")));
  const auto v = linear(g, s, g.param(w.params.get("epi.v")), g.param(w.params.get("epi.v.bias")));
  const auto qq = linear(g, q, g.param(w.params.get("epi.q")));
  const auto& att = g.value(candidate_attention(g, qq, k, v, cfg.heads, cfg.samples));
  const auto& bias = w.params.get("epi.v.bias").value;
  for (int c = 0; c < 32; ++c)
    for (int i = 0; i < att.dim(1); ++i) CHECK(att.at(c, i) == doctest::Approx(bias.data[static_cast<std::size_t>(c)]).epsilon(1e-12));
}

TEST_CASE("extractor output shapes") {
  {
    const auto cfg = NetworkConfig::desk();
    auto w = init_weights<float>(cfg, 1);
    Graph<float> g(false);
    const auto& out = g.value(extract_features(g, w, g.input(Tensor<float>({3, 64, 64}))));
    CHECK(out.shape == std::vector<int>{32, 16, 16});
    CHECK_THROWS_AS(extract_features(g, w, g.input(Tensor<float>({3, 32, 64}))), Error);
  }
  {
    const auto cfg = NetworkConfig::paper();
    CHECK(cfg.extractor_widths() == std::array<int, 9>{128, 128, 196, 256, 256, 256, 196, 196, 128});
    auto w = init_weights<float>(cfg, 1);
    Graph<float> g(false);
    const auto& out = g.value(extract_features(g, w, g.input(Tensor<float>({3, 256, 256}))));
    CHECK(out.shape == std::vector<int>{128, 64, 64});
  }
}

TEST_CASE("config validation") {
  auto c = NetworkConfig::desk();
  CHECK_NOTHROW(c.validate());
  c.samples = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = NetworkConfig::desk();
  c.height = 60;
  CHECK_THROWS_AS(c.validate(), Error);
  c = NetworkConfig::desk();
  c.clamp_scale = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = NetworkConfig::desk();
  c.query_stride = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_THROWS_AS(NetworkConfig::named("huge"), Error);
  CHECK(NetworkConfig::named("paper").depth == 3);
  CHECK(NetworkConfig::named("paper").samples == 45);
}

TEST_CASE("initialization and zero-input determinism") {
  const auto a = init_weights<float>(NetworkConfig::desk(), 9);
  const auto b = init_weights<float>(NetworkConfig::desk(), 9);
  const auto c = init_weights<float>(NetworkConfig::desk(), 10);
  REQUIRE(a.params.size() == b.params.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    CHECK(a.params[i].value.data == b.params[i].value.data);
    differs = differs || a.params[i].value.data != c.params[i].value.data;
  }
  CHECK(differs);

  auto w = init_weights<double>(NetworkConfig::desk(), 9);
  auto run = [&] {
    Graph<double> g(false);
    return g.value(extract_features(g, w, g.input(Tensor<double>({3, 64, 64})))).data;
  };
  const auto first = run();
  CHECK(first == run());
  // Zero image and zero shifts: every activation stays zero.
  for (double v : first) CHECK(v == 0.0);

  Graph<double> g(false);
  const auto& r1 = g.value(regress_pose_error(g, w, g.input(Tensor<double>({32, 8, 8})), g.input(Tensor<double>({32, 8, 8}))));
  // Zero features leave only the output bias: softplus(0) * t_s.
  CHECK(r1.data[0] == doctest::Approx(std::log(2.0) * 25.0).epsilon(1e-12));
  CHECK(r1.data[1] == doctest::Approx(std::log(2.0) * 25.0).epsilon(1e-12));
}

TEST_CASE("regressor is symmetric in its inputs") {
  auto w = init_weights<double>(NetworkConfig::desk(), 15);
  Rng rng(16);
  const auto a = random_tensor({32, 8, 8}, rng), b = random_tensor({32, 8, 8}, rng);
  Graph<double> g(false);
  const auto& ab = g.value(regress_pose_error(g, w, g.input(a), g.input(b)));
  const auto& ba = g.value(regress_pose_error(g, w, g.input(b), g.input(a)));
  CHECK(ab.data == ba.data);
  const auto& aa = g.value(regress_pose_error(g, w, g.input(a), g.input(a)));
  for (double v : aa.data) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }
}

TEST_CASE("forward_score order invariance and the cache contract") {
  const auto cfg = NetworkConfig::desk();
  auto w = init_weights<float>(cfg, 21);
  const SyntheticScene scene = generate_scene(PairSpec{}, 21);
  const auto ia = prepare_image<float>(render_view(scene, false, 128, 96), 640, 480, cfg);
  const auto ib = prepare_image<float>(render_view(scene, true, 128, 96), 640, 480, cfg);
  CHECK(ia.pixels.shape == std::vector<int>{3, 64, 64});
  const Mat3 gt = compose_fundamental(scene.ka, scene.kb, scene.gt_pose).matrix();

  FeatureCache<float> cache;
  Rng rng(22);
  std::vector<ScoreOutput> scores;
  for (int i = 0; i < 100; ++i) {
    Mat3 f = gt;
    if (i > 0)
      for (int j = 0; j < 9; ++j) f(j / 3, j % 3) += 0.3 * gt.norm() * rng.normal();
    f = project_rank2(f);
    scores.push_back(forward_score(ia, ib, f, w, cache, "ab"));
    CHECK(scores.back().e_rot >= 0.0);
    CHECK(scores.back().e_trans >= 0.0);
    CHECK(std::isfinite(scores.back().max()));
  }
  CHECK(cache.extract_calls() == 2);
  CHECK(cache.transform_calls() == 1);
  CHECK(cache.size() == 1);

  FeatureCache<float> rev;
  for (int i = 0; i < 5; ++i) {
    Mat3 f = gt;
    for (int j = 0; j < 9; ++j) f(j / 3, j % 3) += 0.1 * gt.norm() * rng.normal();
    f = project_rank2(f);
    const auto ab = forward_score(ia, ib, f, w, cache, "ab");
    const auto ba = forward_score(ib, ia, Mat3(f.transpose()), w, rev, "ba");
    CHECK(ab.e_rot == ba.e_rot);
    CHECK(ab.e_trans == ba.e_trans);
  }

  Mat3 rank1 = Vec3(1, 2, 3) * Vec3(0.5, -1, 2).transpose();
  CHECK_THROWS_AS(forward_score(ia, ib, rank1, w, cache, "ab"), Error);
}

TEST_CASE("select_hypothesis") {
  CHECK(select_hypothesis(std::vector<ScoreOutput>{{3.0, 1.0}}) == 0);
  CHECK(select_hypothesis(std::vector<ScoreOutput>{{3.0, 1.0}, {2.0, 2.5}, {0.5, 2.5}}) == 1);
  CHECK(select_hypothesis(std::vector<ScoreOutput>{{1.0, 1.0}, {1.0, 0.5}}) == 0);
  CHECK_THROWS_AS(select_hypothesis(std::vector<ScoreOutput>{}), Error);
}

TEST_CASE("soft L1 loss") {
  auto gt = [](double r, double t) { return PoseError{r, t}; };
  CHECK(loss_soft_l1({5.0, 7.0}, gt(5.0, 7.0), 25.0).value == 0.0);
  CHECK(loss_soft_l1({0.0, 3.0}, gt(25.0, 3.0), 25.0).value == doctest::Approx(0.761594).epsilon(1e-6));
  const double clamp = loss_soft_l1({120.0, 3.0}, gt(180.0, 3.0), 25.0).value;
  CHECK(clamp == doctest::Approx(std::tanh(7.2) - std::tanh(4.8)).epsilon(1e-12));
  CHECK(clamp < 2e-4);
  CHECK_THROWS_AS(loss_soft_l1({1.0, 1.0}, PoseError{1.0, std::nullopt}, 25.0), Error);
  // Bounded by one per term and monotone in the clamped gap.
  double prev = 0.0;
  for (double e = 0.0; e <= 200.0; e += 5.0) {
    const auto l = loss_soft_l1({e, 0.0}, gt(0.0, 0.0), 25.0);
    CHECK(l.value <= 1.0);
    CHECK(l.value > prev - 1e-15);
    prev = l.value;
    // Derivative agrees with a central difference away from the kink.
    if (e > 0.0) {
      const double num = (loss_soft_l1({e + 1e-5, 0.0}, gt(0.0, 0.0), 25.0).value -
                          loss_soft_l1({e - 1e-5, 0.0}, gt(0.0, 0.0), 25.0).value) / 2e-5;
      CHECK(l.d_rot == doctest::Approx(num).epsilon(1e-5));
    }
  }
  CHECK(loss_soft_l1({5.0, 5.0}, gt(5.0, 5.0), 25.0).d_rot == 0.0);
}

TEST_CASE("confidence-weighted cross entropy") {
  CHECK(loss_weighted_ce(0.5, 1, 2.0) == doctest::Approx(1.5596).epsilon(1e-4));
  CHECK(loss_weighted_ce(1.0 - 1e-9, 1, 2.0) < 1e-6);
  for (double f : {0.1, 0.4, 0.9}) {
    CHECK(loss_weighted_ce(f, 1, 0.0) == doctest::Approx(-std::log(f)).epsilon(1e-14));
    CHECK(loss_weighted_ce(f, 0, 0.0) == doctest::Approx(-std::log(1 - f)).epsilon(1e-14));
    for (int y : {0, 1}) {
      const double num = (loss_weighted_ce(f + 1e-6, y, 2.0) - loss_weighted_ce(f - 1e-6, y, 2.0)) / 2e-6;
      CHECK(loss_weighted_ce_grad(f, y, 2.0) == doctest::Approx(num).epsilon(1e-6));
    }
  }
  CHECK(std::isfinite(loss_weighted_ce(0.0, 1, 2.0)));
  CHECK(std::isfinite(loss_weighted_ce(1.0, 0, 2.0)));
  CHECK(correctness_label(PoseError{9.9, 3.0}) == 1);
  CHECK(correctness_label(PoseError{10.0, 3.0}) == 0);
  CHECK(correctness_label(PoseError{1.0, std::nullopt}) == 0);
  CHECK(confidence_from_errors({10.0, 2.0}) == doctest::Approx(0.5));
  // Chain rule through the confidence mapping.
  const PoseError g{3.0, 4.0};
  const auto l = loss_weighted_ce({12.0, 7.0}, g, 2.0);
  const double num = (loss_weighted_ce({12.0 + 1e-6, 7.0}, g, 2.0).value -
                      loss_weighted_ce({12.0 - 1e-6, 7.0}, g, 2.0).value) / 2e-6;
  CHECK(l.d_rot == doctest::Approx(num).epsilon(1e-6));
  CHECK(l.d_trans == 0.0);
}

TEST_CASE("prepare_image crop and mapping") {
  const auto cfg = NetworkConfig::desk();
  const Image img = test_image(3, 128, 96);
  const auto p = prepare_image<double>(img, 640, 480, cfg);
  // 4:3 frame centre-cropped to a square: the frame centre maps to the input centre.
  const Vec3 c = p.to_input * Vec3(320.0, 240.0, 1.0);
  CHECK(c.x() == doctest::Approx(32.0));
  CHECK(c.y() == doctest::Approx(32.0));
  const Vec3 left = p.to_input * Vec3(80.0, 0.0, 1.0);
  CHECK(left.x() == doctest::Approx(0.0));
  CHECK(left.y() == doctest::Approx(0.0));
  // A constant image stays constant.
  Image flat = img;
  std::fill(flat.rgb.begin(), flat.rgb.end(), 0.75f);
  const auto pf = prepare_image<double>(flat, 640, 480, cfg);
  for (double v : pf.pixels.data) CHECK(v == doctest::Approx(4.0 * (0.75 - 0.5)));
  Image bad = img;
  bad.rgb.pop_back();
  CHECK_THROWS_AS(prepare_image<double>(bad, 640, 480, cfg), Error);
}
