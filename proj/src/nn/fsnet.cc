#include "epi/nn/fsnet.h"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "epi/random.h"

namespace epi::nn {

NetworkConfig NetworkConfig::desk() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::paper() {
  NetworkConfig c;
  c.name = "paper";
  c.height = c.width = 256;
  c.channels = 128;
  c.depth = 3;
  c.samples = 45;
  c.regressor_size = 512;
  return c;
}

NetworkConfig NetworkConfig::named(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  fail(ErrorKind::invalid_argument, "unknown network config '" + name + "' (desk|paper)");
}

void NetworkConfig::validate() const {
  require(height > 0 && width > 0 && height % 8 == 0 && width % 8 == 0,
          ErrorKind::invalid_argument, "input size must be positive and divisible by 8");
  require(samples >= 2, ErrorKind::invalid_argument, "epipolar sample count D must be >= 2");
  require(query_stride >= 1, ErrorKind::invalid_argument, "query stride must be >= 1");
  require(clamp_scale > 0.0 && std::isfinite(clamp_scale), ErrorKind::invalid_argument,
          "clamp scale must be positive");
  require(channels > 0 && heads > 0 && channels % heads == 0, ErrorKind::invalid_argument,
          "channels must be a positive multiple of the head count");
  require(depth >= 0 && regressor_size >= 2, ErrorKind::invalid_argument,
          "invalid transformer depth or regressor size");
  require(precision == 32 || precision == 64, ErrorKind::invalid_argument,
          "precision must be 32 or 64");
}

std::array<int, 9> NetworkConfig::extractor_widths() const {
  auto scaled = [&](int w) { return std::max(1, static_cast<int>(std::lround(w * channels / 128.0))); };
  const int a = scaled(128), b = scaled(196), c = scaled(256);
  return {a, a, b, c, c, c, b, b, channels};
}

std::array<int, 4> NetworkConfig::regressor_widths() const {
  return {channels, channels, 2 * channels, regressor_size};
}

namespace {

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double sd) {
  for (auto& v : t.data) v = static_cast<T>(sd * rng.normal());
}

template <typename T>
void add_conv(ParameterSet<T>& ps, Rng& rng, const std::string& name, int cout, int cin, int k) {
  auto& p = ps.add(name, {cout, cin, k, k});
  fill_normal(p.value, rng, std::sqrt(2.0 / (cin * k * k)));
}

template <typename T>
void add_norm(ParameterSet<T>& ps, const std::string& name, int c, double gamma = 1.0) {
  auto& g = ps.add(name + ".gamma", {c});
  std::fill(g.value.data.begin(), g.value.data.end(), static_cast<T>(gamma));
  ps.add(name + ".beta", {c});
}

template <typename T>
void add_linear(ParameterSet<T>& ps, Rng& rng, const std::string& name, int cout, int cin,
                bool bias, double gain = 2.0) {
  auto& p = ps.add(name, {cout, cin});
  fill_normal(p.value, rng, std::sqrt(gain / cin));
  if (bias) ps.add(name + ".bias", {cout});
}

template <typename T>
void add_resblock(ParameterSet<T>& ps, Rng& rng, const std::string& name, int cin, int cout,
                  int stride) {
  add_conv(ps, rng, name + ".conv1", cout, cin, 3);
  add_norm(ps, name + ".bn1", cout);
  add_conv(ps, rng, name + ".conv2", cout, cout, 3);
  // A small residual-branch scale keeps activations bounded without
  // batch statistics.
  add_norm(ps, name + ".bn2", cout, 0.2);
  if (stride != 1 || cin != cout) {
    add_conv(ps, rng, name + ".down", cout, cin, 1);
    add_norm(ps, name + ".bn_down", cout);
  }
}

template <typename T>
void add_attention_layer(ParameterSet<T>& ps, Rng& rng, const std::string& name, int c) {
  add_linear(ps, rng, name + ".q", c, c, false, 1.0);
  add_linear(ps, rng, name + ".k", c, c, false, 1.0);
  add_linear(ps, rng, name + ".v", c, c, false, 1.0);
  add_linear(ps, rng, name + ".merge", c, c, false, 1.0);
  add_linear(ps, rng, name + ".mlp1", 2 * c, 2 * c, false);
  add_linear(ps, rng, name + ".mlp2", c, 2 * c, false, 0.5);
}

}  // namespace

template <typename T>
Weights<T> init_weights(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  Weights<T> w;
  w.config = config;
  auto& ps = w.params;
  Rng rng(derive_seed(seed, "fsnet-init"));
  const auto ew = config.extractor_widths();
  add_conv(ps, rng, "fe.l0.conv", ew[0], 3, 3);
  add_norm(ps, "fe.l0.bn", ew[0]);
  int cin = ew[0];
  for (int i = 1; i <= 4; ++i) {
    add_resblock(ps, rng, "fe.l" + std::to_string(i), cin, ew[static_cast<std::size_t>(i)], 2);
    cin = ew[static_cast<std::size_t>(i)];
  }
  add_conv(ps, rng, "fe.l6.conv", ew[6], ew[5], 3);
  add_norm(ps, "fe.l6.bn", ew[6]);
  add_conv(ps, rng, "fe.l8.conv", ew[8], ew[7], 3);
  add_norm(ps, "fe.l8.bn", ew[8]);

  const int c = config.channels;
  for (int l = 0; l < config.depth; ++l) {
    add_attention_layer(ps, rng, "tr." + std::to_string(l) + ".self", c);
    add_attention_layer(ps, rng, "tr." + std::to_string(l) + ".cross", c);
  }

  add_linear(ps, rng, "epi.q", c, c, false, 1.0);
  // No key bias: it shifts all D logits of a query equally.
  add_linear(ps, rng, "epi.k", c, c, false, 1.0);
  add_linear(ps, rng, "epi.v", c, c, true, 1.0);
  add_linear(ps, rng, "epi.out", c, c, false, 1.0);
  add_linear(ps, rng, "epi.mlp1", 2 * c, 2 * c, true);
  add_linear(ps, rng, "epi.mlp2", c, 2 * c, true, 0.5);

  const auto rw = config.regressor_widths();
  cin = c;
  for (int i = 0; i < 4; ++i) {
    add_resblock(ps, rng, "rg.b" + std::to_string(i + 1), cin, rw[static_cast<std::size_t>(i)], 2);
    cin = rw[static_cast<std::size_t>(i)];
  }
  const int m1 = config.regressor_size, m2 = config.regressor_size / 2;
  add_linear(ps, rng, "rg.mlp1", m1, cin, false);
  add_norm(ps, "rg.mlp1.bn", m1);
  add_linear(ps, rng, "rg.mlp2", m2, m1, false);
  add_norm(ps, "rg.mlp2.bn", m2);
  add_linear(ps, rng, "rg.out", 2, m2, true, 0.1);
  return w;
}

template <typename U, typename T>
Weights<U> convert_weights(const Weights<T>& w) {
  Weights<U> out;
  out.config = w.config;
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    auto& p = out.params.add(w.params[i].name, w.params[i].value.shape);
    p.value = w.params[i].value.template cast<U>();
  }
  return out;
}

// --- Preprocessing ------------------------------------------------------------

template <typename T>
PreparedImage<T> prepare_image(const Image& image, int frame_width, int frame_height,
                               const NetworkConfig& config) {
  require(image.width > 0 && image.height > 0 &&
              image.rgb.size() == static_cast<std::size_t>(image.width) *
                                      static_cast<std::size_t>(image.height) * 3,
          ErrorKind::invalid_argument, "image buffer does not match its size");
  require(frame_width > 0 && frame_height > 0, ErrorKind::invalid_argument,
          "frame size must be positive");
  const double sx = static_cast<double>(image.width) / frame_width;
  const double target = static_cast<double>(config.width) / config.height;
  double cw = image.width, ch = image.height;
  if (cw / ch > target)
    cw = ch * target;
  else
    ch = cw / target;
  const double x0 = 0.5 * (image.width - cw), y0 = 0.5 * (image.height - ch);
  const double k = config.width / cw;  // crop pixels -> input pixels

  PreparedImage<T> out;
  out.to_input << sx * k, 0.0, -x0 * k, 0.0, sx * k, -y0 * k, 0.0, 0.0, 1.0;
  out.pixels = Tensor<T>({3, config.height, config.width});

  auto sample = [&](double x, double y, int c) {
    // Bilinear at continuous image coordinates with half-pixel centres.
    const double u = std::clamp(x - 0.5, 0.0, image.width - 1.0);
    const double v = std::clamp(y - 0.5, 0.0, image.height - 1.0);
    const int u0 = static_cast<int>(u), v0 = static_cast<int>(v);
    const int u1 = std::min(u0 + 1, image.width - 1), v1 = std::min(v0 + 1, image.height - 1);
    const double fu = u - u0, fv = v - v0;
    return (1 - fv) * ((1 - fu) * image.at(u0, v0, c) + fu * image.at(u1, v0, c)) +
           fv * ((1 - fu) * image.at(u0, v1, c) + fu * image.at(u1, v1, c));
  };
  const double step = 1.0 / k;
  for (int y = 0; y < config.height; ++y)
    for (int x = 0; x < config.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int sy = 0; sy < 2; ++sy)
          for (int sxi = 0; sxi < 2; ++sxi)
            acc += sample(x0 + (x + 0.25 + 0.5 * sxi) * step, y0 + (y + 0.25 + 0.5 * sy) * step, c);
        // Inputs centred on zero with roughly unit spread.
        out.pixels.at(c, y, x) = static_cast<T>(4.0 * (0.25 * acc - 0.5));
      }
  return out;
}

// --- Stages -------------------------------------------------------------------

namespace {

template <typename T>
Var reshape(Graph<T>& g, Var x, std::vector<int> shape) {
  Tensor<T> out = g.value(x).reshaped(std::move(shape));
  require(Tensor<T>::numel(out.shape) == out.size(), ErrorKind::invalid_argument,
          "reshape changes the element count");
  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {x}, [&g, x, y] {
    const auto& gy = g.grad(y);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += gy.data[i];
  });
}

template <typename T>
Var P(Graph<T>& g, Weights<T>& w, const std::string& name) {
  return g.param(w.params.get(name));
}

template <typename T>
Var norm(Graph<T>& g, Weights<T>& w, const std::string& name, Var x) {
  return channel_affine(g, x, P(g, w, name + ".gamma"), P(g, w, name + ".beta"));
}

template <typename T>
Var resblock(Graph<T>& g, Weights<T>& w, const std::string& name, Var x, int stride) {
  Var h = relu(g, norm(g, w, name + ".bn1", conv2d(g, x, P(g, w, name + ".conv1"), stride, 1)));
  h = norm(g, w, name + ".bn2", conv2d(g, h, P(g, w, name + ".conv2"), 1, 1));
  Var sc = x;
  if (w.params.find(name + ".down"))
    sc = norm(g, w, name + ".bn_down", conv2d(g, x, P(g, w, name + ".down"), stride, 0));
  return relu(g, add(g, h, sc));
}

template <typename T>
Var attention_layer(Graph<T>& g, Weights<T>& w, const std::string& prefix, Var x, Var source) {
  const Var msg = attention_message(g, w, prefix, x, source);
  const Var h = relu(g, linear(g, concat_channels(g, x, msg), P(g, w, prefix + ".mlp1")));
  return add(g, x, linear(g, h, P(g, w, prefix + ".mlp2")));
}

constexpr double kLeakySlope = 0.1;

}  // namespace

template <typename T>
Var extract_features(Graph<T>& g, Weights<T>& w, Var image) {
  const auto& cfg = w.config;
  const auto& iv = g.value(image);
  if (!(iv.rank() == 3 && iv.dim(0) == 3 && iv.dim(1) == cfg.height && iv.dim(2) == cfg.width))
    fail(ErrorKind::invalid_argument,
         "image shape " + shape_string(iv.shape) + " does not match the configured input");
  const Var l0 = relu(g, norm(g, w, "fe.l0.bn", conv2d(g, image, P(g, w, "fe.l0.conv"), 1, 1)));
  const Var l1 = resblock(g, w, "fe.l1", l0, 2);
  const Var l2 = resblock(g, w, "fe.l2", l1, 2);
  const Var l3 = resblock(g, w, "fe.l3", l2, 2);
  const Var l4 = resblock(g, w, "fe.l4", l3, 2);
  const Var l5 = add(g, upsample2x(g, l4), l3);
  const Var l6 = leaky_relu(g, norm(g, w, "fe.l6.bn", conv2d(g, l5, P(g, w, "fe.l6.conv"), 1, 1)),
                            static_cast<T>(kLeakySlope));
  const Var l7 = add(g, upsample2x(g, l6), l2);
  return leaky_relu(g, norm(g, w, "fe.l8.bn", conv2d(g, l7, P(g, w, "fe.l8.conv"), 1, 1)),
                    static_cast<T>(kLeakySlope));
}

template <typename T>
Var attention_message(Graph<T>& g, Weights<T>& w, const std::string& prefix, Var x, Var source) {
  const Var q = linear(g, x, P(g, w, prefix + ".q"));
  const Var k = linear(g, source, P(g, w, prefix + ".k"));
  const Var v = linear(g, source, P(g, w, prefix + ".v"));
  return linear(g, linear_attention(g, q, k, v, w.config.heads), P(g, w, prefix + ".merge"));
}

template <typename T>
std::pair<Var, Var> transform_pair(Graph<T>& g, Weights<T>& w, Var fa, Var fb) {
  const auto shape = g.value(fa).shape;
  require(shape == g.value(fb).shape && shape.size() == 3, ErrorKind::invalid_argument,
          "transform_pair needs two [C, H, W] maps of equal shape");
  const int c = shape[0], n = shape[1] * shape[2];
  Var a = reshape(g, fa, {c, n});
  Var b = reshape(g, fb, {c, n});
  for (int l = 0; l < w.config.depth; ++l) {
    const std::string s = "tr." + std::to_string(l) + ".self";
    const std::string x = "tr." + std::to_string(l) + ".cross";
    const Var a1 = attention_layer(g, w, s, a, a);
    const Var b1 = attention_layer(g, w, s, b, b);
    const Var a2 = attention_layer(g, w, x, a1, b1);
    const Var b2 = attention_layer(g, w, x, b1, a1);
    a = a2;
    b = b2;
  }
  return {reshape(g, a, shape), reshape(g, b, shape)};
}

std::optional<ClippedSegment> clip_line(const Vec3& line, double width, double height) {
  const double n = std::hypot(line.x(), line.y());
  if (!(n > 0.0) || !std::isfinite(n)) return std::nullopt;
  const double a = line.x() / n, b = line.y() / n, c = line.z() / n;
  const double tol = 1e-12 * std::max(width, height);
  std::vector<Vec2> pts;
  auto push = [&](double x, double y) {
    if (x < -tol || x > width + tol || y < -tol || y > height + tol) return;
    pts.emplace_back(std::clamp(x, 0.0, width), std::clamp(y, 0.0, height));
  };
  if (std::abs(b) > 1e-15) {
    push(0.0, -c / b);
    push(width, -(a * width + c) / b);
  }
  if (std::abs(a) > 1e-15) {
    push(-c / a, 0.0);
    push(-(b * height + c) / a, height);
  }
  if (pts.empty()) return std::nullopt;
  auto less = [](const Vec2& p, const Vec2& q) {
    return p.x() != q.x() ? p.x() < q.x() : p.y() < q.y();
  };
  const auto [lo, hi] = std::minmax_element(pts.begin(), pts.end(), less);
  return ClippedSegment{*lo, *hi};
}

std::vector<Vec2> epipolar_samples(const Vec3& line, double width, double height, int d) {
  require(d >= 2, ErrorKind::invalid_argument, "need at least two epipolar samples");
  const auto seg = clip_line(line, width, height);
  if (!seg) return {};
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(d));
  const Vec2 delta = seg->exit - seg->entry;
  for (int i = 0; i < d; ++i) {
    if (i == d - 1) {
      out.push_back(seg->exit);
    } else {
      out.push_back(seg->entry + (static_cast<double>(i) / (d - 1)) * delta);
    }
  }
  return out;
}

Mat3 feature_fundamental(const Mat3& f, const Mat3& to_input_a, const Mat3& to_input_b) {
  Mat3 s = Mat3::Identity();
  s(0, 0) = s(1, 1) = 0.25;
  const Mat3 ainv = (s * to_input_a).inverse();
  const Mat3 binv = (s * to_input_b).inverse();
  Mat3 out;
  std::array<double, 9> terms;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l) terms[static_cast<std::size_t>(3 * k + l)] = (binv(k, i) * ainv(l, j)) * f(k, l);
      std::sort(terms.begin(), terms.end());
      double acc = 0.0;
      for (double t : terms) acc += t;
      out(i, j) = acc;
    }
  return out;
}

namespace {

void push_bilinear(SamplePlan& plan, const Vec2& p, int w, int h) {
  const double u = std::clamp(p.x() - 0.5, 0.0, w - 1.0);
  const double v = std::clamp(p.y() - 0.5, 0.0, h - 1.0);
  const int u0 = static_cast<int>(u), v0 = static_cast<int>(v);
  const int u1 = std::min(u0 + 1, w - 1), v1 = std::min(v0 + 1, h - 1);
  const double fu = u - u0, fv = v - v0;
  const std::array<std::pair<int, double>, 4> taps = {
      std::pair{v0 * w + u0, (1 - fu) * (1 - fv)}, std::pair{v0 * w + u1, fu * (1 - fv)},
      std::pair{v1 * w + u0, (1 - fu) * fv}, std::pair{v1 * w + u1, fu * fv}};
  for (const auto& t : taps)
    if (t.second != 0.0) plan.taps.push_back(t);
}

}  // namespace

SamplePlan epipolar_plan(const Mat3& f_feat, const NetworkConfig& config) {
  const int w = config.feature_width(), h = config.feature_height();
  const int qw = config.query_width(), qh = config.query_height(), d = config.samples;
  SamplePlan plan;
  plan.map_size = w * h;
  plan.columns = qw * qh * d;
  plan.offsets.reserve(static_cast<std::size_t>(plan.columns) + 1);
  for (int qy = 0; qy < qh; ++qy)
    for (int qx = 0; qx < qw; ++qx) {
      const Vec3 p(qx * config.query_stride + 0.5, qy * config.query_stride + 0.5, 1.0);
      const auto samples = epipolar_samples(f_feat * p, w, h, d);
      for (int i = 0; i < d; ++i) {
        plan.offsets.push_back(static_cast<int>(plan.taps.size()));
        if (!samples.empty()) push_bilinear(plan, samples[static_cast<std::size_t>(i)], w, h);
      }
    }
  plan.offsets.push_back(static_cast<int>(plan.taps.size()));
  return plan;
}

SamplePlan query_plan(const NetworkConfig& config) {
  const int w = config.feature_width();
  SamplePlan plan;
  plan.map_size = w * config.feature_height();
  plan.columns = config.query_width() * config.query_height();
  for (int qy = 0; qy < config.query_height(); ++qy)
    for (int qx = 0; qx < config.query_width(); ++qx) {
      plan.offsets.push_back(static_cast<int>(plan.taps.size()));
      plan.taps.emplace_back(qy * config.query_stride * w + qx * config.query_stride, 1.0);
    }
  plan.offsets.push_back(static_cast<int>(plan.taps.size()));
  return plan;
}

template <typename T>
Var epipolar_cross_attention(Graph<T>& g, Weights<T>& w, Var fa, Var fb, const Mat3& f_feat) {
  const auto& cfg = w.config;
  const int c = cfg.channels;
  const Var fq = gather_samples(g, fa, query_plan(cfg));
  const Var s = gather_samples(g, fb, epipolar_plan(f_feat, cfg));
  const Var q = linear(g, fq, P(g, w, "epi.q"));
  const Var k = linear(g, s, P(g, w, "epi.k"));
  const Var v = linear(g, s, P(g, w, "epi.v"), P(g, w, "epi.v.bias"));
  const Var msg = linear(g, candidate_attention(g, q, k, v, cfg.heads, cfg.samples), P(g, w, "epi.out"));
  const Var h = relu(g, linear(g, concat_channels(g, fq, msg), P(g, w, "epi.mlp1"), P(g, w, "epi.mlp1.bias")));
  const Var out = add(g, fq, linear(g, h, P(g, w, "epi.mlp2"), P(g, w, "epi.mlp2.bias")));
  return reshape(g, out, {c, cfg.query_height(), cfg.query_width()});
}

template <typename T>
Var regress_pose_error(Graph<T>& g, Weights<T>& w, Var fia, Var fib) {
  auto branch = [&](Var x) {
    for (int i = 1; i <= 4; ++i) x = resblock(g, w, "rg.b" + std::to_string(i), x, 2);
    return avg_pool(g, x);
  };
  const Var va = branch(fia);
  const Var vb = branch(fib);
  const Var v = maximum(g, va, vb);
  const Var m1 = relu(g, norm(g, w, "rg.mlp1.bn", linear(g, v, P(g, w, "rg.mlp1"))));
  const Var m2 = relu(g, norm(g, w, "rg.mlp2.bn", linear(g, m1, P(g, w, "rg.mlp2"))));
  const Var z = linear(g, m2, P(g, w, "rg.out"), P(g, w, "rg.out.bias"));
  return scale(g, softplus(g, z), static_cast<T>(w.config.clamp_scale));
}

template <typename T>
PairFeatures<T> compute_pair_features(const PreparedImage<T>& a, const PreparedImage<T>& b,
                                      Weights<T>& w) {
  Graph<T> g(false);
  const Var fa = extract_features(g, w, g.input(a.pixels));
  const Var fb = extract_features(g, w, g.input(b.pixels));
  const auto [ta, tb] = transform_pair(g, w, fa, fb);
  return {g.value(ta), g.value(tb), a.to_input, b.to_input};
}

template <typename T>
const PairFeatures<T>& FeatureCache<T>::get(const std::string& key, const PreparedImage<T>& a,
                                            const PreparedImage<T>& b, Weights<T>& w) {
  auto it = entries_.find(key);
  if (it != entries_.end()) return it->second;
  extract_calls_ += 2;
  ++transform_calls_;
  return entries_.emplace(key, compute_pair_features(a, b, w)).first->second;
}

namespace {

void check_fundamental(const Mat3& f) {
  require(f.allFinite(), ErrorKind::non_finite, "hypothesis has non-finite entries");
  const Eigen::JacobiSVD<Mat3> svd(f);
  const auto sv = svd.singularValues();
  require(sv(0) > 0.0 && sv(1) > 1e-10 * sv(0), ErrorKind::degenerate,
          "hypothesis has rank below 2");
}

}  // namespace

template <typename T>
ScoreOutput score_hypothesis(const PairFeatures<T>& features, const Mat3& f, Weights<T>& w) {
  check_fundamental(f);
  const Mat3 ff = feature_fundamental(f, features.to_input_a, features.to_input_b);
  Graph<T> g(false);
  const Var ta = g.input(features.fa);
  const Var tb = g.input(features.fb);
  const Var fia = epipolar_cross_attention(g, w, ta, tb, ff);
  const Var fib = epipolar_cross_attention(g, w, tb, ta, Mat3(ff.transpose()));
  const auto& out = g.value(regress_pose_error(g, w, fia, fib));
  return {static_cast<double>(out.data[0]), static_cast<double>(out.data[1])};
}

template <typename T>
ScoreOutput forward_score(const PreparedImage<T>& a, const PreparedImage<T>& b, const Mat3& f,
                          Weights<T>& w, FeatureCache<T>& cache, const std::string& key) {
  return score_hypothesis(cache.get(key, a, b, w), f, w);
}

int select_hypothesis(std::span<const ScoreOutput> scores) {
  require(!scores.empty(), ErrorKind::empty_input, "selection over an empty pool");
  int best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i].max() < scores[static_cast<std::size_t>(best)].max()) best = static_cast<int>(i);
  return best;
}

// --- Losses ---------------------------------------------------------------------

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

LossValue loss_soft_l1(const ScoreOutput& pred, const PoseError& gt, double clamp_scale) {
  require(gt.trans_deg.has_value(), ErrorKind::invalid_argument,
          "ground-truth translation error is undefined");
  require(clamp_scale > 0.0, ErrorKind::invalid_argument, "clamp scale must be positive");
  auto term = [&](double target, double e, double& grad) {
    const double ge = std::tanh(e / clamp_scale);
    const double diff = std::tanh(target / clamp_scale) - ge;
    grad = -sign(diff) * (1.0 - ge * ge) / clamp_scale;
    return std::abs(diff);
  };
  LossValue out;
  out.value = term(*gt.trans_deg, pred.e_trans, out.d_trans) + term(gt.rot_deg, pred.e_rot, out.d_rot);
  return out;
}

namespace {

constexpr double kConfidenceClamp = 1e-7;

}  // namespace

double loss_weighted_ce(double confidence, int label, double w_exp) {
  const double f = std::clamp(confidence, kConfidenceClamp, 1.0 - kConfidenceClamp);
  const double ce = label ? std::log(f) : std::log(1.0 - f);
  return -std::pow(1.0 + f, w_exp) * ce;
}

double loss_weighted_ce_grad(double confidence, int label, double w_exp) {
  if (confidence < kConfidenceClamp || confidence > 1.0 - kConfidenceClamp) return 0.0;
  const double f = confidence;
  const double ce = label ? std::log(f) : std::log(1.0 - f);
  const double dce = label ? 1.0 / f : -1.0 / (1.0 - f);
  return -(w_exp * std::pow(1.0 + f, w_exp - 1.0) * ce + std::pow(1.0 + f, w_exp) * dce);
}

double confidence_from_errors(const ScoreOutput& pred) {
  return 1.0 / (1.0 + std::exp(-(10.0 - pred.max()) / 2.5));
}

int correctness_label(const PoseError& gt) { return gt.max_deg() < 10.0 ? 1 : 0; }

LossValue loss_weighted_ce(const ScoreOutput& pred, const PoseError& gt, double w_exp) {
  const double f = confidence_from_errors(pred);
  const int y = correctness_label(gt);
  LossValue out;
  out.value = loss_weighted_ce(f, y, w_exp);
  const double dmax = loss_weighted_ce_grad(f, y, w_exp) * (-f * (1.0 - f) / 2.5);
  if (pred.e_rot >= pred.e_trans)
    out.d_rot = dmax;
  else
    out.d_trans = dmax;
  return out;
}

#define EPI_FSNET_INSTANTIATE(T)                                                                  \
  template Weights<T> init_weights<T>(const NetworkConfig&, std::uint64_t);                       \
  template PreparedImage<T> prepare_image<T>(const Image&, int, int, const NetworkConfig&);       \
  template Var extract_features<T>(Graph<T>&, Weights<T>&, Var);                                  \
  template std::pair<Var, Var> transform_pair<T>(Graph<T>&, Weights<T>&, Var, Var);               \
  template Var attention_message<T>(Graph<T>&, Weights<T>&, const std::string&, Var, Var);        \
  template Var epipolar_cross_attention<T>(Graph<T>&, Weights<T>&, Var, Var, const Mat3&);        \
  template Var regress_pose_error<T>(Graph<T>&, Weights<T>&, Var, Var);                           \
  template PairFeatures<T> compute_pair_features<T>(const PreparedImage<T>&,                      \
                                                    const PreparedImage<T>&, Weights<T>&);        \
  template class FeatureCache<T>;                                                                 \
  template ScoreOutput score_hypothesis<T>(const PairFeatures<T>&, const Mat3&, Weights<T>&);     \
  template ScoreOutput forward_score<T>(const PreparedImage<T>&, const PreparedImage<T>&,         \
                                        const Mat3&, Weights<T>&, FeatureCache<T>&,               \
                                        const std::string&);

EPI_FSNET_INSTANTIATE(float)
EPI_FSNET_INSTANTIATE(double)

template Weights<float> convert_weights<float, double>(const Weights<double>&);
template Weights<double> convert_weights<double, float>(const Weights<float>&);
template Weights<float> convert_weights<float, float>(const Weights<float>&);
template Weights<double> convert_weights<double, double>(const Weights<double>&);

}  // namespace epi::nn
