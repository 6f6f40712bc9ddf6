#include "epi/nn/ops.h"

#include <algorithm>
#include <limits>
#include <cmath>
#include <memory>
#include <sstream>

#include <Eigen/Core>

namespace epi::nn {

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const RowMat<T>>;

void check(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::invalid_argument, what);
}

// Columns of the unfolded input: row (ci * k + ky) * k + kx, column oy * wo + ox.
template <typename T>
void im2col(const T* x, int cin, int h, int w, int k, int stride, int pad, int ho, int wo,
            T* cols) {
  const std::size_t p = static_cast<std::size_t>(ho) * static_cast<std::size_t>(wo);
  for (int c = 0; c < cin; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * static_cast<std::size_t>(wo);
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * static_cast<std::size_t>(h) +
                              static_cast<std::size_t>(iy)) *
                                 static_cast<std::size_t>(w);
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, int cin, int h, int w, int k, int stride, int pad, int ho, int wo,
                T* x) {
  const std::size_t p = static_cast<std::size_t>(ho) * static_cast<std::size_t>(wo);
  for (int c = 0; c < cin; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * static_cast<std::size_t>(wo);
          T* dst = x + (static_cast<std::size_t>(c) * static_cast<std::size_t>(h) +
                        static_cast<std::size_t>(iy)) *
                           static_cast<std::size_t>(w);
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

template <typename T>
Var unary(Graph<T>& g, Var x, T (*f)(T), T (*df)(T, T)) {
  const auto& xv = g.value(x);
  Tensor<T> out(xv.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(xv.data[i]);
  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {x}, [&g, x, y, df] {
    const auto& xv = g.value(x);
    const auto& yv = g.value(y);
    const auto& gy = g.grad(y);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += gy.data[i] * df(xv.data[i], yv.data[i]);
  });
}

}  // namespace

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, int stride, int pad) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  check(xv.rank() == 3 && wv.rank() == 4 && wv.dim(1) == xv.dim(0) && wv.dim(2) == wv.dim(3),
        "conv2d shape mismatch: input " + shape_string(xv.shape) + ", weight " +
            shape_string(wv.shape));
  const int cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  const int cout = wv.dim(0), k = wv.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  check(ho > 0 && wo > 0, "conv2d output would be empty");
  const int kk = cin * k * k;
  const int p = ho * wo;
  const bool direct = k == 1 && stride == 1 && pad == 0;

  auto cols = std::make_shared<std::vector<T>>();
  const T* colp = xv.ptr();
  if (!direct) {
    cols->resize(static_cast<std::size_t>(kk) * static_cast<std::size_t>(p));
    im2col(xv.ptr(), cin, h, wd, k, stride, pad, ho, wo, cols->data());
    colp = cols->data();
  }
  Tensor<T> out({cout, ho, wo});
  MapM<T>(out.ptr(), cout, p).noalias() = CMapM<T>(wv.ptr(), cout, kk) * CMapM<T>(colp, kk, p);

  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {x, w},
                  [&g, x, w, y, cols, direct, cin, h, wd, cout, k, stride, pad, ho, wo, kk, p] {
                    const auto& gy = g.grad(y);
                    const T* colp = direct ? g.value(x).ptr() : cols->data();
                    CMapM<T> dy(gy.ptr(), cout, p);
                    if (g.requires_grad(w)) {
                      auto& gw = g.grad(w);
                      MapM<T>(gw.ptr(), cout, kk).noalias() += dy * CMapM<T>(colp, kk, p).transpose();
                    }
                    if (g.requires_grad(x)) {
                      auto& gx = g.grad(x);
                      CMapM<T> wm(g.value(w).ptr(), cout, kk);
                      if (direct) {
                        MapM<T>(gx.ptr(), kk, p).noalias() += wm.transpose() * dy;
                      } else {
                        std::vector<T> dcols(static_cast<std::size_t>(kk) * static_cast<std::size_t>(p));
                        MapM<T>(dcols.data(), kk, p).noalias() = wm.transpose() * dy;
                        col2im_add(dcols.data(), cin, h, wd, k, stride, pad, ho, wo, gx.ptr());
                      }
                    }
                  });
}

template <typename T>
Var channel_affine(Graph<T>& g, Var x, Var gamma, Var beta) {
  const auto& xv = g.value(x);
  const int c = xv.dim(0);
  check(static_cast<int>(g.value(gamma).size()) == c && static_cast<int>(g.value(beta).size()) == c,
        "channel_affine parameter size mismatch");
  const std::size_t inner = xv.size() / static_cast<std::size_t>(c);
  Tensor<T> out(xv.shape);
  const auto& gm = g.value(gamma);
  const auto& bt = g.value(beta);
  for (int ch = 0; ch < c; ++ch) {
    const T a = gm.data[static_cast<std::size_t>(ch)], b = bt.data[static_cast<std::size_t>(ch)];
    const std::size_t o = static_cast<std::size_t>(ch) * inner;
    for (std::size_t i = 0; i < inner; ++i) out.data[o + i] = a * xv.data[o + i] + b;
  }
  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {x, gamma, beta}, [&g, x, gamma, beta, y, c, inner] {
    const auto& gy = g.grad(y);
    const auto& xv = g.value(x);
    const auto& gm = g.value(gamma);
    const bool dx = g.requires_grad(x), dg = g.requires_grad(gamma), db = g.requires_grad(beta);
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t o = static_cast<std::size_t>(ch) * inner;
      T sg = 0, sb = 0;
      for (std::size_t i = 0; i < inner; ++i) {
        sg += gy.data[o + i] * xv.data[o + i];
        sb += gy.data[o + i];
      }
      if (dg) g.grad(gamma).data[static_cast<std::size_t>(ch)] += sg;
      if (db) g.grad(beta).data[static_cast<std::size_t>(ch)] += sb;
      if (dx) {
        auto& gx = g.grad(x);
        const T a = gm.data[static_cast<std::size_t>(ch)];
        for (std::size_t i = 0; i < inner; ++i) gx.data[o + i] += a * gy.data[o + i];
      }
    }
  });
}

namespace {

template <typename T>
void log_signs(Graph<T>& g, Var x) {
  if (auto* log = g.branch_log())
    for (T v : g.value(x).data) log->push_back(v > T(0));
}

}  // namespace

template <typename T>
Var relu(Graph<T>& g, Var x) {
  log_signs(g, x);
  return unary<T>(
      g, x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var leaky_relu(Graph<T>& g, Var x, T slope) {
  log_signs(g, x);
  const auto& xv = g.value(x);
  Tensor<T> out(xv.shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = xv.data[i] > T(0) ? xv.data[i] : slope * xv.data[i];
  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {x}, [&g, x, y, slope] {
    const auto& xv = g.value(x);
    const auto& gy = g.grad(y);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx.data[i] += xv.data[i] > T(0) ? gy.data[i] : slope * gy.data[i];
  });
}

template <typename T>
Var softplus(Graph<T>& g, Var x) {
  return unary<T>(
      g, x,
      [](T v) { return v > T(30) ? v : std::log1p(std::exp(v)); },
      [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

template <typename T>
Var scale(Graph<T>& g, Var x, T s) {
  const auto& xv = g.value(x);
  Tensor<T> out(xv.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = s * xv.data[i];
  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {x}, [&g, x, y, s] {
    const auto& gy = g.grad(y);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += s * gy.data[i];
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  check(av.shape == bv.shape, "add shape mismatch: " + shape_string(av.shape) + " vs " +
                                  shape_string(bv.shape));
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {a, b}, [&g, a, b, y] {
    const auto& gy = g.grad(y);
    for (Var v : {a, b}) {
      if (!g.requires_grad(v)) continue;
      auto& gv = g.grad(v);
      for (std::size_t i = 0; i < gv.size(); ++i) gv.data[i] += gy.data[i];
    }
  });
}

template <typename T>
Var maximum(Graph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  check(av.shape == bv.shape, "maximum shape mismatch");
  if (auto* log = g.branch_log())
    for (std::size_t i = 0; i < av.size(); ++i) log->push_back(av.data[i] >= bv.data[i]);
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::max(av.data[i], bv.data[i]);
  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {a, b}, [&g, a, b, y] {
    const auto& gy = g.grad(y);
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    const bool da = g.requires_grad(a), db = g.requires_grad(b);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (av.data[i] >= bv.data[i]) {
        if (da) g.grad(a).data[i] += gy.data[i];
      } else if (db) {
        g.grad(b).data[i] += gy.data[i];
      }
    }
  });
}

template <typename T>
Var concat_channels(Graph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  check(av.rank() == bv.rank() &&
            std::equal(av.shape.begin() + 1, av.shape.end(), bv.shape.begin() + 1),
        "concat shape mismatch");
  auto shape = av.shape;
  shape[0] += bv.shape[0];
  Tensor<T> out(shape);
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(av.size()));
  const std::size_t na = av.size();
  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {a, b}, [&g, a, b, y, na] {
    const auto& gy = g.grad(y);
    if (g.requires_grad(a)) {
      auto& ga = g.grad(a);
      for (std::size_t i = 0; i < na; ++i) ga.data[i] += gy.data[i];
    }
    if (g.requires_grad(b)) {
      auto& gb = g.grad(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] += gy.data[na + i];
    }
  });
}

namespace {

struct Lerp1d {
  std::vector<int> i0, i1;
  std::vector<double> w1;
};

Lerp1d upsample_plan(int n) {
  Lerp1d p;
  for (int o = 0; o < 2 * n; ++o) {
    const double s = std::max(0.0, (o + 0.5) / 2.0 - 0.5);
    const int a = std::min(static_cast<int>(std::floor(s)), n - 1);
    p.i0.push_back(a);
    p.i1.push_back(std::min(a + 1, n - 1));
    p.w1.push_back(s - a);
  }
  return p;
}

}  // namespace

template <typename T>
Var upsample2x(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  check(xv.rank() == 3, "upsample2x expects [C, H, W]");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  auto py = std::make_shared<Lerp1d>(upsample_plan(h));
  auto px = std::make_shared<Lerp1d>(upsample_plan(w));
  Tensor<T> out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < 2 * h; ++oy) {
      const T wy = static_cast<T>(py->w1[static_cast<std::size_t>(oy)]);
      const int y0 = py->i0[static_cast<std::size_t>(oy)], y1 = py->i1[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < 2 * w; ++ox) {
        const T wx = static_cast<T>(px->w1[static_cast<std::size_t>(ox)]);
        const int x0 = px->i0[static_cast<std::size_t>(ox)], x1 = px->i1[static_cast<std::size_t>(ox)];
        const T top = (T(1) - wx) * xv.at(ch, y0, x0) + wx * xv.at(ch, y0, x1);
        const T bot = (T(1) - wx) * xv.at(ch, y1, x0) + wx * xv.at(ch, y1, x1);
        out.at(ch, oy, ox) = (T(1) - wy) * top + wy * bot;
      }
    }
  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {x}, [&g, x, y, py, px, c, h, w] {
    const auto& gy = g.grad(y);
    auto& gx = g.grad(x);
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < 2 * h; ++oy) {
        const T wy = static_cast<T>(py->w1[static_cast<std::size_t>(oy)]);
        const int y0 = py->i0[static_cast<std::size_t>(oy)], y1 = py->i1[static_cast<std::size_t>(oy)];
        for (int ox = 0; ox < 2 * w; ++ox) {
          const T wx = static_cast<T>(px->w1[static_cast<std::size_t>(ox)]);
          const int x0 = px->i0[static_cast<std::size_t>(ox)], x1 = px->i1[static_cast<std::size_t>(ox)];
          const T d = gy.at(ch, oy, ox);
          gx.at(ch, y0, x0) += (T(1) - wy) * (T(1) - wx) * d;
          gx.at(ch, y0, x1) += (T(1) - wy) * wx * d;
          gx.at(ch, y1, x0) += wy * (T(1) - wx) * d;
          gx.at(ch, y1, x1) += wy * wx * d;
        }
      }
  });
}

template <typename T>
Var avg_pool(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  const int c = xv.dim(0);
  const std::size_t inner = xv.size() / static_cast<std::size_t>(c);
  Tensor<T> out({c, 1});
  for (int ch = 0; ch < c; ++ch) {
    T s = 0;
    for (std::size_t i = 0; i < inner; ++i) s += xv.data[static_cast<std::size_t>(ch) * inner + i];
    out.data[static_cast<std::size_t>(ch)] = s / static_cast<T>(inner);
  }
  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {x}, [&g, x, y, c, inner] {
    const auto& gy = g.grad(y);
    auto& gx = g.grad(x);
    for (int ch = 0; ch < c; ++ch) {
      const T d = gy.data[static_cast<std::size_t>(ch)] / static_cast<T>(inner);
      for (std::size_t i = 0; i < inner; ++i) gx.data[static_cast<std::size_t>(ch) * inner + i] += d;
    }
  });
}

template <typename T>
Var linear(Graph<T>& g, Var x, Var w) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  check(wv.rank() == 2 && xv.dim(0) == wv.dim(1),
        "linear shape mismatch: input " + shape_string(xv.shape) + ", weight " +
            shape_string(wv.shape));
  const int cin = wv.dim(1), cout = wv.dim(0);
  const int n = static_cast<int>(xv.size()) / cin;
  Tensor<T> out({cout, n});
  MapM<T>(out.ptr(), cout, n).noalias() = CMapM<T>(wv.ptr(), cout, cin) * CMapM<T>(xv.ptr(), cin, n);
  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {x, w}, [&g, x, w, y, cin, cout, n] {
    CMapM<T> dy(g.grad(y).ptr(), cout, n);
    if (g.requires_grad(w))
      MapM<T>(g.grad(w).ptr(), cout, cin).noalias() +=
          dy * CMapM<T>(g.value(x).ptr(), cin, n).transpose();
    if (g.requires_grad(x))
      MapM<T>(g.grad(x).ptr(), cin, n).noalias() +=
          CMapM<T>(g.value(w).ptr(), cout, cin).transpose() * dy;
  });
}

template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  const Var y0 = linear(g, x, w);
  const auto& yv = g.value(y0);
  const int cout = yv.dim(0), n = yv.dim(1);
  check(static_cast<int>(g.value(b).size()) == cout, "linear bias size mismatch");
  Tensor<T> out = yv;
  const auto& bv = g.value(b);
  for (int r = 0; r < cout; ++r)
    for (int i = 0; i < n; ++i) out.at(r, i) += bv.data[static_cast<std::size_t>(r)];
  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {y0, b}, [&g, y0, b, y, cout, n] {
    const auto& gy = g.grad(y);
    if (g.requires_grad(y0)) {
      auto& g0 = g.grad(y0);
      for (std::size_t i = 0; i < g0.size(); ++i) g0.data[i] += gy.data[i];
    }
    if (g.requires_grad(b)) {
      auto& gb = g.grad(b);
      for (int r = 0; r < cout; ++r) {
        T s = 0;
        for (int i = 0; i < n; ++i) s += gy.at(r, i);
        gb.data[static_cast<std::size_t>(r)] += s;
      }
    }
  });
}

namespace {

template <typename T>
T phi(T x) {
  return x > T(0) ? x + T(1) : std::exp(x);
}
template <typename T>
T dphi(T x) {
  return x > T(0) ? T(1) : std::exp(x);
}

}  // namespace

template <typename T>
Var linear_attention(Graph<T>& g, Var q, Var k, Var v, int heads) {
  const auto& qv = g.value(q);
  const auto& kv = g.value(k);
  const auto& vv = g.value(v);
  check(qv.rank() == 2 && kv.rank() == 2 && vv.rank() == 2 && qv.dim(0) == kv.dim(0) &&
            kv.shape == vv.shape && heads > 0 && qv.dim(0) % heads == 0,
        "linear_attention shape mismatch");
  const int c = qv.dim(0), n = qv.dim(1), m = kv.dim(1), dh = c / heads;

  // phi(Q), phi(K) and per-head S = V phi(K)^T, z = sum_m phi(k_m).
  auto pq = std::make_shared<RowMat<T>>(c, n);
  auto pk = std::make_shared<RowMat<T>>(c, m);
  for (int i = 0; i < c * n; ++i) pq->data()[i] = phi(qv.data[static_cast<std::size_t>(i)]);
  for (int i = 0; i < c * m; ++i) pk->data()[i] = phi(kv.data[static_cast<std::size_t>(i)]);
  CMapM<T> vm(vv.ptr(), c, m);
  auto s = std::make_shared<std::vector<RowMat<T>>>();
  auto z = std::make_shared<RowMat<T>>(c, 1);
  auto den = std::make_shared<RowMat<T>>(heads, n);
  Tensor<T> out({c, n});
  MapM<T> om(out.ptr(), c, n);
  for (int h = 0; h < heads; ++h) {
    const int r = h * dh;
    s->push_back(vm.middleRows(r, dh) * pk->middleRows(r, dh).transpose());
    z->middleRows(r, dh) = pk->middleRows(r, dh).rowwise().sum();
    den->row(h) = z->middleRows(r, dh).transpose() * pq->middleRows(r, dh);
    om.middleRows(r, dh).noalias() = (*s)[static_cast<std::size_t>(h)] * pq->middleRows(r, dh);
    for (int i = 0; i < n; ++i) om.block(r, i, dh, 1) /= (*den)(h, i);
  }

  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {q, k, v}, [&g, q, k, v, y, c, n, m, dh, heads, pq, pk, s, z, den] {
    CMapM<T> gy(g.grad(y).ptr(), c, n);
    CMapM<T> om(g.value(y).ptr(), c, n);
    CMapM<T> vm(g.value(v).ptr(), c, m);
    RowMat<T> dpq(c, n), dpk(c, m), dv(c, m);
    for (int h = 0; h < heads; ++h) {
      const int r = h * dh;
      // out_n = S a_n / (a_n . z)
      RowMat<T> dnum = gy.middleRows(r, dh);
      for (int i = 0; i < n; ++i) dnum.col(i) /= (*den)(h, i);
      Eigen::Matrix<T, 1, Eigen::Dynamic> dden(n);
      for (int i = 0; i < n; ++i) dden(i) = -gy.col(i).segment(r, dh).dot(om.col(i).segment(r, dh)) / (*den)(h, i);
      const auto& sh = (*s)[static_cast<std::size_t>(h)];
      dpq.middleRows(r, dh).noalias() = sh.transpose() * dnum;
      dpq.middleRows(r, dh) += z->middleRows(r, dh) * dden;
      const RowMat<T> ds = dnum * pq->middleRows(r, dh).transpose();
      const RowMat<T> dz = pq->middleRows(r, dh) * dden.transpose();
      // S = V B^T with B = phi(K)
      dv.middleRows(r, dh).noalias() = ds * pk->middleRows(r, dh);
      dpk.middleRows(r, dh).noalias() = ds.transpose() * vm.middleRows(r, dh);
      dpk.middleRows(r, dh).colwise() += dz.col(0);
    }
    if (g.requires_grad(q)) {
      auto& gq = g.grad(q);
      const auto& qv = g.value(q);
      for (int i = 0; i < c * n; ++i)
        gq.data[static_cast<std::size_t>(i)] += dpq.data()[i] * dphi(qv.data[static_cast<std::size_t>(i)]);
    }
    if (g.requires_grad(k)) {
      auto& gk = g.grad(k);
      const auto& kv = g.value(k);
      for (int i = 0; i < c * m; ++i)
        gk.data[static_cast<std::size_t>(i)] += dpk.data()[i] * dphi(kv.data[static_cast<std::size_t>(i)]);
    }
    if (g.requires_grad(v)) MapM<T>(g.grad(v).ptr(), c, m) += dv;
  });
}

template <typename T>
Var gather_samples(Graph<T>& g, Var map, const SamplePlan& plan) {
  const auto& mv = g.value(map);
  check(mv.rank() == 3 && mv.dim(1) * mv.dim(2) == plan.map_size &&
            static_cast<int>(plan.offsets.size()) == plan.columns + 1,
        "gather_samples plan does not match the map");
  const int c = mv.dim(0), cols = plan.columns, hw = plan.map_size;
  Tensor<T> out({c, cols});
  for (int ch = 0; ch < c; ++ch) {
    const T* src = mv.ptr() + static_cast<std::size_t>(ch) * static_cast<std::size_t>(hw);
    T* dst = out.ptr() + static_cast<std::size_t>(ch) * static_cast<std::size_t>(cols);
    for (int j = 0; j < cols; ++j) {
      T acc = 0;
      for (int t = plan.offsets[static_cast<std::size_t>(j)]; t < plan.offsets[static_cast<std::size_t>(j) + 1]; ++t) {
        const auto& tap = plan.taps[static_cast<std::size_t>(t)];
        acc += static_cast<T>(tap.second) * src[tap.first];
      }
      dst[j] = acc;
    }
  }
  auto shared = std::make_shared<SamplePlan>(plan);
  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {map}, [&g, map, y, shared, c, cols, hw] {
    const auto& gy = g.grad(y);
    auto& gm = g.grad(map);
    for (int ch = 0; ch < c; ++ch) {
      T* dst = gm.ptr() + static_cast<std::size_t>(ch) * static_cast<std::size_t>(hw);
      const T* src = gy.ptr() + static_cast<std::size_t>(ch) * static_cast<std::size_t>(cols);
      for (int j = 0; j < cols; ++j)
        for (int t = shared->offsets[static_cast<std::size_t>(j)]; t < shared->offsets[static_cast<std::size_t>(j) + 1]; ++t) {
          const auto& tap = shared->taps[static_cast<std::size_t>(t)];
          dst[tap.first] += static_cast<T>(tap.second) * src[j];
        }
    }
  });
}

template <typename T>
Var candidate_attention(Graph<T>& g, Var q, Var k, Var v, int heads, int d) {
  const auto& qv = g.value(q);
  const auto& kv = g.value(k);
  const auto& vv = g.value(v);
  check(qv.rank() == 2 && kv.shape == vv.shape && kv.dim(0) == qv.dim(0) &&
            kv.dim(1) == qv.dim(1) * d && heads > 0 && qv.dim(0) % heads == 0 && d >= 1,
        "candidate_attention shape mismatch");
  const int c = qv.dim(0), nq = qv.dim(1), dh = c / heads;
  const int cols = nq * d;
  const T inv = T(1) / std::sqrt(static_cast<T>(dh));
  // Attention weights per (head, query, candidate).
  auto att = std::make_shared<std::vector<T>>(static_cast<std::size_t>(heads) *
                                              static_cast<std::size_t>(cols));
  Tensor<T> out({c, nq});
  std::vector<T> logit(static_cast<std::size_t>(d));
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < nq; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < d; ++j) {
        T s = 0;
        for (int r = h * dh; r < (h + 1) * dh; ++r) s += qv.at(r, i) * kv.at(r, i * d + j);
        logit[static_cast<std::size_t>(j)] = s * inv;
        mx = std::max(mx, logit[static_cast<std::size_t>(j)]);
      }
      T sum = 0;
      for (auto& l : logit) sum += (l = std::exp(l - mx));
      T* a = att->data() + (static_cast<std::size_t>(h) * static_cast<std::size_t>(nq) + static_cast<std::size_t>(i)) * static_cast<std::size_t>(d);
      for (int j = 0; j < d; ++j) a[j] = logit[static_cast<std::size_t>(j)] / sum;
      for (int r = h * dh; r < (h + 1) * dh; ++r) {
        T acc = 0;
        for (int j = 0; j < d; ++j) acc += a[j] * vv.at(r, i * d + j);
        out.at(r, i) = acc;
      }
    }
  Var y{static_cast<int>(g.node_count())};
  return g.record(std::move(out), {q, k, v}, [&g, q, k, v, y, att, c, nq, d, dh, heads, inv] {
    const auto& gy = g.grad(y);
    const auto& qv = g.value(q);
    const auto& kv = g.value(k);
    const auto& vv = g.value(v);
    Tensor<T> dq({c, nq}), dk({c, nq * d}), dv({c, nq * d});
    std::vector<T> da(static_cast<std::size_t>(d));
    for (int h = 0; h < heads; ++h)
      for (int i = 0; i < nq; ++i) {
        const T* a = att->data() + (static_cast<std::size_t>(h) * static_cast<std::size_t>(nq) + static_cast<std::size_t>(i)) * static_cast<std::size_t>(d);
        T dot = 0;
        for (int j = 0; j < d; ++j) {
          T s = 0;
          for (int r = h * dh; r < (h + 1) * dh; ++r) {
            s += gy.at(r, i) * vv.at(r, i * d + j);
            dv.at(r, i * d + j) += a[j] * gy.at(r, i);
          }
          da[static_cast<std::size_t>(j)] = s;
          dot += a[j] * s;
        }
        for (int j = 0; j < d; ++j) {
          const T dl = a[j] * (da[static_cast<std::size_t>(j)] - dot) * inv;
          for (int r = h * dh; r < (h + 1) * dh; ++r) {
            dq.at(r, i) += dl * kv.at(r, i * d + j);
            dk.at(r, i * d + j) += dl * qv.at(r, i);
          }
        }
      }
    auto acc = [&](Var x, const Tensor<T>& dx) {
      if (!g.requires_grad(x)) return;
      auto& gx = g.grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += dx.data[i];
    };
    acc(q, dq);
    acc(k, dk);
    acc(v, dv);
  });
}

#define EPI_NN_INSTANTIATE(T)                                                   \
  template Var conv2d<T>(Graph<T>&, Var, Var, int, int);                        \
  template Var channel_affine<T>(Graph<T>&, Var, Var, Var);                     \
  template Var relu<T>(Graph<T>&, Var);                                         \
  template Var leaky_relu<T>(Graph<T>&, Var, T);                                \
  template Var softplus<T>(Graph<T>&, Var);                                     \
  template Var scale<T>(Graph<T>&, Var, T);                                     \
  template Var add<T>(Graph<T>&, Var, Var);                                     \
  template Var maximum<T>(Graph<T>&, Var, Var);                                 \
  template Var concat_channels<T>(Graph<T>&, Var, Var);                         \
  template Var upsample2x<T>(Graph<T>&, Var);                                   \
  template Var avg_pool<T>(Graph<T>&, Var);                                     \
  template Var linear<T>(Graph<T>&, Var, Var);                                  \
  template Var linear<T>(Graph<T>&, Var, Var, Var);                             \
  template Var linear_attention<T>(Graph<T>&, Var, Var, Var, int);              \
  template Var gather_samples<T>(Graph<T>&, Var, const SamplePlan&);            \
  template Var candidate_attention<T>(Graph<T>&, Var, Var, Var, int, int);

EPI_NN_INSTANTIATE(float)
EPI_NN_INSTANTIATE(double)

}  // namespace epi::nn
