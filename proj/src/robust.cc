#include "epi/robust.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "epi/error.h"
#include "epi/error_criteria.h"
#include "epi/random.h"

namespace epi {

std::string_view to_string(ModelKind k) {
  return k == ModelKind::fundamental ? "f" : "e";
}

ModelKind model_kind_from_string(std::string_view s) {
  if (s == "f" || s == "fundamental") return ModelKind::fundamental;
  if (s == "e" || s == "essential") return ModelKind::essential;
  fail(ErrorKind::parse, "unknown model kind '" + std::string(s) + "'");
}

Mat3 as_fundamental(const Mat3& model, ModelKind kind, const CameraIntrinsics& ka,
                    const CameraIntrinsics& kb) {
  if (kind == ModelKind::fundamental) return model;
  return FundamentalMatrix::from_matrix(kb.inverse().transpose() * model * ka.inverse()).matrix();
}

Mat3 HypothesisPool::fundamental(std::size_t i, const CameraIntrinsics& ka,
                                 const CameraIntrinsics& kb) const {
  return as_fundamental(hypotheses.at(i), kind, ka, kb);
}

HypothesisPool generate_pool(std::span<const Correspondence> corrs, std::size_t n, Solver solver,
                             std::uint64_t seed, const CameraIntrinsics& ka,
                             const CameraIntrinsics& kb) {
  const int m = sample_size(solver);
  require(static_cast<int>(corrs.size()) >= m, ErrorKind::insufficient_data,
          "not enough correspondences for one minimal sample");
  HypothesisPool pool;
  pool.kind = solver == Solver::e8 ? ModelKind::essential : ModelKind::fundamental;
  pool.solver = solver;
  pool.seed = seed;
  pool.hypotheses.reserve(n);
  pool.provenance.reserve(n);

  Rng rng(seed);
  std::vector<Correspondence> sample(static_cast<size_t>(m));
  const std::size_t max_attempts = 100 * n;
  while (pool.size() < n) {
    if (pool.attempts >= max_attempts)
      fail(ErrorKind::degenerate, "could not fill the pool within " +
                                      std::to_string(max_attempts) + " sampling attempts");
    ++pool.attempts;
    std::vector<int> idx = rng.sample_distinct(static_cast<int>(corrs.size()), m);
    for (int j = 0; j < m; ++j) sample[static_cast<size_t>(j)] = corrs[static_cast<size_t>(idx[j])];
    std::vector<Mat3> sols;
    try {
      sols = solve_minimal(sample, solver, ka, kb);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate) throw;
      ++pool.skipped_samples;
      continue;
    }
    for (const Mat3& s : sols) {
      if (pool.size() == n) break;
      if (!s.allFinite()) continue;
      pool.hypotheses.push_back(s);
      pool.provenance.push_back(idx);
    }
  }
  return pool;
}

std::string_view to_string(ScoreMethod m) {
  switch (m) {
    case ScoreMethod::ransac: return "ransac";
    case ScoreMethod::msac: return "msac";
    case ScoreMethod::marginalized: return "marginalized";
  }
  return "ransac";
}

ScoreMethod score_method_from_string(std::string_view s) {
  if (s == "ransac") return ScoreMethod::ransac;
  if (s == "msac") return ScoreMethod::msac;
  if (s == "marginalized") return ScoreMethod::marginalized;
  fail(ErrorKind::parse, "unknown score method '" + std::string(s) + "'");
}

std::vector<double> marginalization_thresholds(double threshold_px) {
  std::vector<double> out(8);
  for (int k = 0; k < 8; ++k) out[static_cast<size_t>(k)] = threshold_px / 4.0 * std::pow(16.0, k / 7.0);
  return out;
}

namespace {

// Residuals sorted ascending so every reduction below is order independent.
std::vector<double> sorted_sampson(const Mat3& f, std::span<const Correspondence> corrs) {
  std::vector<double> r(corrs.size());
  for (size_t i = 0; i < corrs.size(); ++i) {
    const double v = sampson_error(f, corrs[i].pa, corrs[i].pb);
    r[i] = std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  }
  std::sort(r.begin(), r.end());
  return r;
}

double msac_sorted(const std::vector<double>& r, double threshold_px) {
  const double t2 = threshold_px * threshold_px;
  double sum = 0.0;
  for (double v : r) {
    if (!(v < t2)) break;
    sum += 1.0 - v / t2;
  }
  return sum;
}

}  // namespace

ScoreOutcome score(const Mat3& f, std::span<const Correspondence> corrs, ScoreMethod method,
                   double threshold_px) {
  require(threshold_px > 0.0, ErrorKind::invalid_argument, "threshold must be positive");
  ScoreOutcome out;
  if (corrs.empty()) {
    out.empty_input = true;
    return out;
  }
  const Mat3 fc = canonicalize(f);
  const auto r = sorted_sampson(fc, corrs);
  switch (method) {
    case ScoreMethod::ransac: {
      const double t2 = threshold_px * threshold_px;
      out.value = static_cast<double>(std::lower_bound(r.begin(), r.end(), t2) - r.begin());
      break;
    }
    case ScoreMethod::msac: out.value = msac_sorted(r, threshold_px); break;
    case ScoreMethod::marginalized: {
      double sum = 0.0;
      const auto ts = marginalization_thresholds(threshold_px);
      for (double t : ts) sum += msac_sorted(r, t);
      out.value = sum / static_cast<double>(ts.size());
      break;
    }
  }
  return out;
}

int select_best(std::span<const double> values) {
  require(!values.empty(), ErrorKind::empty_input, "cannot select from an empty pool");
  int best = 0;
  for (size_t i = 1; i < values.size(); ++i) {
    const double v = values[i];
    const double b = values[static_cast<size_t>(best)];
    if (v > b || (std::isnan(b) && !std::isnan(v))) best = static_cast<int>(i);
  }
  return best;
}

int select_best(std::size_t pool_size, std::span<const ScoreRecord> records) {
  require(pool_size > 0, ErrorKind::empty_input, "cannot select from an empty pool");
  std::vector<double> values(pool_size, -std::numeric_limits<double>::infinity());
  std::vector<char> seen(pool_size, 0);
  for (const auto& r : records) {
    require(r.hypothesis_index >= 0 && static_cast<size_t>(r.hypothesis_index) < pool_size,
            ErrorKind::invalid_argument, "score record index out of range");
    values[static_cast<size_t>(r.hypothesis_index)] = r.value;
    seen[static_cast<size_t>(r.hypothesis_index)] = 1;
  }
  require(std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; }),
          ErrorKind::invalid_argument, "score records do not cover the pool");
  return select_best(values);
}

std::vector<int> inlier_indices(const Mat3& f, std::span<const Correspondence> corrs,
                                double threshold_px) {
  const double t2 = threshold_px * threshold_px;
  std::vector<int> out;
  for (size_t i = 0; i < corrs.size(); ++i)
    if (sampson_error(f, corrs[i].pa, corrs[i].pb) < t2) out.push_back(static_cast<int>(i));
  return out;
}

namespace {

using Vec9 = Eigen::Matrix<double, 9, 1>;

Mat3 unflatten(const Vec9& v) {
  Mat3 m;
  m << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  return m;
}

Vec9 flatten(const Mat3& m) {
  Vec9 v;
  v << m(0, 0), m(0, 1), m(0, 2), m(1, 0), m(1, 1), m(1, 2), m(2, 0), m(2, 1), m(2, 2);
  return v;
}

// Sampson residual vector e_i = n_i / sqrt(d_i) in pixel space and its
// Jacobian with respect to the 9 entries of a parameter matrix P, where the
// pixel-space form is F = mb * P * ma. P is the essential matrix for
// calibrated models and the Hartley-normalized F otherwise; raw pixel F
// entries span too many orders of magnitude for a well-scaled LM step.
struct SampsonSystem {
  std::vector<Correspondence> corrs;
  Mat3 mb, ma;

  Mat3 to_f(const Mat3& p) const { return mb * p * ma; }

  double cost(const Mat3& model) const {
    const Mat3 f = to_f(model);
    double c = 0.0;
    for (const auto& x : corrs) c += sampson_error(f, x.pa, x.pb);
    return c;
  }

  void linearize(const Mat3& model, Eigen::MatrixXd& jac, Eigen::VectorXd& res) const {
    const Mat3 f = to_f(model);
    const auto n = static_cast<long>(corrs.size());
    jac.resize(n, 9);
    res.resize(n);
    for (long i = 0; i < n; ++i) {
      const Vec3 a = homogeneous(corrs[static_cast<size_t>(i)].pa);
      const Vec3 b = homogeneous(corrs[static_cast<size_t>(i)].pb);
      const Vec3 fa = f * a;
      const Vec3 ftb = f.transpose() * b;
      const double num = b.dot(fa);
      const double den = fa(0) * fa(0) + fa(1) * fa(1) + ftb(0) * ftb(0) + ftb(1) * ftb(1);
      if (!(den > 0.0)) {
        res(i) = 0.0;
        jac.row(i).setZero();
        continue;
      }
      const double sd = std::sqrt(den);
      res(i) = num / sd;
      Mat3 g;  // de/dF
      for (int j = 0; j < 3; ++j) {
        for (int k = 0; k < 3; ++k) {
          double dd = 0.0;
          if (j < 2) dd += 2.0 * fa(j) * a(k);
          if (k < 2) dd += 2.0 * ftb(k) * b(j);
          g(j, k) = b(j) * a(k) / sd - 0.5 * num * dd / (den * sd);
        }
      }
      g = mb.transpose() * g * ma.transpose();
      jac.row(i) = flatten(g).transpose();
    }
  }
};

Mat3 project(const Mat3& m, ModelKind kind) {
  return kind == ModelKind::fundamental ? FundamentalMatrix::from_matrix(m).matrix()
                                        : EssentialMatrix::from_matrix(m).matrix();
}

}  // namespace

RefineResult refine(const Mat3& model, ModelKind kind, std::span<const Correspondence> corrs,
                    double threshold_px, const CameraIntrinsics& ka, const CameraIntrinsics& kb) {
  RefineResult out;
  out.model = model;
  const Mat3 f_in = as_fundamental(model, kind, ka, kb);
  const auto idx = inlier_indices(f_in, corrs, threshold_px);
  if (idx.size() < 8) {
    out.low_support = true;
    return out;
  }
  SampsonSystem sys;
  sys.corrs.reserve(idx.size());
  for (int i : idx) sys.corrs.push_back(corrs[static_cast<size_t>(i)]);
  Mat3 to_param_b, to_param_a;  // P = to_param_b * F * to_param_a
  if (kind == ModelKind::essential) {
    sys.mb = kb.inverse().transpose();
    sys.ma = ka.inverse();
    to_param_b = kb.matrix().transpose();
    to_param_a = ka.matrix();
  } else {
    std::vector<Vec2> pa, pb;
    for (const auto& c : sys.corrs) {
      pa.push_back(c.pa);
      pb.push_back(c.pb);
    }
    const Mat3 ta = hartley_normalization(pa);
    const Mat3 tb = hartley_normalization(pb);
    sys.mb = tb.transpose();
    sys.ma = ta;
    to_param_b = tb.inverse().transpose();
    to_param_a = ta.inverse();
  }
  auto to_model = [&](const Mat3& p) {
    return kind == ModelKind::essential ? p : project(sys.to_f(p), kind);
  };

  out.initial_cost = sys.cost(kind == ModelKind::essential ? model : Mat3(to_param_b * model * to_param_a));
  Mat3 current;
  try {
    const Mat3 lsq = solve_minimal(sys.corrs, kind == ModelKind::fundamental ? Solver::f8 : Solver::e8,
                                   ka, kb)
                         .front();
    current = kind == ModelKind::essential ? lsq : Mat3(to_param_b * lsq * to_param_a);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::degenerate) throw;
    current = kind == ModelKind::essential ? model : Mat3(to_param_b * model * to_param_a);
  }
  current = project(current, kind);
  double cost = sys.cost(current);

  double lambda = 1e-3;
  Eigen::MatrixXd jac;
  Eigen::VectorXd res;
  for (int it = 0; it < 50; ++it) {
    out.iterations = it + 1;
    sys.linearize(current, jac, res);
    const Eigen::Matrix<double, 9, 9> jtj = jac.transpose() * jac;
    const Vec9 jte = jac.transpose() * res;
    bool improved = false;
    double new_cost = cost;
    Mat3 candidate = current;
    for (int tries = 0; tries < 10 && !improved; ++tries) {
      Eigen::Matrix<double, 9, 9> a = jtj;
      for (int d = 0; d < 9; ++d) a(d, d) += lambda * std::max(jtj(d, d), 1e-12);
      const Vec9 step = a.ldlt().solve(-jte);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      candidate = project(unflatten(flatten(current) + step), kind);
      new_cost = sys.cost(candidate);
      if (new_cost < cost) {
        improved = true;
        lambda = std::max(lambda / 10.0, 1e-12);
      } else {
        lambda *= 10.0;
      }
    }
    if (!improved) break;
    const double rel = (cost - new_cost) / std::max(cost, 1e-300);
    current = candidate;
    cost = new_cost;
    if (rel < 1e-10) break;
  }
  out.final_cost = cost;

  const double before = score(f_in, sys.corrs, ScoreMethod::msac, threshold_px).value;
  const Mat3 refined = to_model(current);
  const double after =
      score(as_fundamental(refined, kind, ka, kb), sys.corrs, ScoreMethod::msac, threshold_px).value;
  if (after >= before && refined.allFinite()) {
    out.model = refined;
    out.accepted = true;
  } else {
    out.final_cost = out.initial_cost;
  }
  return out;
}

DegeneracyResult degeneracy_check(const Mat3& f, std::span<const Correspondence> corrs,
                                  double threshold_px, std::uint64_t seed) {
  DegeneracyResult out;
  const auto idx = inlier_indices(f, corrs, threshold_px);
  out.inliers = idx.size();
  if (idx.size() < 4) {
    out.low_support = true;
    return out;
  }
  std::vector<Correspondence> in;
  in.reserve(idx.size());
  for (int i : idx) in.push_back(corrs[static_cast<size_t>(i)]);

  auto consensus = [&](const Mat3& h, std::vector<Correspondence>* members) {
    const Mat3 h_inv = h.inverse();
    std::size_t count = 0;
    for (const auto& c : in) {
      if (symmetric_transfer_error(h, h_inv, c) < threshold_px) {
        ++count;
        if (members) members->push_back(c);
      }
    }
    return count;
  };

  Rng rng(seed);
  std::size_t best = 0;
  std::vector<Correspondence> best_members;
  std::vector<Correspondence> sample(4);
  for (int it = 0; it < 20; ++it) {
    const auto s = rng.sample_distinct(static_cast<int>(in.size()), 4);
    for (int j = 0; j < 4; ++j) sample[static_cast<size_t>(j)] = in[static_cast<size_t>(s[j])];
    Mat3 h;
    try {
      h = fit_homography(sample);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate) throw;
      continue;
    }
    if (!h.allFinite() || std::abs(h.determinant()) < 1e-300) continue;
    std::vector<Correspondence> members;
    const std::size_t count = consensus(h, &members);
    if (count > best) {
      best = count;
      best_members = std::move(members);
    }
  }
  if (best_members.size() >= 4) {
    try {
      const Mat3 h = fit_homography(best_members);
      if (h.allFinite() && std::abs(h.determinant()) > 1e-300) best = std::max(best, consensus(h, nullptr));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate) throw;
    }
  }
  out.homography_fraction = static_cast<double>(best) / static_cast<double>(in.size());
  out.homography_degenerate = out.homography_fraction >= 0.8;
  return out;
}

}  // namespace epi
