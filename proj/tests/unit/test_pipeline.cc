#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>

#include <unistd.h>

#include "epi/cli.h"
#include "epi/error.h"
#include "epi/io.h"
#include "epi/pipeline.h"

using namespace epi;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("epi_unit_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "epi");
  return cli::run(args);
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an epi::Error");
  return ErrorKind::invalid_argument;
}

struct SmallSet {
  std::vector<io::SceneRecord> scenes;
  std::vector<io::PairRecord> pairs;
  std::vector<io::PoolRecord> pools;
};

const SmallSet& small_set() {
  static const SmallSet s = [] {
    SmallSet out;
    out.scenes = pipeline::gen_scenes({4, 21, 0.10, 0.40});
    pipeline::PairGenOptions po;
    po.outlier_rate = 0.3;
    po.n_corr_min = 60;
    po.n_corr_max = 240;
    po.seed = 22;
    out.pairs = pipeline::gen_pairs(out.scenes, po);
    pipeline::PoolGenOptions pg;
    pg.n = 40;
    pg.seed = 23;
    pg.inject_gt = true;
    out.pools = pipeline::gen_pools(out.pairs, pg).pools;
    return out;
  }();
  return s;
}

}  // namespace

TEST_CASE("non-finite numbers survive json") {
  CHECK(io::to_double(io::number(INFINITY)) == INFINITY);
  CHECK(io::to_double(io::number(-INFINITY)) == -INFINITY);
  CHECK(std::isnan(io::to_double(io::number(NAN))));
  CHECK(io::to_double(io::number(0.1)) == 0.1);
  CHECK(kind_of([] { io::to_double(io::json("x")); }) == ErrorKind::parse);
}

TEST_CASE("scene json round trip is exact") {
  const auto& s = small_set().scenes[0].scene;
  const auto r = io::scene_from_json(io::json::parse(io::to_json(s).dump()));
  CHECK(r.seed == s.seed);
  CHECK(r.gt_pose.rotation == s.gt_pose.rotation);
  CHECK(r.gt_pose.translation == s.gt_pose.translation);
  CHECK(r.ka.fx == s.ka.fx);
  CHECK(r.overlap == s.overlap);
  REQUIRE(r.planes.size() == s.planes.size());
  for (std::size_t i = 0; i < s.planes.size(); ++i) {
    CHECK(r.planes[i].origin == s.planes[i].origin);
    CHECK(r.planes[i].half_u == s.planes[i].half_u);
    CHECK(r.planes[i].texture_seed == s.planes[i].texture_seed);
  }
}

TEST_CASE("stage files round trip") {
  TempDir dir;
  const auto& set = small_set();
  io::write_pairs(dir / "pairs.jsonl", io::json::object(), set.pairs);
  const auto pairs = io::read_pairs(dir / "pairs.jsonl");
  REQUIRE(pairs.size() == set.pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(pairs[i].pair_id == set.pairs[i].pair_id);
    REQUIRE(pairs[i].set.corrs.size() == set.pairs[i].set.corrs.size());
    CHECK(pairs[i].set.inlier == set.pairs[i].set.inlier);
    for (std::size_t c = 0; c < pairs[i].set.corrs.size(); ++c) {
      CHECK(pairs[i].set.corrs[c].pa == set.pairs[i].set.corrs[c].pa);
      CHECK(pairs[i].set.corrs[c].pb == set.pairs[i].set.corrs[c].pb);
    }
  }

  io::write_pools(dir / "pools.jsonl", io::json::object(), set.pools);
  const auto pools = io::read_pools(dir / "pools.jsonl");
  REQUIRE(pools.size() == set.pools.size());
  for (std::size_t i = 0; i < pools.size(); ++i) {
    CHECK(pools[i].pool.hypotheses == set.pools[i].pool.hypotheses);
    CHECK(pools[i].pool.provenance == set.pools[i].pool.provenance);
    CHECK(pools[i].injected_index == set.pools[i].injected_index);
    CHECK(pools[i].pool.kind == set.pools[i].pool.kind);
  }

  io::ScoreFile sf;
  sf.method = "oracle-pose";
  sf.rows.push_back({"p00000", {1.0, -INFINITY, 0.5}, 0, {}, {}});
  io::write_scores(dir / "scores.jsonl", io::json::object(), sf);
  const auto back = io::read_scores(dir / "scores.jsonl");
  CHECK(back.method == "oracle-pose");
  CHECK(back.rows.at(0).scores == sf.rows[0].scores);
}

TEST_CASE("readers reject mismatched or broken files") {
  TempDir dir;
  const auto& set = small_set();
  io::write_pairs(dir / "pairs.jsonl", io::json::object(), set.pairs);
  CHECK(kind_of([&] { io::read_pools(dir / "pairs.jsonl"); }) == ErrorKind::schema_mismatch);
  CHECK(kind_of([&] { io::read_pairs(dir / "missing.jsonl"); }) == ErrorKind::io);
  io::write_text(dir / "v2.jsonl", R"({"schema":"epi.pairs","version":2,"meta":{}})"
                                   "\n");
  CHECK(kind_of([&] { io::read_pairs(dir / "v2.jsonl"); }) == ErrorKind::schema_mismatch);
  io::write_text(dir / "bad.jsonl", R"({"schema":"epi.pairs","version":1,"meta":{}})"
                                    "\n{\"pair_id\":\n");
  CHECK(kind_of([&] { io::read_pairs(dir / "bad.jsonl"); }) == ErrorKind::parse);
  io::write_text(dir / "empty.jsonl", "");
  CHECK(kind_of([&] { io::read_pairs(dir / "empty.jsonl"); }) == ErrorKind::parse);
}

TEST_CASE("stages are independent of the worker count") {
  auto run = [](const char* threads) {
    ::setenv("EPI_THREADS", threads, 1);
    auto scenes = pipeline::gen_scenes({3, 5, 0.10, 0.40});
    pipeline::PairGenOptions po;
    po.seed = 6;
    auto pairs = pipeline::gen_pairs(scenes, po);
    pipeline::PoolGenOptions pg;
    pg.n = 20;
    auto pools = pipeline::gen_pools(pairs, pg).pools;
    pipeline::ScoreOptions so;
    auto scores = pipeline::score_pools(pairs, pools, so);
    ::unsetenv("EPI_THREADS");
    io::json j = io::json::array();
    for (const auto& s : scenes) j.push_back(io::to_json(s.scene));
    for (const auto& p : pools)
      for (const auto& h : p.pool.hypotheses) j.push_back(io::number(h(0, 0)));
    for (const auto& r : scores.rows) j.push_back(r.scores);
    return j.dump();
  };
  CHECK(run("0") == run("4"));
}

TEST_CASE("gen_pools validates the model kind and injects the ground truth") {
  const auto& set = small_set();
  pipeline::PoolGenOptions pg;
  pg.kind = ModelKind::essential;
  pg.solver = Solver::f7;
  CHECK(kind_of([&] { pipeline::gen_pools(set.pairs, pg); }) == ErrorKind::invalid_argument);
  for (std::size_t i = 0; i < set.pools.size(); ++i) {
    const auto& pr = set.pools[i];
    CHECK(pr.pool.size() == 41);
    REQUIRE(pr.injected_index >= 0);
    const auto& h = pr.pool.hypotheses[static_cast<std::size_t>(pr.injected_index)];
    CHECK(pr.pool.provenance[static_cast<std::size_t>(pr.injected_index)].empty());
    const Mat3 gt = pipeline::ground_truth_model(set.pairs[i].scene, ModelKind::fundamental);
    CHECK((h - gt).norm() < 1e-12);
  }
}

TEST_CASE("oracle-pose scoring selects the injected ground truth") {
  const auto& set = small_set();
  pipeline::ScoreOptions so;
  so.method = "oracle-pose";
  const auto scores = pipeline::score_pools(set.pairs, set.pools, so);
  for (std::size_t i = 0; i < set.pools.size(); ++i) {
    const int sel = scores.rows[i].selected;
    CHECK(-scores.rows[i].scores[static_cast<std::size_t>(sel)] < 1e-6);
  }
  so.method = "nope";
  CHECK(kind_of([&] { pipeline::score_pools(set.pairs, set.pools, so); }) == ErrorKind::invalid_argument);
}

TEST_CASE("candidate filter with k = 1 keeps the base selection") {
  const auto& set = small_set();
  pipeline::ScoreOptions so;
  const auto msac = pipeline::score_pools(set.pairs, set.pools, so);
  so.method = "oracle-pose";
  const auto oracle = pipeline::score_pools(set.pairs, set.pools, so);
  const auto one = pipeline::combined_selection(set.pairs, set.pools, msac, oracle, FilterMode::candidate, 1);
  for (std::size_t i = 0; i < one.size(); ++i) CHECK(one[i] == msac.rows[i].selected);
  const auto all = pipeline::combined_selection(set.pairs, set.pools, msac, oracle, FilterMode::candidate,
                                                1000);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == oracle.rows[i].selected);
}

TEST_CASE("report fractions partition and csv matches the report") {
  const auto& set = small_set();
  pipeline::ScoreOptions so;
  std::vector<io::ScoreFile> files = {pipeline::score_pools(set.pairs, set.pools, so)};
  so.method = "ransac";
  files.push_back(pipeline::score_pools(set.pairs, set.pools, so));
  const auto report = pipeline::run_eval(set.pairs, set.pools, files, nullptr, {});
  REQUIRE(report.scorers.size() == 2);
  for (const auto& s : report.scorers) {
    double sum = 0.0;
    for (double f : s.failure_fractions) sum += f;
    CHECK(sum == 1.0);
  }
  const auto csv = pipeline::pairs_csv(report);
  CHECK(csv.rfind("pair_id,scorer,selected_index,e_R,e_t,n_corrs,failure_class\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * static_cast<long>(set.pools.size()));
  const auto j = pipeline::report_json(report, io::json::object());
  CHECK(j["scorers"][0]["scorer"] == "msac");
  CHECK(pipeline::histogram_csv(report.pool_rot_histogram).rfind("bin_lo,bin_hi,count\n", 0) == 0);
}

TEST_CASE("cli exit codes") {
  TempDir dir;
  CHECK(run_cli({}) == cli::kExitUsage);
  CHECK(run_cli({"gen-scenes", "--out", dir / "s.jsonl", "--bogus"}) == cli::kExitUsage);
  CHECK(run_cli({"gen-pairs", "--scenes", dir / "none.jsonl", "--out", dir / "p.jsonl"}) == cli::kExitIo);
  CHECK(run_cli({"gen-scenes", "--n", "2", "--seed", "3", "--out", dir / "s.jsonl"}) == cli::kExitOk);
  CHECK(run_cli({"gen-pool", "--pairs", dir / "s.jsonl", "--out", dir / "h.jsonl"}) == cli::kExitSchema);
  io::write_text(dir / "broken.jsonl", R"({"schema":"epi.scenes","version":1,"meta":{}})"
                                       "\n[1,2\n");
  CHECK(run_cli({"gen-pairs", "--scenes", dir / "broken.jsonl", "--out", dir / "p.jsonl"}) == cli::kExitParse);
  CHECK(run_cli({"gen-pairs", "--scenes", dir / "s.jsonl", "--outlier-rate", "1.5", "--out", dir / "p.jsonl"}) ==
        cli::kExitInvalid);
  CHECK(run_cli({"gen-pairs", "--scenes", dir / "s.jsonl", "--n-corr", "3-", "--out", dir / "p.jsonl"}) ==
        cli::kExitUsage);
}

TEST_CASE("cli stages write manifests and repeat byte for byte") {
  TempDir dir;
  auto stage = [&](const std::string& tag) {
    const std::string s = dir / (tag + "s.jsonl"), p = dir / (tag + "p.jsonl"), h = dir / (tag + "h.jsonl"),
                      m = dir / (tag + "m.jsonl"), o = dir / (tag + "o.jsonl");
    REQUIRE(run_cli({"gen-scenes", "--n", "3", "--seed", "1", "--out", s}) == 0);
    REQUIRE(run_cli({"gen-pairs", "--scenes", s, "--n-corr", "80-150", "--outlier-rate", "0.2", "--seed", "2",
                 "--out", p}) == 0);
    REQUIRE(run_cli({"gen-pool", "--pairs", p, "--n", "500", "--seed", "3", "--out", h}) == 0);
    REQUIRE(run_cli({"score", "--pool", h, "--pairs", p, "--method", "msac", "--out", m}) == 0);
    REQUIRE(run_cli({"score", "--pool", h, "--pairs", p, "--method", "oracle-pose", "--out", o}) == 0);
    REQUIRE(run_cli({"eval", "--scores", m, "--pairs", p, "--pools", h, "--filter", "candidate", "--k", "10",
                 "--rescorer", o, "--out", dir / (tag + "eval")}) == 0);
    std::string all;
    for (const auto& f : {s, p, h, m, o, dir / (tag + "eval/report.json"), dir / (tag + "eval/pairs.csv")})
      all += io::read_text(f);
    return all;
  };
  const auto first = stage("a");
  CHECK(first == stage("b"));

  const auto pools = io::read_pools(dir / "ah.jsonl");
  REQUIRE(pools.size() == 3);
  for (const auto& p : pools) CHECK(p.pool.size() == 500);

  const auto man = io::json::parse(io::read_text(dir / "ah.jsonl.manifest.json"));
  CHECK(man["stage"] == "gen-pool");
  CHECK(man["seeds"]["seed"] == 3);
  CHECK(man["outputs"][0]["fnv1a64"] == io::hex64(io::file_hash(dir / "ah.jsonl")));
  CHECK(man["inputs"][0]["path"] == dir / "ap.jsonl");
  CHECK(man.contains("timestamp"));
  CHECK(fs::exists(dir / "aeval/report.json.manifest.json"));
}
