#include "epi/cli.h"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "epi/io.h"
#include "epi/nn/weights_io.h"
#include "epi/pipeline.h"
#include "epi/random.h"

namespace epi::cli {

namespace {

using io::json;

// Parses "N" or "LO-HI".
std::pair<int, int> parse_count_range(const std::string& s) {
  const auto dash = s.find('-');
  try {
    std::size_t used = 0;
    if (dash == std::string::npos) {
      const int n = std::stoi(s, &used);
      if (used == s.size()) return {n, n};
    } else {
      const std::string lo = s.substr(0, dash), hi = s.substr(dash + 1);
      std::size_t used_hi = 0;
      const int a = std::stoi(lo, &used), b = std::stoi(hi, &used_hi);
      if (used == lo.size() && used_hi == hi.size()) return {a, b};
    }
  } catch (const std::exception&) {
  }
  throw CLI::ValidationError("--n-corr", "expected N or LO-HI, got '" + s + "'");
}

std::string join_command(const std::vector<std::string>& args) {
  std::string out;
  for (const auto& a : args) {
    if (!out.empty()) out += ' ';
    out += a;
  }
  return out;
}

struct Context {
  std::string command;
};

void manifest(const Context& ctx, const std::string& stage, json seeds, json config,
              std::vector<std::string> inputs, std::vector<std::string> outputs) {
  io::RunManifest m;
  m.command = ctx.command;
  m.stage = stage;
  m.seeds = std::move(seeds);
  m.config = std::move(config);
  m.inputs = std::move(inputs);
  m.outputs = std::move(outputs);
  io::write_manifest(m);
}

void print_error(const std::string& kind_name, const std::string& message, int code) {
  const json j{{"error", json{{"kind", kind_name}, {"message", message}, {"exit_code", code}}}};
  std::cerr << j.dump() << std::endl;
}

// --- stages -------------------------------------------------------------------

struct GenScenesArgs {
  pipeline::SceneGenOptions opt;
  std::string out;
};

void gen_scenes(const Context& ctx, const GenScenesArgs& a) {
  const auto scenes = pipeline::gen_scenes(a.opt);
  const json config{{"n", a.opt.n}, {"overlap_min", a.opt.overlap_min}, {"overlap_max", a.opt.overlap_max}};
  io::write_scenes(a.out, config, scenes);
  manifest(ctx, "gen-scenes", json{{"seed", a.opt.seed}}, config, {}, {a.out});
}

struct GenPairsArgs {
  std::string scenes;
  pipeline::PairGenOptions opt;
  std::string n_corr = "200";
  std::string out;
};

void gen_pairs(const Context& ctx, GenPairsArgs a) {
  std::tie(a.opt.n_corr_min, a.opt.n_corr_max) = parse_count_range(a.n_corr);
  const auto scenes = io::read_scenes(a.scenes);
  const auto pairs = pipeline::gen_pairs(scenes, a.opt);
  const json config{{"noise_px", a.opt.noise_px},
                    {"outlier_rate", a.opt.outlier_rate},
                    {"n_corr_min", a.opt.n_corr_min},
                    {"n_corr_max", a.opt.n_corr_max}};
  io::write_pairs(a.out, config, pairs);
  manifest(ctx, "gen-pairs", json{{"seed", a.opt.seed}}, config, {a.scenes}, {a.out});
}

struct GenPoolArgs {
  std::string pairs;
  std::string model = "f";
  std::string solver;
  pipeline::PoolGenOptions opt;
  std::string out;
};

void gen_pool(const Context& ctx, GenPoolArgs a) {
  a.opt.kind = a.model == "e" ? ModelKind::essential : ModelKind::fundamental;
  if (a.solver.empty()) a.solver = a.model == "e" ? "e8" : "f7";
  a.opt.solver = solver_from_string(a.solver);
  const auto pairs = io::read_pairs(a.pairs);
  const auto res = pipeline::gen_pools(pairs, a.opt);
  json skipped = res.skipped;
  const json config{{"model", std::string(to_string(a.opt.kind))},
                    {"n", a.opt.n},
                    {"solver", a.solver},
                    {"inject_gt", a.opt.inject_gt}};
  json meta = config;
  meta["skipped_pairs"] = skipped;
  io::write_pools(a.out, meta, res.pools);
  manifest(ctx, "gen-pool", json{{"seed", a.opt.seed}}, config, {a.pairs}, {a.out});
  if (!res.skipped.empty())
    std::cerr << json{{"warning", "pairs without a pool"}, {"pairs", skipped}}.dump() << std::endl;
}

struct ScoreArgs {
  std::string pool, pairs, weights, out;
  pipeline::ScoreOptions opt;
};

void score(const Context& ctx, ScoreArgs a) {
  std::vector<std::string> inputs = {a.pool, a.pairs};
  if (a.opt.method == "fsnet") {
    if (a.weights.empty()) throw CLI::ValidationError("--weights", "required for --method fsnet");
    a.opt.weights = nn::load_weights<float>(a.weights);
    inputs.push_back(a.weights);
  }
  const auto pools = io::read_pools(a.pool);
  const auto pairs = io::read_pairs(a.pairs);
  const auto scores = pipeline::score_pools(pairs, pools, a.opt);
  const json config{{"method", a.opt.method},
                    {"threshold_px", a.opt.threshold_px},
                    {"dense_step_px", a.opt.dense_step_px}};
  io::write_scores(a.out, config, scores);
  manifest(ctx, "score", json::object(), config, inputs, {a.out});
}

struct TrainArgs {
  std::string pairs, pools, config = "desk", loss = "soft-l1", out;
  nn::TrainHyper hyper;
  std::optional<double> clamp_scale;
  bool verbose = false;
};

void train(const Context& ctx, TrainArgs a) {
  a.hyper.loss = nn::loss_kind_from_string(a.loss);
  auto config = nn::NetworkConfig::named(a.config);
  if (a.clamp_scale) config.clamp_scale = *a.clamp_scale;
  config.validate();
  const auto pairs = io::read_pairs(a.pairs);
  const auto pools = io::read_pools(a.pools);
  const auto data = pipeline::build_train_set(pairs, pools, config);
  auto init = nn::init_weights<float>(config, derive_seed(a.hyper.seed, "init"));
  const auto res = nn::train_toy(data, std::move(init), a.hyper, [&](const nn::TrainLogRow& r) {
    if (a.verbose && (r.step + 1) % 100 == 0)
      std::cerr << json{{"step", r.step + 1}, {"loss", r.loss}, {"grad_norm", r.grad_norm}}.dump()
                << std::endl;
  });
  nn::save_weights(a.out, res.weights);
  const std::string log_path = a.out + ".log.csv";
  {
    std::ostringstream os;
    nn::write_training_log(os, res.log);
    io::write_text(log_path, os.str());
  }
  const json cfg{{"config", a.config},
                 {"clamp_scale", config.clamp_scale},
                 {"lr", a.hyper.lr},
                 {"momentum", a.hyper.momentum},
                 {"batch", a.hyper.batch},
                 {"steps", a.hyper.steps},
                 {"loss", a.loss},
                 {"ce_weight", a.hyper.ce_weight}};
  manifest(ctx, "train", json{{"seed", a.hyper.seed}}, cfg, {a.pairs, a.pools}, {a.out, log_path});
}

struct EvalArgs {
  std::vector<std::string> scores;
  std::string pairs, pools, rescorer, filter = "none", rule = "max-pairwise", out;
  pipeline::EvalOptions opt;
};

void eval(const Context& ctx, EvalArgs a) {
  a.opt.filter = filter_mode_from_string(a.filter);
  a.opt.config.modality_rule =
      a.rule == "min-max-difference" ? ModalityRule::min_max_difference : ModalityRule::max_pairwise;
  if (a.opt.filter != FilterMode::none && a.rescorer.empty())
    throw CLI::ValidationError("--rescorer", "required with --filter " + a.filter);
  if (a.opt.k < 0) throw CLI::ValidationError("--k", "must be positive");

  const auto pairs = io::read_pairs(a.pairs);
  const auto pools = io::read_pools(a.pools);
  std::vector<io::ScoreFile> scores;
  for (const auto& s : a.scores) scores.push_back(io::read_scores(s));
  std::optional<io::ScoreFile> rescorer;
  if (!a.rescorer.empty()) rescorer = io::read_scores(a.rescorer);
  const auto report = pipeline::run_eval(pairs, pools, scores, rescorer ? &*rescorer : nullptr, a.opt);

  std::filesystem::create_directories(a.out);
  const auto dir = std::filesystem::path(a.out);
  const std::string report_path = (dir / "report.json").string();
  const std::string pairs_path = (dir / "pairs.csv").string();
  const std::string rot_path = (dir / "pool_rot_hist.csv").string();
  const std::string trans_path = (dir / "pool_trans_hist.csv").string();
  const json config{{"maa_max", a.opt.config.maa_max},
                    {"threshold_px", a.opt.config.threshold_px},
                    {"refine", a.opt.config.refine},
                    {"filter", a.filter},
                    {"k", a.opt.k},
                    {"modality_rule", a.rule},
                    {"modality_k", a.opt.config.modality_k}};
  io::write_text(report_path, pipeline::report_json(report, config).dump(2) + "\n");
  io::write_text(pairs_path, pipeline::pairs_csv(report));
  io::write_text(rot_path, pipeline::histogram_csv(report.pool_rot_histogram));
  io::write_text(trans_path, pipeline::histogram_csv(report.pool_trans_histogram));
  std::vector<std::string> inputs = a.scores;
  inputs.push_back(a.pairs);
  inputs.push_back(a.pools);
  if (!a.rescorer.empty()) inputs.push_back(a.rescorer);
  manifest(ctx, "eval", json::object(), config, inputs, {report_path, pairs_path, rot_path, trans_path});
}

struct GradCheckArgs {
  std::string config = "desk", loss = "both", out;
  std::uint64_t seed = 0;
  int min_params = 200;
  bool sabotage = false;
};

inline constexpr double kGradTolerance = 1e-4;

bool gradcheck(const Context& ctx, const GradCheckArgs& a) {
  const auto config = nn::NetworkConfig::named(a.config);
  const auto fx = pipeline::gradcheck_fixture(config, a.seed);
  auto w = nn::init_weights<double>(config, derive_seed(a.seed, "init"));
  std::vector<nn::LossKind> losses;
  if (a.loss == "both")
    losses = {nn::LossKind::soft_l1, nn::LossKind::weighted_ce};
  else
    losses = {nn::loss_kind_from_string(a.loss)};
  bool ok = true;
  json results = json::array();
  for (const auto kind : losses) {
    nn::GradCheckOptions o;
    o.min_params = a.min_params;
    o.seed = a.seed;
    o.loss = kind;
    o.sabotage = a.sabotage;
    const auto r = nn::grad_check(w, fx.pairs, fx.hypotheses, o);
    const bool pass = r.max_rel_error < kGradTolerance;
    ok = ok && pass;
    results.push_back(json{{"loss", nn::to_string(kind)},
                           {"max_rel_error", r.max_rel_error},
                           {"tolerance", kGradTolerance},
                           {"pass", pass},
                           {"checked", r.checked},
                           {"tensors", r.tensors},
                           {"kink_redraws", r.kink_redraws},
                           {"worst_param", r.worst_param},
                           {"worst_index", r.worst_index},
                           {"worst_analytic", r.worst_analytic},
                           {"worst_numeric", r.worst_numeric}});
  }
  const json report{{"config", a.config}, {"seed", a.seed}, {"pass", ok}, {"results", results}};
  std::cout << report.dump(2) << std::endl;
  if (!a.out.empty()) {
    io::write_text(a.out, report.dump(2) + "\n");
    manifest(ctx, "gradcheck", json{{"seed", a.seed}},
             json{{"config", a.config}, {"loss", a.loss}, {"min_params", a.min_params}, {"sabotage", a.sabotage}},
             {}, {a.out});
  }
  return ok;
}

}  // namespace

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return kExitIo;
    case ErrorKind::schema_mismatch: return kExitSchema;
    case ErrorKind::parse: return kExitParse;
    default: return kExitInvalid;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

int run(int argc, const char* const* argv) {
  Context ctx;
  ctx.command = join_command(std::vector<std::string>(argv, argv + argc));

  CLI::App app{"Two-view hypothesis scoring toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", io::kToolVersion);

  GenScenesArgs gs;
  auto* c_gs = app.add_subcommand("gen-scenes", "Generate synthetic two-view scenes");
  c_gs->add_option("--n", gs.opt.n, "Number of scenes")->capture_default_str();
  c_gs->add_option("--seed", gs.opt.seed, "Master seed")->capture_default_str();
  c_gs->add_option("--overlap-min", gs.opt.overlap_min)->capture_default_str();
  c_gs->add_option("--overlap-max", gs.opt.overlap_max)->capture_default_str();
  c_gs->add_option("--out", gs.out, "Output scenes file")->required();

  GenPairsArgs gp;
  auto* c_gp = app.add_subcommand("gen-pairs", "Sample correspondences for every scene");
  c_gp->add_option("--scenes", gp.scenes)->required();
  c_gp->add_option("--noise-px", gp.opt.noise_px)->capture_default_str();
  c_gp->add_option("--outlier-rate", gp.opt.outlier_rate)->capture_default_str();
  c_gp->add_option("--n-corr", gp.n_corr, "Count N or uniform range LO-HI")->capture_default_str();
  c_gp->add_option("--seed", gp.opt.seed)->capture_default_str();
  c_gp->add_option("--out", gp.out)->required();

  GenPoolArgs gh;
  auto* c_gh = app.add_subcommand("gen-pool", "Generate hypothesis pools");
  c_gh->add_option("--pairs", gh.pairs)->required();
  c_gh->add_option("--model", gh.model)->check(CLI::IsMember({"f", "e"}))->capture_default_str();
  c_gh->add_option("--n", gh.opt.n)->capture_default_str();
  c_gh->add_option("--solver", gh.solver, "f7|f8|e8 (default f7 for f, e8 for e)")
      ->check(CLI::IsMember({"f7", "f8", "e8"}));
  c_gh->add_option("--seed", gh.opt.seed)->capture_default_str();
  c_gh->add_flag("--inject-gt", gh.opt.inject_gt, "Insert the ground-truth model at a random position");
  c_gh->add_option("--out", gh.out)->required();

  ScoreArgs sc;
  auto* c_sc = app.add_subcommand("score", "Score every hypothesis of every pool");
  c_sc->add_option("--pool", sc.pool)->required();
  c_sc->add_option("--pairs", sc.pairs)->required();
  c_sc->add_option("--method", sc.opt.method)
      ->check(CLI::IsMember(pipeline::score_methods()))
      ->capture_default_str();
  c_sc->add_option("--threshold", sc.opt.threshold_px, "Inlier threshold in pixels")->capture_default_str();
  c_sc->add_option("--dense-step", sc.opt.dense_step_px, "oracle-sampson grid step in pixels")
      ->capture_default_str();
  c_sc->add_option("--weights", sc.weights, "Network weights (fsnet)");
  c_sc->add_option("--out", sc.out)->required();

  TrainArgs tr;
  tr.hyper.lr = 1e-3;
  tr.hyper.batch = 4;
  tr.hyper.steps = 5000;
  auto* c_tr = app.add_subcommand("train", "Train the learned scorer");
  c_tr->add_option("--pairs", tr.pairs)->required();
  c_tr->add_option("--pools", tr.pools)->required();
  c_tr->add_option("--config", tr.config)->check(CLI::IsMember({"desk", "paper"}))->capture_default_str();
  c_tr->add_option("--lr", tr.hyper.lr)->capture_default_str();
  c_tr->add_option("--momentum", tr.hyper.momentum)->capture_default_str();
  c_tr->add_option("--batch", tr.hyper.batch)->capture_default_str();
  c_tr->add_option("--steps", tr.hyper.steps)->capture_default_str();
  c_tr->add_option("--seed", tr.hyper.seed)->capture_default_str();
  c_tr->add_option("--loss", tr.loss)->check(CLI::IsMember({"soft-l1", "weighted-ce"}))->capture_default_str();
  c_tr->add_option("--ce-weight", tr.hyper.ce_weight)->capture_default_str();
  c_tr->add_option("--clamp-scale", tr.clamp_scale, "Override t_s of the config");
  c_tr->add_flag("--verbose", tr.verbose, "Log progress to stderr");
  c_tr->add_option("--out", tr.out, "Output weights file")->required();

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Evaluate selections against ground truth");
  c_ev->add_option("--scores", ev.scores, "Score files; the first is the base scorer")->required();
  c_ev->add_option("--pairs", ev.pairs)->required();
  c_ev->add_option("--pools", ev.pools)->required();
  c_ev->add_option("--maa-max", ev.opt.config.maa_max)->capture_default_str();
  c_ev->add_option("--threshold", ev.opt.config.threshold_px)->capture_default_str();
  c_ev->add_option("--filter", ev.filter)->check(CLI::IsMember({"none", "corresp", "candidate"}))->capture_default_str();
  c_ev->add_option("--k", ev.opt.k, "Candidate count (0: 10 for F, 20 for E)")->capture_default_str();
  c_ev->add_option("--rescorer", ev.rescorer, "Score file ranking the filtered hypotheses");
  c_ev->add_flag("--refine", ev.opt.config.refine, "Refine selections before measuring error");
  c_ev->add_option("--modality-rule", ev.rule)
      ->check(CLI::IsMember({"max-pairwise", "min-max-difference"}))
      ->capture_default_str();
  c_ev->add_option("--out", ev.out, "Output directory")->required();

  GradCheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Check network gradients against finite differences");
  c_gc->add_option("--config", gc.config)->check(CLI::IsMember({"desk", "paper"}))->capture_default_str();
  c_gc->add_option("--seed", gc.seed)->capture_default_str();
  c_gc->add_option("--loss", gc.loss)->check(CLI::IsMember({"soft-l1", "weighted-ce", "both"}))->capture_default_str();
  c_gc->add_option("--min-params", gc.min_params)->capture_default_str();
  c_gc->add_flag("--sabotage", gc.sabotage, "Corrupt one analytic gradient entry");
  c_gc->add_option("--out", gc.out, "Also write the report here");

  try {
    app.parse(argc, argv);
    if (c_gs->parsed()) gen_scenes(ctx, gs);
    if (c_gp->parsed()) gen_pairs(ctx, gp);
    if (c_gh->parsed()) gen_pool(ctx, gh);
    if (c_sc->parsed()) score(ctx, sc);
    if (c_tr->parsed()) train(ctx, tr);
    if (c_ev->parsed()) eval(ctx, ev);
    if (c_gc->parsed()) return gradcheck(ctx, gc) ? kExitOk : kExitFailure;
    return kExitOk;
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    std::cout << io::kToolVersion << std::endl;
    return kExitOk;
  } catch (const CLI::Error& e) {
    print_error("usage", e.what(), kExitUsage);
    return kExitUsage;
  } catch (const Error& e) {
    const int code = exit_code(e.kind());
    print_error(std::string(to_string(e.kind())), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    print_error("internal", e.what(), kExitFailure);
    return kExitFailure;
  }
}

}  // namespace epi::cli
