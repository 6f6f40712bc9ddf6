#include "epi/io.h"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include "epi/error.h"
#include "epi/random.h"

namespace epi::io {

json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double to_double(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  fail(ErrorKind::parse, "expected a number, got " + j.dump());
}

namespace {

json vec(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

json mat(const Mat3& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(number(m(r, c)));
  return a;
}

Vec3 vec3(const json& j) {
  if (!j.is_array() || j.size() != 3) fail(ErrorKind::parse, "expected a 3-vector");
  return {to_double(j[0]), to_double(j[1]), to_double(j[2])};
}

Mat3 mat3(const json& j) {
  if (!j.is_array() || j.size() != 9) fail(ErrorKind::parse, "expected a 3x3 matrix");
  Mat3 m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = to_double(j[static_cast<std::size_t>(i)]);
  return m;
}

json intrinsics(const CameraIntrinsics& k) {
  return json{{"fx", number(k.fx)}, {"fy", number(k.fy)}, {"cx", number(k.cx)}, {"cy", number(k.cy)}};
}

CameraIntrinsics intrinsics(const json& j) {
  CameraIntrinsics k;
  k.fx = to_double(j.at("fx"));
  k.fy = to_double(j.at("fy"));
  k.cx = to_double(j.at("cx"));
  k.cy = to_double(j.at("cy"));
  return k;
}

const json& field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) fail(ErrorKind::parse, std::string("missing field '") + key + "'");
  return *it;
}

template <typename F>
auto parse_guard(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    fail(ErrorKind::parse, what + ": " + e.what());
  }
}

}  // namespace

json to_json(const SyntheticScene& s) {
  json planes = json::array();
  for (const auto& p : s.planes)
    planes.push_back(json{{"origin", vec(p.origin)},
                          {"axis_u", vec(p.axis_u)},
                          {"axis_v", vec(p.axis_v)},
                          {"half_u", number(p.half_u)},
                          {"half_v", number(p.half_v)},
                          {"texture_seed", p.texture_seed},
                          {"base_color", vec(p.base_color)}});
  return json{{"seed", s.seed},
              {"width", s.width},
              {"height", s.height},
              {"ka", intrinsics(s.ka)},
              {"kb", intrinsics(s.kb)},
              {"gt_pose", json{{"R", mat(s.gt_pose.rotation)}, {"t", vec(s.gt_pose.translation)}}},
              {"overlap", number(s.overlap)},
              {"planes", planes}};
}

SyntheticScene scene_from_json(const json& j) {
  return parse_guard("scene", [&] {
    SyntheticScene s;
    s.seed = field(j, "seed").get<std::uint64_t>();
    s.width = field(j, "width").get<int>();
    s.height = field(j, "height").get<int>();
    s.ka = intrinsics(field(j, "ka"));
    s.kb = intrinsics(field(j, "kb"));
    s.gt_pose.rotation = mat3(field(field(j, "gt_pose"), "R"));
    s.gt_pose.translation = vec3(field(field(j, "gt_pose"), "t"));
    s.overlap = to_double(field(j, "overlap"));
    for (const auto& pj : field(j, "planes")) {
      TexturedPlane p;
      p.origin = vec3(field(pj, "origin"));
      p.axis_u = vec3(field(pj, "axis_u"));
      p.axis_v = vec3(field(pj, "axis_v"));
      p.half_u = to_double(field(pj, "half_u"));
      p.half_v = to_double(field(pj, "half_v"));
      p.texture_seed = field(pj, "texture_seed").get<std::uint64_t>();
      p.base_color = vec3(field(pj, "base_color"));
      s.planes.push_back(p);
    }
    return s;
  });
}

std::vector<json> read_jsonl(const std::string& path, const std::string& schema, Header* header) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::io, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) fail(ErrorKind::parse, "'" + path + "' is empty");
  Header h;
  parse_guard(path + " header", [&] {
    const json j = json::parse(line);
    h.schema = j.value("schema", "");
    h.version = j.value("version", 0);
    h.meta = j.value("meta", json::object());
    return 0;
  });
  if (h.schema != schema)
    fail(ErrorKind::schema_mismatch,
         "'" + path + "' has schema '" + h.schema + "', expected '" + schema + "'");
  if (h.version != kSchemaVersion)
    fail(ErrorKind::schema_mismatch, "'" + path + "' has schema version " +
                                         std::to_string(h.version) + ", expected " +
                                         std::to_string(kSchemaVersion));
  if (header) *header = h;
  std::vector<json> out;
  std::size_t n = 1;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    out.push_back(parse_guard(path + " line " + std::to_string(n), [&] { return json::parse(line); }));
  }
  return out;
}

void write_jsonl(const std::string& path, const std::string& schema, const json& meta,
                 const std::vector<json>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
  os << json{{"schema", schema}, {"version", kSchemaVersion}, {"meta", meta}}.dump() << '\n';
  for (const auto& r : records) os << r.dump() << '\n';
  if (!os) fail(ErrorKind::io, "failed writing '" + path + "'");
}

void write_scenes(const std::string& path, const json& meta, const std::vector<SceneRecord>& scenes) {
  std::vector<json> recs;
  for (const auto& s : scenes)
    recs.push_back(json{{"scene_id", s.scene_id}, {"seed", s.seed}, {"scene", to_json(s.scene)}});
  write_jsonl(path, kScenesSchema, meta, recs);
}

std::vector<SceneRecord> read_scenes(const std::string& path) {
  std::vector<SceneRecord> out;
  for (const auto& j : read_jsonl(path, kScenesSchema))
    out.push_back(parse_guard(path, [&] {
      return SceneRecord{field(j, "scene_id").get<std::string>(), field(j, "seed").get<std::uint64_t>(),
                         scene_from_json(field(j, "scene"))};
    }));
  return out;
}

void write_pairs(const std::string& path, const json& meta, const std::vector<PairRecord>& pairs) {
  std::vector<json> recs;
  for (const auto& p : pairs) {
    json corrs = json::array();
    for (const auto& c : p.set.corrs)
      corrs.push_back(json::array({number(c.pa.x()), number(c.pa.y()), number(c.pb.x()), number(c.pb.y())}));
    json inl = json::array();
    for (char v : p.set.inlier) inl.push_back(v ? 1 : 0);
    recs.push_back(json{{"pair_id", p.pair_id},
                        {"scene_id", p.scene_id},
                        {"seed", p.seed},
                        {"noise_px", number(p.spec.noise_px)},
                        {"outlier_rate", number(p.spec.outlier_rate)},
                        {"scene", to_json(p.scene)},
                        {"corrs", corrs},
                        {"inlier", inl}});
  }
  write_jsonl(path, kPairsSchema, meta, recs);
}

std::vector<PairRecord> read_pairs(const std::string& path) {
  std::vector<PairRecord> out;
  for (const auto& j : read_jsonl(path, kPairsSchema))
    out.push_back(parse_guard(path, [&] {
      PairRecord p;
      p.pair_id = field(j, "pair_id").get<std::string>();
      p.scene_id = field(j, "scene_id").get<std::string>();
      p.seed = field(j, "seed").get<std::uint64_t>();
      p.spec.noise_px = to_double(field(j, "noise_px"));
      p.spec.outlier_rate = to_double(field(j, "outlier_rate"));
      p.scene = scene_from_json(field(j, "scene"));
      for (const auto& c : field(j, "corrs")) {
        if (!c.is_array() || c.size() != 4) fail(ErrorKind::parse, "correspondence needs 4 numbers");
        p.set.corrs.push_back({Vec2(to_double(c[0]), to_double(c[1])), Vec2(to_double(c[2]), to_double(c[3]))});
      }
      for (const auto& v : field(j, "inlier")) p.set.inlier.push_back(static_cast<char>(v.get<int>()));
      if (p.set.inlier.size() != p.set.corrs.size())
        fail(ErrorKind::parse, "pair '" + p.pair_id + "' has an inlier mask of the wrong length");
      p.spec.n_corrs_min = p.spec.n_corrs_max = static_cast<int>(p.set.corrs.size());
      return p;
    }));
  return out;
}

void write_pools(const std::string& path, const json& meta, const std::vector<PoolRecord>& pools) {
  std::vector<json> recs;
  for (const auto& r : pools) {
    json hyps = json::array();
    for (const auto& m : r.pool.hypotheses) hyps.push_back(mat(m));
    recs.push_back(json{{"pair_id", r.pair_id},
                        {"kind", std::string(to_string(r.pool.kind))},
                        {"solver", std::string(to_string(r.pool.solver))},
                        {"seed", r.pool.seed},
                        {"attempts", r.pool.attempts},
                        {"skipped_samples", r.pool.skipped_samples},
                        {"injected_index", r.injected_index},
                        {"hypotheses", hyps},
                        {"provenance", r.pool.provenance}});
  }
  write_jsonl(path, kPoolsSchema, meta, recs);
}

std::vector<PoolRecord> read_pools(const std::string& path, Header* header) {
  std::vector<PoolRecord> out;
  for (const auto& j : read_jsonl(path, kPoolsSchema, header))
    out.push_back(parse_guard(path, [&] {
      PoolRecord r;
      r.pair_id = field(j, "pair_id").get<std::string>();
      r.pool.kind = model_kind_from_string(field(j, "kind").get<std::string>());
      r.pool.solver = solver_from_string(field(j, "solver").get<std::string>());
      r.pool.seed = field(j, "seed").get<std::uint64_t>();
      r.pool.attempts = field(j, "attempts").get<std::size_t>();
      r.pool.skipped_samples = field(j, "skipped_samples").get<std::size_t>();
      r.injected_index = field(j, "injected_index").get<int>();
      for (const auto& h : field(j, "hypotheses")) r.pool.hypotheses.push_back(mat3(h));
      r.pool.provenance = field(j, "provenance").get<std::vector<std::vector<int>>>();
      if (r.pool.provenance.size() != r.pool.hypotheses.size())
        fail(ErrorKind::parse, "pool '" + r.pair_id + "' has mismatched provenance");
      return r;
    }));
  return out;
}

void write_scores(const std::string& path, const json& meta, const ScoreFile& scores) {
  json m = meta;
  m["method"] = scores.method;
  m["threshold_px"] = number(scores.threshold_px);
  std::vector<json> recs;
  for (const auto& r : scores.rows) {
    json row{{"pair_id", r.pair_id}, {"selected", r.selected}};
    json s = json::array();
    for (double v : r.scores) s.push_back(number(v));
    row["scores"] = s;
    if (!r.e_rot.empty()) {
      json er = json::array(), et = json::array();
      for (double v : r.e_rot) er.push_back(number(v));
      for (double v : r.e_trans) et.push_back(number(v));
      row["e_rot"] = er;
      row["e_trans"] = et;
    }
    recs.push_back(row);
  }
  write_jsonl(path, kScoresSchema, m, recs);
}

ScoreFile read_scores(const std::string& path) {
  Header h;
  const auto lines = read_jsonl(path, kScoresSchema, &h);
  ScoreFile f;
  parse_guard(path, [&] {
    f.method = field(h.meta, "method").get<std::string>();
    f.threshold_px = to_double(field(h.meta, "threshold_px"));
    for (const auto& j : lines) {
      ScoreRow r;
      r.pair_id = field(j, "pair_id").get<std::string>();
      r.selected = field(j, "selected").get<int>();
      for (const auto& v : field(j, "scores")) r.scores.push_back(to_double(v));
      if (j.contains("e_rot")) {
        for (const auto& v : j["e_rot"]) r.e_rot.push_back(to_double(v));
        for (const auto& v : j["e_trans"]) r.e_trans.push_back(to_double(v));
      }
      f.rows.push_back(std::move(r));
    }
    return 0;
  });
  return f;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
  os << text;
  if (!os) fail(ErrorKind::io, "failed writing '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::uint64_t file_hash(const std::string& path) { return fnv1a64(read_text(path)); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string manifest_path(const std::string& output) { return output + ".manifest.json"; }

void write_manifest(const RunManifest& m) {
  require(!m.outputs.empty(), ErrorKind::invalid_argument, "manifest without outputs");
  json inputs = json::array(), outputs = json::array();
  for (const auto& p : m.inputs) inputs.push_back(json{{"path", p}, {"fnv1a64", hex64(file_hash(p))}});
  for (const auto& p : m.outputs) outputs.push_back(json{{"path", p}, {"fnv1a64", hex64(file_hash(p))}});
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
  const json j{{"schema", "epi.manifest"},
               {"version", kSchemaVersion},
               {"tool_version", kToolVersion},
               {"stage", m.stage},
               {"command", m.command},
               {"seeds", m.seeds},
               {"config", m.config},
               {"config_hash", hex64(fnv1a64(m.config.dump()))},
               {"inputs", inputs},
               {"outputs", outputs},
               {"timestamp", stamp}};
  write_text(manifest_path(m.outputs.front()), j.dump(2) + "\n");
}

}  // namespace epi::io
