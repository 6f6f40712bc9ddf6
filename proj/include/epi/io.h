#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "epi/robust.h"
#include "epi/scene.h"

namespace epi::io {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

// Stage files are JSON lines: a header object {"schema", "version", "meta"}
// followed by one record per line.
inline constexpr const char* kScenesSchema = "epi.scenes";
inline constexpr const char* kPairsSchema = "epi.pairs";
inline constexpr const char* kPoolsSchema = "epi.pools";
inline constexpr const char* kScoresSchema = "epi.scores";

struct SceneRecord {
  std::string scene_id;
  std::uint64_t seed = 0;
  SyntheticScene scene;
};

struct PairRecord {
  std::string pair_id;
  std::string scene_id;
  std::uint64_t seed = 0;
  SyntheticScene scene;  // embedded so every later stage reads one file
  PairSpec spec;
  CorrespondenceSet set;
};

struct PoolRecord {
  std::string pair_id;
  HypothesisPool pool;
  int injected_index = -1;  // position of the injected ground truth, if any
};

struct ScoreRow {
  std::string pair_id;
  std::vector<double> scores;  // higher is better
  int selected = -1;
  // Learned scorer only: predicted errors per hypothesis.
  std::vector<double> e_rot, e_trans;
};

struct ScoreFile {
  std::string method;
  double threshold_px = 1.0;
  std::vector<ScoreRow> rows;
};

// Finite doubles as numbers; +-inf and nan as strings.
json number(double v);
double to_double(const json& j);

json to_json(const SyntheticScene& s);
SyntheticScene scene_from_json(const json& j);

struct Header {
  std::string schema;
  int version = 0;
  json meta;
};

// Reads all lines; throws io when unreadable, schema_mismatch when the
// header schema or version differs, parse on malformed lines.
std::vector<json> read_jsonl(const std::string& path, const std::string& schema, Header* header = nullptr);
void write_jsonl(const std::string& path, const std::string& schema, const json& meta,
                 const std::vector<json>& records);

void write_scenes(const std::string& path, const json& meta, const std::vector<SceneRecord>& scenes);
std::vector<SceneRecord> read_scenes(const std::string& path);

void write_pairs(const std::string& path, const json& meta, const std::vector<PairRecord>& pairs);
std::vector<PairRecord> read_pairs(const std::string& path);

void write_pools(const std::string& path, const json& meta, const std::vector<PoolRecord>& pools);
std::vector<PoolRecord> read_pools(const std::string& path, Header* header = nullptr);

void write_scores(const std::string& path, const json& meta, const ScoreFile& scores);
ScoreFile read_scores(const std::string& path);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);
std::uint64_t file_hash(const std::string& path);
std::string hex64(std::uint64_t v);

struct RunManifest {
  std::string command;
  std::string stage;
  json seeds = json::object();
  json config = json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

// Writes <first output>.manifest.json: the fields above plus the tool
// version, a hash of the config, content hashes of inputs and outputs, and
// a UTC timestamp (the only field that varies between identical runs).
void write_manifest(const RunManifest& m);
std::string manifest_path(const std::string& output);

}  // namespace epi::io
