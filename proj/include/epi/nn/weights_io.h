#pragma once

#include <iosfwd>
#include <string>

#include "epi/nn/fsnet.h"

namespace epi::nn {

inline constexpr std::uint32_t kWeightsVersion = 1;

// Binary layout (little endian): "FSNW", u32 version, config block, u32
// tensor count, then per tensor u32 name length, name bytes, u32 rank, i32
// extents, f64 values.
template <typename T>
void write_weights(std::ostream& os, const Weights<T>& w);
template <typename T>
Weights<T> read_weights(std::istream& is);

template <typename T>
void save_weights(const std::string& path, const Weights<T>& w);
// Throws io for an unreadable file, schema_mismatch for a foreign or newer
// file, parse for truncated or inconsistent content.
template <typename T>
Weights<T> load_weights(const std::string& path);

}  // namespace epi::nn
