#include "epi/nn/weights_io.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace epi::nn {

static_assert(std::endian::native == std::endian::little, "weights files assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'F', 'S', 'N', 'W'};
constexpr std::uint32_t kMaxName = 4096;

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

void put_string(std::ostream& os, const std::string& s) {
  put(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename V>
V get(std::istream& is) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V)))
    fail(ErrorKind::parse, "weights file is truncated");
  return v;
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > kMaxName) fail(ErrorKind::parse, "weights file has an oversized name");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) fail(ErrorKind::parse, "weights file is truncated");
  return s;
}

}  // namespace

template <typename T>
void write_weights(std::ostream& os, const Weights<T>& w) {
  os.write(kMagic, 4);
  put(os, kWeightsVersion);
  const auto& c = w.config;
  put_string(os, c.name);
  for (int v : {c.height, c.width, c.channels, c.depth, c.samples, c.query_stride}) put(os, static_cast<std::int32_t>(v));
  put(os, c.clamp_scale);
  for (int v : {c.regressor_size, c.heads, c.precision}) put(os, static_cast<std::int32_t>(v));
  put(os, static_cast<std::uint32_t>(w.params.size()));
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    const auto& p = w.params[i];
    put_string(os, p.name);
    put(os, static_cast<std::uint32_t>(p.value.shape.size()));
    for (int e : p.value.shape) put(os, static_cast<std::int32_t>(e));
    for (T v : p.value.data) put(os, static_cast<double>(v));
  }
  if (!os) fail(ErrorKind::io, "failed writing weights");
}

template <typename T>
Weights<T> read_weights(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    fail(ErrorKind::schema_mismatch, "not a weights file (bad magic)");
  const auto version = get<std::uint32_t>(is);
  if (version != kWeightsVersion)
    fail(ErrorKind::schema_mismatch, "unsupported weights version " + std::to_string(version));
  NetworkConfig c;
  c.name = get_string(is);
  c.height = get<std::int32_t>(is);
  c.width = get<std::int32_t>(is);
  c.channels = get<std::int32_t>(is);
  c.depth = get<std::int32_t>(is);
  c.samples = get<std::int32_t>(is);
  c.query_stride = get<std::int32_t>(is);
  c.clamp_scale = get<double>(is);
  c.regressor_size = get<std::int32_t>(is);
  c.heads = get<std::int32_t>(is);
  c.precision = get<std::int32_t>(is);
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::parse, std::string("weights file has an invalid config: ") + e.what());
  }
  // The expected layout comes from the config; values are overwritten below.
  Weights<T> w = init_weights<T>(c, 0);
  const auto count = get<std::uint32_t>(is);
  if (count != w.params.size())
    fail(ErrorKind::parse, "weights file has " + std::to_string(count) + " tensors, expected " +
                               std::to_string(w.params.size()));
  for (std::size_t i = 0; i < count; ++i) {
    auto& p = w.params[i];
    const std::string name = get_string(is);
    if (name != p.name)
      fail(ErrorKind::parse, "weights file tensor '" + name + "' where '" + p.name + "' was expected");
    const auto rank = get<std::uint32_t>(is);
    std::vector<int> shape;
    for (std::uint32_t r = 0; r < rank && r < 8; ++r) shape.push_back(get<std::int32_t>(is));
    if (shape != p.value.shape)
      fail(ErrorKind::parse, "weights tensor '" + name + "' has shape " + shape_string(shape) +
                                 ", expected " + shape_string(p.value.shape));
    for (auto& v : p.value.data) v = static_cast<T>(get<double>(is));
  }
  return w;
}

template <typename T>
void save_weights(const std::string& path, const Weights<T>& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
  write_weights(os, w);
}

template <typename T>
Weights<T> load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open weights file '" + path + "'");
  return read_weights<T>(is);
}

template void write_weights<float>(std::ostream&, const Weights<float>&);
template void write_weights<double>(std::ostream&, const Weights<double>&);
template Weights<float> read_weights<float>(std::istream&);
template Weights<double> read_weights<double>(std::istream&);
template void save_weights<float>(const std::string&, const Weights<float>&);
template void save_weights<double>(const std::string&, const Weights<double>&);
template Weights<float> load_weights<float>(const std::string&);
template Weights<double> load_weights<double>(const std::string&);

}  // namespace epi::nn
