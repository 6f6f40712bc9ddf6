#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace epi {

// Counter-based generator: output k is the SplitMix64 finalizer applied to
// key + k * 0x9E3779B97F4A7C15. Pure integer arithmetic, so sequences are
// identical on every platform. Distributions are implemented here rather than
// with <random>, whose distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64();
  // Uniform in [0, n), unbiased (Lemire's multiply-and-reject).
  std::uint64_t uniform_index(std::uint64_t n);
  int uniform_int(int lo, int hi);  // inclusive
  double uniform();                 // [0, 1)
  double uniform(double lo, double hi);
  double normal();  // Box-Muller, one draw per call

  // k distinct indices from [0, n), in draw order (partial Fisher-Yates).
  std::vector<int> sample_distinct(int n, int k);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

// Independent stream key for (master seed, purpose, id).
std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose, std::uint64_t id = 0);

}  // namespace epi
