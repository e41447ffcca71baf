#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace scs {

// Seeded random source. The engine is std::mt19937_64; the conversions to
// uniform and normal variates are spelled out here because the standard
// distributions are implementation-defined and we promise bitwise
// reproducibility across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();

  void fill_normal(std::span<float> out, double stddev);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes values into a 64-bit seed (splitmix64 finalizer). Used to derive
// independent per-task / per-run streams: the result depends only on the
// arguments, never on scheduling.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept;
std::uint64_t hash_string(std::string_view s) noexcept;  // FNV-1a 64

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view key, std::uint64_t i,
                                 std::uint64_t j = 0) noexcept {
  return mix_seed(mix_seed(mix_seed(seed, hash_string(key)), i), j);
}

}  // namespace scs
