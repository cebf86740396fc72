#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace bl {

/// Seeded generator with distribution code of our own so streams are
/// identical across standard libraries (std::normal_distribution is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[index(i)]);
  }

  /// k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> choose(std::size_t n, std::size_t k);

  std::vector<double> normal_vector(std::size_t n, double stddev);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// splitmix64 finalizer over a combined pair; used to derive child seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept;

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view text) noexcept;
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

}  // namespace bl
