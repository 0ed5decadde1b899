#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

namespace vit3d {

/// Counter-based pseudo-random generator used everywhere reproducibility
/// matters (synthetic data, splits, shuffling, dropout masks, mixup).
///
/// Output i of stream (key, stream) is splitmix64_mix(base + (i+1)*golden),
/// where base = splitmix64_mix(key) ^ splitmix64_mix(stream ^ golden2). The
/// sequence is a pure function of (key, stream, counter), so any derived
/// stream can be reproduced independently on any platform. All derived
/// distributions below are implemented here rather than through <random>,
/// whose distribution algorithms are implementation-defined.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key = 0, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double gamma(double shape);
  double beta(double a, double b);

  // Independent child stream; does not advance this generator.
  CounterRng split(std::uint64_t stream) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t stream_;
  std::uint64_t base_;
  std::uint64_t counter_ = 0;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

std::uint64_t splitmix64_mix(std::uint64_t x);

// Stable 64-bit FNV-1a, used to derive named streams and content hashes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Fisher-Yates using CounterRng::below, identical on every platform.
template <typename T>
void shuffle(std::span<T> items, CounterRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

std::vector<std::size_t> random_permutation(std::size_t n, CounterRng& rng);

}  // namespace vit3d
