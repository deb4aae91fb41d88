#pragma once

#include <cstdint>
#include <random>

namespace fidelity {

/// What a random sub-stream is used for. Part of the sub-stream key so that
/// two consumers never share draws.
enum class StreamPurpose : std::uint64_t {
  EnvironmentWalk = 1,
  EnvironmentHazard = 2,
  ChannelNoise = 3,
  Policy = 4,
  Experiment = 5,
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Seed of the sub-stream (purpose, index) under a run's root seed.
constexpr std::uint64_t derive_seed(std::uint64_t root, StreamPurpose purpose,
                                    std::uint64_t index) noexcept {
  std::uint64_t s = detail::splitmix64(root);
  s = detail::splitmix64(s ^ static_cast<std::uint64_t>(purpose));
  return detail::splitmix64(s ^ (index * 0x632be59bd9b4e019ULL));
}

/// A seeded, independently reproducible random stream.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed = 0) : engine_(seed) {}
  RandomStream(std::uint64_t root, StreamPurpose purpose, std::uint64_t index)
      : engine_(derive_seed(root, purpose, index)) {}

  double normal(double mean, double stddev) {
    if (stddev == 0.0) return mean;
    std::normal_distribution<double> dist(mean, stddev);
    return dist(engine_);
  }

  /// Uniform in [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  std::uint64_t next() { return engine_(); }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fidelity
