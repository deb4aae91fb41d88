#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fidelity/errors.hpp"
#include "fidelity/random.hpp"

namespace fidelity {

/// Sensing channel from one raw fact to its quale.
struct ReflectiveMap {
  std::size_t figure = 0;
  double gain = 1.0;
  double bias = 0.0;
  double noise_std = 0.0;
  double quantization = 0.0;  // 0 disables quantization
  double sampling_period = 0.1;
  double latency = 0.0;

  std::vector<std::string> problems(const std::string& where = "channel") const {
    std::vector<std::string> out;
    if (!(sampling_period > 0.0)) out.push_back(where + ".sampling_period: must be > 0");
    if (!(noise_std >= 0.0)) out.push_back(where + ".noise_std: must be >= 0");
    if (!(quantization >= 0.0)) out.push_back(where + ".quantization: must be >= 0");
    if (!(latency >= 0.0)) out.push_back(where + ".latency: must be >= 0");
    if (!std::isfinite(gain)) out.push_back(where + ".gain: must be finite");
    if (!std::isfinite(bias)) out.push_back(where + ".bias: must be finite");
    return out;
  }
};

struct Quale {
  double value = 0.0;
  double acquired_at = 0.0;
  std::size_t figure = 0;
};

struct DeltaSample {
  double time = 0.0;
  std::size_t figure = 0;
  double delta = 0.0;
};

/// Rounds to the nearest multiple of `step`, ties to even. step == 0 is the identity.
inline double quantize(double value, double step) {
  if (step == 0.0) return value;
  return step * std::nearbyint(value / step);
}

/// Noise-free part of the channel: quantize(gain * raw + bias).
inline double reflect(const ReflectiveMap& map, double raw) {
  return quantize(map.gain * raw + map.bias, map.quantization);
}

inline Quale sense(const ReflectiveMap& map, double raw, double t, RandomStream& rng) {
  const double noisy = map.gain * raw + map.bias + rng.normal(0.0, map.noise_std);
  return {quantize(noisy, map.quantization), t + map.latency, map.figure};
}

/// Additivity error q(u1 + u2) - (q(u1) + q(u2)) of the deterministic channel.
inline double preservation_distance(const ReflectiveMap& map, double u1, double u2) {
  return reflect(map, u1 + u2) - (reflect(map, u1) + reflect(map, u2));
}

/// Value a perfect channel would report under the contract's nominal gain and bias.
struct NominalChannel {
  double gain = 1.0;
  double bias = 0.0;

  double ideal(double raw) const { return gain * raw + bias; }
};

struct TimedValue {
  double time = 0.0;
  double value = 0.0;
};

/// Time-ordered Δ samples of one figure. Timestamps are strictly increasing
/// and every delta is finite.
struct DeltaTrace {
  std::size_t figure = 0;
  std::vector<DeltaSample> samples;

  void push(const DeltaSample& s) {
    if (!std::isfinite(s.delta) || !std::isfinite(s.time)) {
      throw SequencingError("DeltaTrace: non-finite sample at t=" + std::to_string(s.time));
    }
    if (!samples.empty() && !(s.time > samples.back().time)) {
      throw SequencingError("DeltaTrace: timestamps must be strictly increasing (t=" +
                            std::to_string(s.time) + ")");
    }
    samples.push_back(s);
  }

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  /// The trailing `count` samples (all of them if fewer exist).
  std::span<const DeltaSample> tail(std::size_t count) const {
    const std::size_t n = std::min(count, samples.size());
    return std::span<const DeltaSample>(samples).last(n);
  }
};

/// Per-tick delta = quale - ideal over a shared time grid.
inline DeltaTrace tracking_error(std::span<const TimedValue> ideal,
                                 std::span<const TimedValue> qualia, std::size_t figure = 0) {
  if (ideal.size() != qualia.size()) {
    throw AlignmentError("tracking_error: series lengths differ (" + std::to_string(ideal.size()) +
                         " vs " + std::to_string(qualia.size()) + ")");
  }
  DeltaTrace trace;
  trace.figure = figure;
  trace.samples.reserve(ideal.size());
  for (std::size_t i = 0; i < ideal.size(); ++i) {
    if (ideal[i].time != qualia[i].time) {
      throw AlignmentError("tracking_error: grid mismatch at index " + std::to_string(i));
    }
    trace.push({ideal[i].time, figure, qualia[i].value - ideal[i].value});
  }
  return trace;
}

}  // namespace fidelity
