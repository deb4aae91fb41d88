#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "fidelity/errors.hpp"
#include "fidelity/random.hpp"

namespace fidelity {

enum class Regime { Calm, Turbulent };

inline std::string_view to_string(Regime r) { return r == Regime::Calm ? "calm" : "turbulent"; }

/// Snapshot of the environment vector at one instant.
struct EnvState {
  double time = 0.0;
  std::vector<double> figures;
  /// Active phase of each figure's regime-switching process (Calm for other kinds).
  std::vector<Regime> phases;
  /// Label produced by label_regime over the recent history.
  Regime regime = Regime::Calm;

  static EnvState initial(std::vector<double> values) {
    EnvState s;
    s.phases.assign(values.size(), Regime::Calm);
    s.figures = std::move(values);
    return s;
  }
};

struct Constant {};
struct LinearDrift {
  double rate = 0.0;  // units per second
};
struct RandomWalk {
  double step_std = 0.0;  // units per sqrt(second)
};

using BasicProcess = std::variant<Constant, LinearDrift, RandomWalk>;

struct RegimeSwitching {
  BasicProcess calm = Constant{};
  BasicProcess turbulent = Constant{};
  double hazard = 0.0;  // switch probability per second
};

using ProcessKind = std::variant<Constant, LinearDrift, RandomWalk, RegimeSwitching>;

struct DriftProcess {
  std::size_t figure = 0;
  ProcessKind kind = Constant{};
};

struct ShockEvent {
  double at = 0.0;
  std::size_t figure = 0;
  double magnitude = 0.0;
  double recovery_window = 1.0;
};

/// The two sub-streams each figure owns.
struct FigureStreams {
  RandomStream walk;
  RandomStream hazard;

  static std::vector<FigureStreams> for_run(std::uint64_t root, std::size_t n) {
    std::vector<FigureStreams> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back({RandomStream(root, StreamPurpose::EnvironmentWalk, i),
                     RandomStream(root, StreamPurpose::EnvironmentHazard, i)});
    }
    return out;
  }
};

namespace detail {

inline void check_basic(const BasicProcess& p, std::vector<std::string>& problems,
                        const std::string& where) {
  if (const auto* w = std::get_if<RandomWalk>(&p); w && !(w->step_std >= 0.0)) {
    problems.push_back(where + ": step_std must be >= 0");
  }
}

inline double advance_basic(const BasicProcess& p, double value, double dt, RandomStream& rng) {
  return std::visit(
      [&](const auto& k) -> double {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Constant>) {
          return value;
        } else if constexpr (std::is_same_v<K, LinearDrift>) {
          return value + k.rate * dt;
        } else {
          return value + rng.normal(0.0, k.step_std * std::sqrt(dt));
        }
      },
      p);
}

}  // namespace detail

/// Problems with a process list for n figures; empty when valid.
inline std::vector<std::string> validate_processes(std::span<const DriftProcess> processes,
                                                   std::size_t n) {
  std::vector<std::string> problems;
  if (processes.size() != n) {
    problems.push_back("expected one process per figure (" + std::to_string(n) + "), got " +
                       std::to_string(processes.size()));
  }
  for (std::size_t i = 0; i < processes.size(); ++i) {
    const auto where = "process[" + std::to_string(i) + "]";
    if (processes[i].figure != i) problems.push_back(where + ": applies to figure " +
                                                     std::to_string(processes[i].figure) +
                                                     ", expected " + std::to_string(i));
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, RegimeSwitching>) {
            detail::check_basic(k.calm, problems, where + ".calm");
            detail::check_basic(k.turbulent, problems, where + ".turbulent");
            if (!(k.hazard >= 0.0 && k.hazard <= 1.0)) {
              problems.push_back(where + ": hazard must be in [0, 1]");
            }
          } else if constexpr (std::is_same_v<K, RandomWalk>) {
            detail::check_basic(k, problems, where);
          }
        },
        processes[i].kind);
  }
  return problems;
}

/// Advances the environment by dt. `streams` holds one entry per figure.
inline EnvState step_environment(const EnvState& state, std::span<const DriftProcess> processes,
                                 double dt, std::span<FigureStreams> streams) {
  if (!(dt > 0.0)) throw ConfigError("step_environment: dt must be > 0");
  const std::size_t n = state.figures.size();
  if (processes.size() != n) {
    throw ConfigError("step_environment: " + std::to_string(processes.size()) +
                      " processes for " + std::to_string(n) + " figures");
  }
  if (streams.size() != n) throw ConfigError("step_environment: one stream pair per figure required");

  EnvState next = state;
  next.time = state.time + dt;
  if (next.phases.size() != n) next.phases.assign(n, Regime::Calm);
  for (std::size_t i = 0; i < n; ++i) {
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, RegimeSwitching>) {
            const auto& active = next.phases[i] == Regime::Calm ? k.calm : k.turbulent;
            next.figures[i] = detail::advance_basic(active, state.figures[i], dt, streams[i].walk);
            if (streams[i].hazard.uniform() < std::min(1.0, k.hazard * dt)) {
              next.phases[i] = next.phases[i] == Regime::Calm ? Regime::Turbulent : Regime::Calm;
            }
          } else {
            next.figures[i] = detail::advance_basic(k, state.figures[i], dt, streams[i].walk);
          }
        },
        processes[i].kind);
  }
  return next;
}

inline EnvState apply_shock(const EnvState& state, const ShockEvent& shock) {
  if (shock.figure >= state.figures.size()) {
    throw ConfigError("apply_shock: figure index " + std::to_string(shock.figure) +
                      " out of range");
  }
  EnvState next = state;
  next.figures[shock.figure] += shock.magnitude;
  return next;
}

/// Windowed mean absolute increment across all figures of `history`.
inline double mean_abs_increment(std::span<const EnvState> history) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    const auto& a = history[i - 1].figures;
    const auto& b = history[i].figures;
    for (std::size_t j = 0; j < std::min(a.size(), b.size()); ++j) {
      sum += std::abs(b[j] - a[j]);
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

inline Regime label_regime(std::span<const EnvState> history, double threshold) {
  if (history.empty()) throw InsufficientData("label_regime: empty history");
  return mean_abs_increment(history) > threshold ? Regime::Turbulent : Regime::Calm;
}

}  // namespace fidelity
