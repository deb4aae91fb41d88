#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fidelity/behavior.hpp"
#include "fidelity/collective.hpp"
#include "fidelity/controller.hpp"
#include "fidelity/environment.hpp"
#include "fidelity/identity.hpp"
#include "fidelity/reflection.hpp"

namespace fidelity {

inline constexpr int kScenarioSchemaVersion = 1;

struct FigureSpec {
  std::string name;
  std::string units;
  double initial = 0.0;
};

/// Environmental coupling of a channel: adds sensitivity * e[figure] to its bias.
struct Disturbance {
  std::size_t figure = 0;
  double sensitivity = 1.0;
};

struct ChannelSpec {
  ReflectiveMap map;
  std::vector<Disturbance> disturbances;
};

struct IdentityConfig {
  /// Samples used for identity classification.
  std::size_t window = 100;
  /// CUSUM parameters and the guard window used for the per-tick contract check.
  DetectorConfig detector;
};

struct ControllerConfig {
  double alpha = 0.1;
  SafetyPredicate safety;
  std::size_t hysteresis = kDefaultHysteresis;
  SelectionPolicy policy = SelectionPolicy::Ucb1;
  double exploration = std::numbers::sqrt2;
  double epsilon = 0.1;
  /// When false the controller always enacts the first catalog strategy and never updates.
  bool learning = true;
  /// Reward normaliser; calibrated by a passive pre-run when unset.
  std::optional<double> reward_baseline;
};

struct NodeSpec {
  std::string name;
  ChannelSpec channel;
  NominalChannel nominal;
  IdentityClass contract = NonRT{};
  IdentityConfig identity;
  BehaviorClass behavior = Passive{};
  std::optional<SocialBehavior> social;
  /// Figures offered to predictive behaviors as extra regressors.
  std::vector<std::size_t> context;
  /// Intrinsic per-tick correction capacity; unbounded when unset.
  std::optional<double> capacity;
  ControllerConfig controller;
  std::vector<Strategy> catalog;
};

struct PoolSpec {
  double total_budget = 0.0;
  SocialConfig social;
};

struct RegimeSpec {
  std::size_t window = 20;
  double threshold = 0.5;
};

struct EngineSpec {
  double duration = 0.0;
  double dt = 0.1;
  std::uint64_t seed = 0;
  /// Antifragility verdict band on the normalised slope (per episode).
  double slope_band = 0.02;
  /// Declared (behavior, social) combinations for the diversity score.
  std::size_t diversity_space = kBehaviorVariants * (kSocialVariants + 1);
};

struct Scenario {
  std::string name = "scenario";
  std::vector<FigureSpec> figures;
  std::vector<DriftProcess> processes;
  RegimeSpec regime;
  std::vector<ShockEvent> shocks;
  std::optional<PoolSpec> pool;
  std::vector<NodeSpec> nodes;
  EngineSpec engine;

  std::size_t tick_count() const {
    if (!(engine.dt > 0.0) || !(engine.duration >= 0.0)) return 0;
    return static_cast<std::size_t>(std::llround(engine.duration / engine.dt));
  }
};

/// Every problem with `s`, each prefixed by its section path.
inline std::vector<std::string> validate(const Scenario& s) {
  std::vector<std::string> p;
  auto add = [&](std::vector<std::string> more) { p.insert(p.end(), more.begin(), more.end()); };
  const std::size_t n = s.figures.size();

  if (n == 0) p.push_back("environment.figures: at least one figure is required");
  {
    auto procs = validate_processes(s.processes, n);
    for (auto& m : procs) m = "environment." + m;
    add(procs);
  }
  if (s.regime.window < 2) p.push_back("environment.regime.window: must be >= 2");
  if (!(s.regime.threshold > 0.0)) p.push_back("environment.regime.threshold: must be > 0");

  const auto& e = s.engine;
  if (!(e.dt > 0.0)) p.push_back("engine.dt: must be > 0");
  if (!(e.duration >= 0.0)) p.push_back("engine.duration: must be >= 0");
  if (e.dt > 0.0 && e.duration >= 0.0) {
    const double ticks = e.duration / e.dt;
    if (std::abs(ticks - std::round(ticks)) > 1e-9 * std::max(1.0, ticks)) {
      p.push_back("engine.duration: must be an integer multiple of engine.dt");
    }
  }
  if (!(e.slope_band > 0.0)) p.push_back("engine.slope_band: must be > 0");
  if (e.diversity_space < 1) p.push_back("engine.diversity_space: must be >= 1");

  for (std::size_t i = 0; i < s.shocks.size(); ++i) {
    const auto& sh = s.shocks[i];
    const auto w = "environment.shocks[" + std::to_string(i) + "]";
    if (sh.figure >= n) p.push_back(w + ".figure: index out of range");
    if (!(sh.recovery_window > 0.0)) p.push_back(w + ".recovery_window: must be > 0");
    if (!std::isfinite(sh.magnitude)) p.push_back(w + ".magnitude: must be finite");
    if (!(sh.at >= 0.0 && sh.at < e.duration)) p.push_back(w + ".at: must lie in [0, duration)");
    if (i > 0) {
      const auto& prev = s.shocks[i - 1];
      if (!(sh.at > prev.at)) p.push_back(w + ".at: shock times must be strictly increasing");
      else if (sh.at < prev.at + prev.recovery_window) {
        p.push_back(w + ".at: recovery window of shock " + std::to_string(i - 1) +
                    " overlaps this shock");
      }
    }
  }

  if (s.pool && !(s.pool->total_budget >= 0.0)) p.push_back("pool.total_budget: must be >= 0");
  if (s.pool && s.pool->social.assist_quantum.micro <= 0) {
    p.push_back("pool.assist_quantum: must be > 0");
  }

  if (s.nodes.empty()) p.push_back("nodes: at least one node is required");
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    const auto& node = s.nodes[i];
    const auto w = "nodes[" + std::to_string(i) + "]";
    add(node.channel.map.problems(w + ".channel"));
    if (node.channel.map.figure >= n) p.push_back(w + ".channel.figure: index out of range");
    for (std::size_t d = 0; d < node.channel.disturbances.size(); ++d) {
      const auto& dist = node.channel.disturbances[d];
      const auto dw = w + ".channel.disturbances[" + std::to_string(d) + "]";
      if (dist.figure >= n) p.push_back(dw + ".figure: index out of range");
      if (!std::isfinite(dist.sensitivity)) p.push_back(dw + ".sensitivity: must be finite");
    }
    for (std::size_t c = 0; c < node.context.size(); ++c) {
      if (node.context[c] >= n) {
        p.push_back(w + ".context[" + std::to_string(c) + "]: index out of range");
      }
    }
    add(contract_problems(node.contract, w + ".contract"));
    if (node.identity.window < 1) p.push_back(w + ".identity.window: must be >= 1");
    add(node.identity.detector.problems(w + ".identity.detector"));
    add(behavior_problems(node.behavior, node.context.size(), w + ".behavior"));
    if (node.capacity && !(*node.capacity > 0.0)) p.push_back(w + ".capacity: must be > 0");
    if (node.social && !s.pool) p.push_back(w + ".social: requires a pool section");

    const auto& c = node.controller;
    const auto cw = w + ".controller";
    if (!(c.alpha > 0.0 && c.alpha <= 1.0)) p.push_back(cw + ".alpha: must be in (0, 1]");
    add(c.safety.problems(cw));
    if (c.hysteresis < 1) p.push_back(cw + ".hysteresis: must be >= 1");
    if (!(c.exploration >= 0.0)) p.push_back(cw + ".exploration: must be >= 0");
    if (!(c.epsilon >= 0.0 && c.epsilon <= 1.0)) p.push_back(cw + ".epsilon: must be in [0, 1]");
    if (c.reward_baseline && !(*c.reward_baseline > 0.0)) {
      p.push_back(cw + ".reward_baseline: must be > 0");
    }
    add(catalog_problems(node.catalog, node.context.size(), w + ".catalog"));
    for (const auto& st : node.catalog) {
      if (std::holds_alternative<SocialMove>(st.kind) && !s.pool) {
        p.push_back(w + ".catalog: social strategy '" + st.id + "' requires a pool section");
      }
    }
  }
  return p;
}

}  // namespace fidelity
