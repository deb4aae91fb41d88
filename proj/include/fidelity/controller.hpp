#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fidelity/behavior.hpp"
#include "fidelity/collective.hpp"
#include "fidelity/environment.hpp"
#include "fidelity/errors.hpp"
#include "fidelity/identity.hpp"
#include "fidelity/random.hpp"

namespace fidelity {

enum class Mode { Elastic, Resilient };

inline std::string_view to_string(Mode m) { return m == Mode::Elastic ? "elastic" : "resilient"; }

// ---------------------------------------------------------------------------
// Monitoring

/// EWMA mean and variance of |Δ| plus the EWMA values over the trend horizon.
class MonitorState {
 public:
  explicit MonitorState(double alpha = 0.1, std::size_t horizon = 10)
      : alpha_(alpha), horizon_(std::max<std::size_t>(horizon, 1)) {}

  double alpha() const noexcept { return alpha_; }
  std::size_t horizon() const noexcept { return horizon_; }
  double ewma() const noexcept { return ewma_; }
  double ewma_variance() const noexcept { return variance_; }
  std::size_t count() const noexcept { return count_; }
  std::optional<double> last_time() const noexcept { return last_time_; }
  Regime regime() const noexcept { return regime_; }

  /// Change of the EWMA across the horizon (0 until the horizon has filled).
  double trend() const {
    if (past_.size() <= horizon_) return 0.0;
    return past_.back() - past_.front();
  }

 private:
  friend MonitorState monitor_step(MonitorState, const DeltaSample&, Regime);

  double alpha_;
  std::size_t horizon_;
  double ewma_ = 0.0;
  double variance_ = 0.0;
  std::size_t count_ = 0;
  std::optional<double> last_time_;
  Regime regime_ = Regime::Calm;
  std::deque<double> past_;
};

inline MonitorState monitor_step(MonitorState state, const DeltaSample& sample, Regime regime) {
  if (state.last_time_ && !(sample.time > *state.last_time_)) {
    throw SequencingError("monitor_step: sample at t=" + std::to_string(sample.time) +
                          " is not after t=" + std::to_string(*state.last_time_));
  }
  const double x = std::abs(sample.delta);
  const double diff = x - state.ewma_;
  state.ewma_ += state.alpha_ * diff;
  state.variance_ = (1.0 - state.alpha_) * (state.variance_ + state.alpha_ * diff * diff);
  state.last_time_ = sample.time;
  state.regime_ = regime;
  ++state.count_;
  state.past_.push_back(state.ewma_);
  while (state.past_.size() > state.horizon_ + 1) state.past_.pop_front();
  return state;
}

// ---------------------------------------------------------------------------
// Safety and mode

struct SafetyPredicate {
  double turbulence_threshold = 1.0;
  /// Contract utilisation above which the guard reports AtRisk.
  double margin_threshold = kDefaultAtRiskRatio;
  std::size_t horizon = 10;

  std::vector<std::string> problems(const std::string& where = "safety") const {
    std::vector<std::string> out;
    if (!(turbulence_threshold > 0.0)) out.push_back(where + ".turbulence_threshold: must be > 0");
    if (!(margin_threshold > 0.0)) out.push_back(where + ".margin_threshold: must be > 0");
    if (horizon < 1) out.push_back(where + ".horizon: must be >= 1");
    return out;
  }
};

enum class Safety { Safe, Unsafe };

/// Comparisons are strict: a trend exactly at the threshold is Safe.
inline Safety assess_safety(const MonitorState& monitor, const SafetyPredicate& predicate,
                            ContractStatus status) {
  if (status != ContractStatus::Holding) return Safety::Unsafe;
  return monitor.trend() > predicate.turbulence_threshold ? Safety::Unsafe : Safety::Safe;
}

struct ModeState {
  Mode mode = Mode::Elastic;
  std::size_t safe_streak = 0;
};

inline constexpr std::size_t kDefaultHysteresis = 10;

/// Unsafe enters Resilient at once; leaving needs `hysteresis` consecutive Safe verdicts.
inline ModeState switch_mode(ModeState current, Safety verdict,
                             std::size_t hysteresis = kDefaultHysteresis) {
  if (verdict == Safety::Unsafe) return {Mode::Resilient, 0};
  if (current.mode == Mode::Elastic) return {Mode::Elastic, 0};
  const std::size_t streak = current.safe_streak + 1;
  if (streak >= hysteresis) return {Mode::Elastic, 0};
  return {Mode::Resilient, streak};
}

/// Replays a verdict timeline into the mode timeline.
inline std::vector<Mode> replay_modes(std::span<const Safety> verdicts,
                                      std::size_t hysteresis = kDefaultHysteresis) {
  std::vector<Mode> out;
  out.reserve(verdicts.size());
  ModeState s;
  for (auto v : verdicts) {
    s = switch_mode(s, v, hysteresis);
    out.push_back(s.mode);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Strategies

/// Channel parameters a reconfiguration may replace. Unset fields are kept.
struct ChannelOverrides {
  std::optional<double> gain;
  std::optional<double> noise_std;
  std::optional<double> quantization;
  std::optional<double> sampling_period;
  std::optional<double> latency;

  ReflectiveMap apply(ReflectiveMap m) const {
    if (gain) m.gain = *gain;
    if (noise_std) m.noise_std = *noise_std;
    if (quantization) m.quantization = *quantization;
    if (sampling_period) m.sampling_period = *sampling_period;
    if (latency) m.latency = *latency;
    return m;
  }
};

struct Reconfigure {
  BehaviorClass behavior = Passive{};
  ChannelOverrides channel;
};

enum class SocialTemplate { Join, Leave, Grab, Assist };

/// Social strategy. Grab and Assist take `amount`; Assist targets the
/// neighbor in the worst state at enactment time.
struct SocialMove {
  SocialTemplate action = SocialTemplate::Join;
  double amount = 0.0;
};

struct Strategy {
  std::string id;
  std::variant<Reconfigure, SocialMove> kind;
};

inline std::vector<std::string> catalog_problems(std::span<const Strategy> catalog,
                                                 std::size_t context_count,
                                                 const std::string& where = "catalog") {
  std::vector<std::string> out;
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    const auto w = where + "[" + std::to_string(i) + "]";
    if (catalog[i].id.empty()) out.push_back(w + ".id: must not be empty");
    if (!seen.emplace(catalog[i].id, i).second) {
      out.push_back(w + ".id: duplicate identifier '" + catalog[i].id + "'");
    }
    if (const auto* r = std::get_if<Reconfigure>(&catalog[i].kind)) {
      auto p = behavior_problems(r->behavior, context_count, w + ".behavior");
      out.insert(out.end(), p.begin(), p.end());
      const auto& c = r->channel;
      if (c.sampling_period && !(*c.sampling_period > 0.0)) out.push_back(w + ".channel.sampling_period: must be > 0");
      if (c.noise_std && !(*c.noise_std >= 0.0)) out.push_back(w + ".channel.noise_std: must be >= 0");
      if (c.quantization && !(*c.quantization >= 0.0)) out.push_back(w + ".channel.quantization: must be >= 0");
      if (c.latency && !(*c.latency >= 0.0)) out.push_back(w + ".channel.latency: must be >= 0");
    } else {
      const auto& s = std::get<SocialMove>(catalog[i].kind);
      const bool needs_amount = s.action == SocialTemplate::Grab || s.action == SocialTemplate::Assist;
      if (needs_amount && !(s.amount > 0.0)) out.push_back(w + ".amount: must be > 0");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Learning

enum class SelectionPolicy { Ucb1, EpsilonGreedy };

struct ArmStats {
  std::string strategy_id;
  std::size_t pulls = 0;
  double mean = 0.0;
  std::size_t rank = 0;
};

struct LearningRecord {
  std::size_t episode = 0;
  Regime regime = Regime::Calm;
  std::string strategy_id;
  double reward = 0.0;
};

struct LearningState {
  SelectionPolicy policy = SelectionPolicy::Ucb1;
  double exploration = std::numbers::sqrt2;
  double epsilon = 0.1;
  std::map<Regime, std::vector<ArmStats>> arms;
  std::vector<LearningRecord> history;

  static LearningState for_catalog(std::span<const Strategy> catalog) {
    LearningState s;
    for (auto regime : {Regime::Calm, Regime::Turbulent}) {
      auto& arms = s.arms[regime];
      for (std::size_t i = 0; i < catalog.size(); ++i) arms.push_back({catalog[i].id, 0, 0.0, i});
    }
    return s;
  }
};

namespace detail {

inline void check_catalog_matches(const std::vector<ArmStats>& arms,
                                  std::span<const Strategy> catalog) {
  if (arms.size() != catalog.size()) throw CatalogError("learning state does not match catalog size");
  for (std::size_t i = 0; i < arms.size(); ++i) {
    if (arms[i].strategy_id != catalog[i].id) {
      throw CatalogError("learning state arm '" + arms[i].strategy_id +
                         "' does not match catalog entry '" + catalog[i].id + "'");
    }
  }
}

inline void recompute_ranks(std::vector<ArmStats>& arms) {
  std::vector<std::size_t> order(arms.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return arms[a].mean > arms[b].mean; });
  for (std::size_t r = 0; r < order.size(); ++r) arms[order[r]].rank = r;
}

}  // namespace detail

/// Index of the strategy to try next for `regime`.
inline std::size_t select_strategy_index(const LearningState& learning, Regime regime,
                                         std::span<const Strategy> catalog, RandomStream& rng) {
  if (catalog.empty()) throw ConfigError("select_strategy: empty catalog");
  const auto it = learning.arms.find(regime);
  if (it == learning.arms.end()) throw CatalogError("select_strategy: no arms for regime");
  const auto& arms = it->second;
  detail::check_catalog_matches(arms, catalog);

  for (std::size_t i = 0; i < arms.size(); ++i) {
    if (arms[i].pulls == 0) return i;
  }

  if (learning.policy == SelectionPolicy::EpsilonGreedy && rng.uniform() < learning.epsilon) {
    return static_cast<std::size_t>(rng.next() % arms.size());
  }

  double total = 0.0;
  for (const auto& a : arms) total += static_cast<double>(a.pulls);
  const double log_total = std::log(total);

  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < arms.size(); ++i) {
    double score = arms[i].mean;
    if (learning.policy == SelectionPolicy::Ucb1) {
      score += learning.exploration * std::sqrt(log_total / static_cast<double>(arms[i].pulls));
    }
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

inline const Strategy& select_strategy(const LearningState& learning, Regime regime,
                                       std::span<const Strategy> catalog, RandomStream& rng) {
  return catalog[select_strategy_index(learning, regime, catalog, rng)];
}

/// Reward in [0, 1]: 1 - clamp(cost / baseline, 0, 1).
inline double episode_reward(double integrated_abs_delta, double baseline) {
  if (!(baseline > 0.0)) return integrated_abs_delta <= 0.0 ? 1.0 : 0.0;
  return 1.0 - std::clamp(integrated_abs_delta / baseline, 0.0, 1.0);
}

struct EpisodeOutcome {
  std::size_t episode = 0;
  double integrated_abs_delta = 0.0;
  double baseline = 1.0;
};

inline LearningState evaluate_and_learn(LearningState learning, const EpisodeOutcome& outcome,
                                        const std::string& strategy_id, Regime regime) {
  auto it = learning.arms.find(regime);
  if (it == learning.arms.end()) throw CatalogError("evaluate_and_learn: no arms for regime");
  auto arm = std::find_if(it->second.begin(), it->second.end(),
                          [&](const ArmStats& a) { return a.strategy_id == strategy_id; });
  if (arm == it->second.end()) {
    throw CatalogError("evaluate_and_learn: unknown strategy '" + strategy_id + "'");
  }
  const double reward = episode_reward(outcome.integrated_abs_delta, outcome.baseline);
  arm->pulls += 1;
  arm->mean += (reward - arm->mean) / static_cast<double>(arm->pulls);
  detail::recompute_ranks(it->second);
  learning.history.push_back({outcome.episode, regime, strategy_id, reward});
  return learning;
}

// ---------------------------------------------------------------------------
// Persistence

inline constexpr int kLearningSchemaVersion = 1;

inline nlohmann::json to_json(const LearningState& s) {
  nlohmann::json j;
  j["version"] = kLearningSchemaVersion;
  j["policy"] = s.policy == SelectionPolicy::Ucb1 ? "ucb1" : "epsilon_greedy";
  j["exploration"] = s.exploration;
  j["epsilon"] = s.epsilon;
  auto& regimes = j["regimes"] = nlohmann::json::object();
  for (const auto& [regime, arms] : s.arms) {
    auto& list = regimes[std::string(to_string(regime))] = nlohmann::json::array();
    for (const auto& a : arms) {
      list.push_back({{"strategy_id", a.strategy_id}, {"pulls", a.pulls}, {"mean", a.mean},
                      {"rank", a.rank}});
    }
  }
  auto& hist = j["history"] = nlohmann::json::array();
  for (const auto& h : s.history) {
    hist.push_back({{"episode", h.episode}, {"regime", std::string(to_string(h.regime))},
                    {"strategy_id", h.strategy_id}, {"reward", h.reward}});
  }
  return j;
}

inline Regime regime_from_string(std::string_view s) {
  if (s == "calm") return Regime::Calm;
  if (s == "turbulent") return Regime::Turbulent;
  throw ConfigError("unknown regime '" + std::string(s) + "'");
}

inline LearningState learning_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kLearningSchemaVersion) {
      throw ConfigError("learning state: unsupported version");
    }
    LearningState s;
    const auto policy = j.value("policy", std::string("ucb1"));
    if (policy == "ucb1") s.policy = SelectionPolicy::Ucb1;
    else if (policy == "epsilon_greedy") s.policy = SelectionPolicy::EpsilonGreedy;
    else throw ConfigError("learning state: unknown policy '" + policy + "'");
    s.exploration = j.value("exploration", std::numbers::sqrt2);
    s.epsilon = j.value("epsilon", 0.1);
    for (const auto& [name, list] : j.at("regimes").items()) {
      auto& arms = s.arms[regime_from_string(name)];
      for (const auto& a : list) {
        arms.push_back({a.at("strategy_id").get<std::string>(), a.at("pulls").get<std::size_t>(),
                        a.at("mean").get<double>(), 0});
      }
      detail::recompute_ranks(arms);
    }
    if (j.contains("history")) {
      for (const auto& h : j.at("history")) {
        s.history.push_back({h.at("episode").get<std::size_t>(),
                             regime_from_string(h.at("regime").get<std::string>()),
                             h.at("strategy_id").get<std::string>(), h.at("reward").get<double>()});
      }
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("learning state: ") + e.what());
  }
}

}  // namespace fidelity
