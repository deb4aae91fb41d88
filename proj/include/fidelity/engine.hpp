#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fidelity/behavior.hpp"
#include "fidelity/collective.hpp"
#include "fidelity/controller.hpp"
#include "fidelity/environment.hpp"
#include "fidelity/errors.hpp"
#include "fidelity/format.hpp"
#include "fidelity/identity.hpp"
#include "fidelity/random.hpp"
#include "fidelity/reflection.hpp"
#include "fidelity/scenario.hpp"

namespace fidelity {

// ---------------------------------------------------------------------------
// Results

/// Contract reading reported on a tick; None for contract-free nodes.
enum class GuardStatus { None, Holding, AtRisk, Violated };

inline std::string_view to_string(GuardStatus s) {
  switch (s) {
    case GuardStatus::None: return "none";
    case GuardStatus::Holding: return "holding";
    case GuardStatus::AtRisk: return "at_risk";
    case GuardStatus::Violated: return "violated";
  }
  return "?";
}

inline GuardStatus to_guard(ContractStatus s) {
  switch (s) {
    case ContractStatus::Holding: return GuardStatus::Holding;
    case ContractStatus::AtRisk: return GuardStatus::AtRisk;
    case ContractStatus::Violated: return GuardStatus::Violated;
  }
  return GuardStatus::None;
}

struct NodeTimeline {
  std::vector<double> raw;
  std::vector<double> quale;
  DeltaTrace trace;
  std::vector<IdentityClass> identity;
  std::vector<Mode> modes;
  std::vector<GuardStatus> status;
  std::vector<Safety> verdicts;
};

struct ChangeRecord {
  double time = 0.0;
  std::size_t node = 0;
  std::string strategy_id;
  std::string pre;
  std::string post;
  bool ok = true;
  std::string note;
};

struct FailureRecord {
  std::size_t node = 0;
  IdentityFailureEvent event;
};

struct SocialRecord {
  double time = 0.0;
  std::size_t node = 0;
  std::string action;
  bool ok = true;
};

struct PoolSnapshot {
  double time = 0.0;
  Budget reserve;
  std::vector<Budget> allocations;  // per node, zero for non-members
  std::vector<bool> members;
};

struct RecoveryMetrics {
  std::size_t episode = 0;
  std::size_t node = 0;
  double integrated_abs_delta = 0.0;
  /// Seconds from the shock to contract restoration; unset when not restored.
  std::optional<double> restoration_time;
  std::string strategy = "-";
};

enum class Verdict { Fragile, Robust, Antifragile };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Fragile: return "Fragile";
    case Verdict::Robust: return "Robust";
    case Verdict::Antifragile: return "Antifragile";
  }
  return "?";
}

struct AntifragilityReport {
  double slope = 0.0;
  double normalized_slope = 0.0;
  Verdict verdict = Verdict::Robust;
};

/// Pipeline stages in their per-tick order.
enum class Stage { Environment, Sensing, Delta, Identity, Controller, Behavior, Collective, Metrics };

struct StageMark {
  std::size_t tick = 0;
  Stage stage = Stage::Environment;
};

struct RunResult {
  std::vector<double> times;
  std::vector<NodeTimeline> nodes;
  std::vector<ChangeRecord> changes;
  std::vector<FailureRecord> failures;
  std::vector<SocialRecord> social;
  std::vector<PoolSnapshot> pool_log;
  std::vector<RecoveryMetrics> episodes;
  /// Sum of integrated |Δ| over nodes, one entry per episode.
  std::vector<double> episode_costs;
  std::optional<AntifragilityReport> report;
  std::vector<LearningState> learning;
  /// Strategy selections and evaluations performed, per node.
  std::vector<std::size_t> model_building_ops;
  std::vector<double> reward_baselines;
  std::size_t pool_violations = 0;
  std::vector<StageMark> stages;
};

struct RunOptions {
  bool record_stages = false;
  /// Learning state per node to start from (resume); empty starts fresh.
  std::vector<LearningState> initial_learning;
};

// ---------------------------------------------------------------------------
// Metrics

/// Trapezoid integral of |Δ| over samples whose time lies in [from, to].
inline double integrate_abs_delta(std::span<const DeltaSample> samples, double from, double to) {
  const double eps = 1e-9;
  double area = 0.0;
  const DeltaSample* prev = nullptr;
  for (const auto& s : samples) {
    if (s.time < from - eps) continue;
    if (s.time > to + eps) break;
    if (prev) area += 0.5 * (std::abs(prev->delta) + std::abs(s.delta)) * (s.time - prev->time);
    prev = &s;
  }
  return area;
}

/// Number of consecutive Holding ticks required to call a contract restored.
inline constexpr std::size_t kRestorationTicks = 5;

inline std::vector<RecoveryMetrics> compute_recovery_metrics(
    std::span<const DeltaTrace> traces, std::span<const ShockEvent> shocks,
    std::span<const IdentityClass> contracts, std::span<const DetectorConfig> guards) {
  if (traces.size() != contracts.size() || traces.size() != guards.size()) {
    throw ConfigError("compute_recovery_metrics: one contract and guard per trace required");
  }
  for (std::size_t i = 1; i < shocks.size(); ++i) {
    if (shocks[i].at < shocks[i - 1].at + shocks[i - 1].recovery_window) {
      throw ValidationError({"overlapping recovery windows at shock " + std::to_string(i)});
    }
  }
  const double eps = 1e-9;
  std::vector<RecoveryMetrics> out;
  for (std::size_t e = 0; e < shocks.size(); ++e) {
    const auto& sh = shocks[e];
    const double end = sh.at + sh.recovery_window;
    for (std::size_t n = 0; n < traces.size(); ++n) {
      RecoveryMetrics m;
      m.episode = e;
      m.node = n;
      const auto& samples = traces[n].samples;
      m.integrated_abs_delta = integrate_abs_delta(samples, sh.at, end);
      if (!is_contract_free(contracts[n])) {
        const std::size_t guard = guards[n].guard_window;
        std::size_t streak = 0;
        for (std::size_t k = 0; k < samples.size(); ++k) {
          if (samples[k].time < sh.at - eps) continue;
          const std::size_t lo = k + 1 >= guard ? k + 1 - guard : 0;
          const auto window = std::span<const DeltaSample>(samples).subspan(lo, k + 1 - lo);
          const auto status = check_contract(window, contracts[n], guards[n].at_risk_ratio).status;
          streak = status == ContractStatus::Holding ? streak + 1 : 0;
          if (streak == kRestorationTicks) {
            const double first = samples[k + 1 - kRestorationTicks].time;
            if (first <= end + eps) m.restoration_time = std::max(0.0, first - sh.at);
            break;
          }
          if (samples[k].time > end + eps && streak == 0) break;
        }
      }
      out.push_back(std::move(m));
    }
  }
  return out;
}

/// Median of all pairwise slopes (c_j - c_i) / (j - i), i < j.
inline double theil_sen_slope(std::span<const double> costs) {
  if (costs.size() < 2) throw InsufficientData("theil_sen_slope: need two points");
  std::vector<double> slopes;
  slopes.reserve(costs.size() * (costs.size() - 1) / 2);
  for (std::size_t i = 0; i < costs.size(); ++i) {
    for (std::size_t j = i + 1; j < costs.size(); ++j) {
      slopes.push_back((costs[j] - costs[i]) / static_cast<double>(j - i));
    }
  }
  std::sort(slopes.begin(), slopes.end());
  const std::size_t m = slopes.size();
  return m % 2 == 1 ? slopes[m / 2] : 0.5 * (slopes[m / 2 - 1] + slopes[m / 2]);
}

inline constexpr std::size_t kMinEpisodes = 4;

/// Trend of per-episode cost. The slope is normalised by the first episode's
/// cost (left raw when that cost is zero) and compared against +/- `band`.
inline AntifragilityReport antifragility_score(std::span<const double> episode_costs,
                                               double band = 0.02) {
  if (episode_costs.size() < kMinEpisodes) {
    throw InsufficientData("antifragility_score: need at least 4 episodes, got " +
                           std::to_string(episode_costs.size()));
  }
  AntifragilityReport r;
  r.slope = theil_sen_slope(episode_costs);
  const double first = episode_costs.front();
  r.normalized_slope = first > 0.0 ? r.slope / first : r.slope;
  if (r.normalized_slope < -band) r.verdict = Verdict::Antifragile;
  else if (r.normalized_slope > band) r.verdict = Verdict::Fragile;
  else r.verdict = Verdict::Robust;
  return r;
}

// ---------------------------------------------------------------------------
// Simulation

namespace detail {

inline std::string summarize(const BehaviorClass& b, const ReflectiveMap& m) {
  std::string s(behavior_name(b));
  if (const auto* r = std::get_if<Reactive>(&b)) s += "(" + format_number(r->gain) + ")";
  if (const auto* p = std::get_if<PredictiveOrderK>(&b)) {
    s += "(k=" + std::to_string(p->order) + " m=" + std::to_string(p->history) + ")";
  }
  s += " gain=" + format_number(m.gain) + " period=" + format_number(m.sampling_period) +
       " noise=" + format_number(m.noise_std) + " q=" + format_number(m.quantization) +
       " latency=" + format_number(m.latency);
  return s;
}

inline std::size_t stride_for(double period, double dt) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(period / dt)));
}

constexpr std::size_t kNoEpisode = std::numeric_limits<std::size_t>::max();

class Simulation {
 public:
  Simulation(const Scenario& scenario, RunOptions options, std::vector<double> baselines)
      : sc_(scenario), options_(std::move(options)), baselines_(std::move(baselines)) {}

  RunResult run() {
    const std::size_t ticks = sc_.tick_count();
    const double dt = sc_.engine.dt;
    init();
    for (std::size_t k = 0; k < ticks; ++k) tick(k, static_cast<double>(k) * dt);
    finish();
    return std::move(result_);
  }

 private:
  struct Plan {
    std::size_t strategy = 0;
    std::size_t episode = kNoEpisode;
    Regime regime = Regime::Calm;
    bool failed = false;
  };

  struct Node {
    const NodeSpec* spec = nullptr;
    ReflectiveMap channel;
    double correction_bias = 0.0;
    double correction_gain = 1.0;
    RandomStream noise;
    RandomStream policy;
    std::deque<Quale> pending;
    double held = 0.0;
    std::size_t last_sample_tick = 0;
    bool sampled = false;
    std::deque<HistoryEntry> history;
    std::size_t history_cap = 1;
    Behavior baseline;
    std::optional<Behavior> active;
    std::optional<Reconfigure> pending_reconfig;
    std::string pending_id;
    std::optional<FailureDetector> detector;
    MonitorState monitor;
    ModeState mode;
    LearningState learning;
    std::optional<Plan> plan;
    std::map<std::size_t, std::string> episode_strategy;
    std::optional<SocialMove> pending_social;
    std::string pending_social_id;
    GuardStatus status = GuardStatus::None;
    double headroom = std::numeric_limits<double>::infinity();
    double ratio = 0.0;
    std::size_t holding_streak = 0;
  };

  void mark(std::size_t tick, Stage stage) {
    if (options_.record_stages) result_.stages.push_back({tick, stage});
  }

  void init() {
    const std::size_t n = sc_.figures.size();
    std::vector<double> initial;
    for (const auto& f : sc_.figures) initial.push_back(f.initial);
    env_ = EnvState::initial(initial);
    streams_ = FigureStreams::for_run(sc_.engine.seed, n);
    if (sc_.pool) pool_ = ResourcePool(Budget::from_units(sc_.pool->total_budget));

    nodes_.resize(sc_.nodes.size());
    result_.nodes.resize(sc_.nodes.size());
    result_.model_building_ops.assign(sc_.nodes.size(), 0);
    result_.reward_baselines = baselines_;
    for (std::size_t i = 0; i < sc_.nodes.size(); ++i) {
      const auto& spec = sc_.nodes[i];
      auto& node = nodes_[i];
      node.spec = &spec;
      node.channel = spec.channel.map;
      node.noise = RandomStream(sc_.engine.seed, StreamPurpose::ChannelNoise, i);
      node.policy = RandomStream(sc_.engine.seed, StreamPurpose::Policy, i);
      node.baseline = Behavior(spec.behavior);
      node.history_cap = behavior_history(spec.behavior);
      for (const auto& st : spec.catalog) {
        if (const auto* r = std::get_if<Reconfigure>(&st.kind)) {
          node.history_cap = std::max(node.history_cap, behavior_history(r->behavior));
        }
      }
      if (!is_contract_free(spec.contract)) {
        node.detector.emplace(spec.contract, spec.identity.detector);
      }
      node.monitor = MonitorState(spec.controller.alpha, spec.controller.safety.horizon);
      if (i < options_.initial_learning.size()) {
        node.learning = options_.initial_learning[i];
        for (const auto& [regime, arms] : node.learning.arms) {
          detail_check(arms, spec.catalog);
        }
      } else {
        node.learning = LearningState::for_catalog(spec.catalog);
      }
      node.learning.policy = spec.controller.policy;
      node.learning.exploration = spec.controller.exploration;
      node.learning.epsilon = spec.controller.epsilon;
      node.held = reflect(effective_map(node), env_.figures[spec.channel.map.figure]);
    }
    env_history_.push_back(env_);
  }

  static void detail_check(const std::vector<ArmStats>& arms, const std::vector<Strategy>& catalog) {
    fidelity::detail::check_catalog_matches(arms, catalog);
  }

  ReflectiveMap effective_map(const Node& node) const {
    ReflectiveMap m = node.channel;
    for (const auto& d : node.spec->channel.disturbances) m.bias += d.sensitivity * env_.figures[d.figure];
    m.bias += node.correction_bias;
    m.gain *= node.correction_gain;
    return m;
  }

  std::optional<std::size_t> episode_at(double t) const {
    const double eps = 1e-9 * sc_.engine.dt;
    for (std::size_t e = 0; e < next_shock_; ++e) {
      const auto& sh = sc_.shocks[e];
      if (t >= sh.at - eps && t < sh.at + sh.recovery_window - eps) return e;
    }
    return std::nullopt;
  }

  void tick(std::size_t k, double t) {
    const double eps = 1e-9 * sc_.engine.dt;

    // Reconfigurations decided last tick take effect at this boundary.
    for (std::size_t i = 0; i < nodes_.size(); ++i) apply_pending_reconfig(i, t);

    mark(k, Stage::Environment);
    if (k > 0) {
      env_ = step_environment(env_, sc_.processes, sc_.engine.dt, streams_);
      env_.time = t;
    }
    while (next_shock_ < sc_.shocks.size() && sc_.shocks[next_shock_].at <= t + eps) {
      env_ = apply_shock(env_, sc_.shocks[next_shock_]);
      ++next_shock_;
      // A plan begun outside any episode is unscored; let the shock start a fresh one.
      for (auto& node : nodes_) {
        if (node.plan && node.plan->episode == kNoEpisode) node.plan.reset();
      }
    }
    if (k > 0) env_history_.push_back(env_);
    while (env_history_.size() > sc_.regime.window) env_history_.pop_front();
    {
      const std::vector<EnvState> window(env_history_.begin(), env_history_.end());
      env_.regime = label_regime(window, sc_.regime.threshold);
    }

    close_episodes(t);

    mark(k, Stage::Sensing);
    for (std::size_t i = 0; i < nodes_.size(); ++i) sense_node(i, k, t);

    mark(k, Stage::Delta);
    std::vector<DeltaSample> samples(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      auto& node = nodes_[i];
      const double raw = env_.figures[node.spec->channel.map.figure];
      const double delta = node.held - node.spec->nominal.ideal(raw);
      samples[i] = {t, node.spec->channel.map.figure, delta};
      auto& tl = result_.nodes[i];
      tl.raw.push_back(raw);
      tl.quale.push_back(node.held);
      tl.trace.push(samples[i]);
    }

    mark(k, Stage::Identity);
    for (std::size_t i = 0; i < nodes_.size(); ++i) guard_node(i, samples[i]);

    mark(k, Stage::Controller);
    for (std::size_t i = 0; i < nodes_.size(); ++i) control_node(i, samples[i], t);

    mark(k, Stage::Behavior);
    for (std::size_t i = 0; i < nodes_.size(); ++i) behave_node(i, samples[i], t);

    mark(k, Stage::Collective);
    if (pool_) collective_step(t);

    mark(k, Stage::Metrics);
    result_.times.push_back(t);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      result_.nodes[i].modes.push_back(nodes_[i].mode.mode);
      result_.nodes[i].status.push_back(nodes_[i].status);
    }
  }

  void apply_pending_reconfig(std::size_t i, double t) {
    auto& node = nodes_[i];
    if (!node.pending_reconfig) return;
    const auto& r = *node.pending_reconfig;
    const std::string pre = summarize(node.active ? node.active->spec() : node.baseline.spec(),
                                      node.channel);
    node.active.emplace(r.behavior);
    node.channel = r.channel.apply(node.channel);
    const std::string post = summarize(r.behavior, node.channel);
    result_.changes.push_back({t, i, node.pending_id, pre, post, true, "reconfigure"});
    node.pending_reconfig.reset();
  }

  void sense_node(std::size_t i, std::size_t k, double t) {
    auto& node = nodes_[i];
    const std::size_t stride = stride_for(node.channel.sampling_period, sc_.engine.dt);
    if (!node.sampled || k - node.last_sample_tick >= stride) {
      const double raw = env_.figures[node.spec->channel.map.figure];
      node.pending.push_back(sense(effective_map(node), raw, t, node.noise));
      node.last_sample_tick = k;
      node.sampled = true;
    }
    const double eps = 1e-9 * sc_.engine.dt;
    while (!node.pending.empty() && node.pending.front().acquired_at <= t + eps) {
      node.held = node.pending.front().value;
      node.pending.pop_front();
    }
  }

  void guard_node(std::size_t i, const DeltaSample& sample) {
    auto& node = nodes_[i];
    auto& tl = result_.nodes[i];
    const auto& spec = *node.spec;
    if (node.detector) {
      if (auto ev = node.detector->observe(sample)) result_.failures.push_back({i, *ev});
      const auto& check = node.detector->last_check();
      node.status = to_guard(check.status);
      node.ratio = check.ratio;
      node.headroom = check.headroom();
    } else {
      node.status = GuardStatus::None;
      node.ratio = 0.0;
      node.headroom = std::numeric_limits<double>::infinity();
    }
    node.holding_streak = node.status == GuardStatus::Violated || node.status == GuardStatus::AtRisk
                              ? 0
                              : node.holding_streak + 1;
    const std::size_t window = std::min(spec.identity.window, tl.trace.size());
    tl.identity.push_back(
        classify_trace(tl.trace, ClassCandidate::from_contract(spec.contract), window));
  }

  /// Contract status the controller is allowed to see. Best-effort and
  /// contract-free nodes do not monitor their Δ, so they never see a breach.
  ContractStatus controller_view(const Node& node) const {
    if (!std::holds_alternative<HardRT>(node.spec->contract) &&
        !std::holds_alternative<SoftRT>(node.spec->contract)) {
      return ContractStatus::Holding;
    }
    switch (node.status) {
      case GuardStatus::AtRisk: return ContractStatus::AtRisk;
      case GuardStatus::Violated: return ContractStatus::Violated;
      default: return ContractStatus::Holding;
    }
  }

  void control_node(std::size_t i, const DeltaSample& sample, double t) {
    auto& node = nodes_[i];
    const auto& spec = *node.spec;
    node.monitor = monitor_step(node.monitor, sample, env_.regime);
    const Safety verdict = assess_safety(node.monitor, spec.controller.safety, controller_view(node));
    result_.nodes[i].verdicts.push_back(verdict);
    const Mode before = node.mode.mode;
    node.mode = switch_mode(node.mode, verdict, spec.controller.hysteresis);

    if (before == Mode::Resilient && node.mode.mode == Mode::Elastic) revert_to_elastic(i, t);

    if (node.mode.mode != Mode::Resilient || spec.catalog.empty() || node.plan) return;

    const auto episode = episode_at(t);
    std::size_t idx = 0;
    if (spec.controller.learning) {
      idx = select_strategy_index(node.learning, env_.regime, spec.catalog, node.policy);
    }
    ++result_.model_building_ops[i];
    node.plan = Plan{idx, episode.value_or(kNoEpisode), env_.regime, false};
    if (episode) node.episode_strategy[*episode] = spec.catalog[idx].id;
    enact(i, spec.catalog[idx]);
  }

  void enact(std::size_t i, const Strategy& strategy) {
    auto& node = nodes_[i];
    if (const auto* r = std::get_if<Reconfigure>(&strategy.kind)) {
      node.pending_reconfig = *r;
      node.pending_id = strategy.id;
    } else {
      node.pending_social = std::get<SocialMove>(strategy.kind);
      node.pending_social_id = strategy.id;
    }
  }

  void revert_to_elastic(std::size_t i, double t) {
    auto& node = nodes_[i];
    node.pending_reconfig.reset();
    node.pending_social.reset();
    if (node.plan && node.plan->episode == kNoEpisode) node.plan.reset();
    if (node.active || node.channel.sampling_period != node.spec->channel.map.sampling_period ||
        node.channel.gain != node.spec->channel.map.gain) {
      const std::string pre =
          summarize(node.active ? node.active->spec() : node.baseline.spec(), node.channel);
      node.active.reset();
      node.channel = node.spec->channel.map;
      result_.changes.push_back(
          {t, i, "elastic", pre, summarize(node.baseline.spec(), node.channel), true, "revert"});
    }
  }

  void behave_node(std::size_t i, const DeltaSample& sample, double t) {
    auto& node = nodes_[i];
    const auto& spec = *node.spec;
    HistoryEntry h;
    h.time = t;
    h.delta = sample.delta - node.correction_bias;
    for (auto f : spec.context) h.context.push_back(env_.figures[f]);
    node.history.push_back(std::move(h));
    while (node.history.size() > node.history_cap) node.history.pop_front();

    Observation obs;
    obs.latest = sample;
    if (node.status != GuardStatus::None) obs.goal = node.ratio;
    obs.history = node.history;

    Behavior& behavior = node.active ? *node.active : node.baseline;
    CorrectiveAction action = behavior.act(obs);

    const double cap = capacity(i);
    action.bias_adjustment = std::clamp(action.bias_adjustment, -cap, cap);
    node.correction_bias += action.bias_adjustment;
    if (action.gain_multiplier > 0.0) node.correction_gain *= action.gain_multiplier;
    if (action.sampling_period && *action.sampling_period > 0.0) {
      node.channel.sampling_period = *action.sampling_period;
    }
  }

  double capacity(std::size_t i) const {
    const auto& spec = *nodes_[i].spec;
    if (!spec.capacity) return std::numeric_limits<double>::infinity();
    double cap = *spec.capacity;
    if (pool_ && pool_->is_member(i)) cap += pool_->allocation(i).units();
    return cap;
  }

  std::vector<SocialView> social_views() const {
    std::vector<SocialView> views;
    views.reserve(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& node = nodes_[i];
      ContractStatus s = ContractStatus::Holding;
      if (node.status == GuardStatus::AtRisk) s = ContractStatus::AtRisk;
      if (node.status == GuardStatus::Violated) s = ContractStatus::Violated;
      views.push_back({i, pool_->is_member(i), s, node.headroom, node.holding_streak});
    }
    return views;
  }

  bool try_apply(std::size_t actor, const SocialAction& action, double t) {
    try {
      pool_ = apply_social_action(*pool_, actor, action);
      if (const auto* a = std::get_if<Assist>(&action)) record_assist(ledger_, actor, *a);
      result_.social.push_back({t, actor, describe(action), true});
      return true;
    } catch (const RejectedAction&) {
      result_.social.push_back({t, actor, describe(action), false});
      return false;
    }
  }

  std::optional<SocialAction> instantiate(std::size_t i, const SocialMove& move) const {
    switch (move.action) {
      case SocialTemplate::Join: return Join{};
      case SocialTemplate::Leave: return Leave{};
      case SocialTemplate::Grab: return Grab{Budget::from_units(move.amount)};
      case SocialTemplate::Assist: {
        std::optional<std::size_t> target;
        double worst = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < nodes_.size(); ++j) {
          if (j == i || !pool_->is_member(j)) continue;
          if (nodes_[j].headroom < worst) {
            worst = nodes_[j].headroom;
            target = j;
          }
        }
        if (!target) return std::nullopt;
        return Assist{*target, Budget::from_units(move.amount)};
      }
    }
    return std::nullopt;
  }

  void collective_step(double t) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      auto& node = nodes_[i];
      if (node.pending_social) {
        const auto action = instantiate(i, *node.pending_social);
        const bool ok = action && try_apply(i, *action, t);
        result_.changes.push_back({t, i, node.pending_social_id, "", action ? describe(*action) : "",
                                   ok, ok ? "social" : "failed enactment"});
        if (!ok && node.plan) {
          node.plan->failed = true;
          if (node.spec->controller.learning && node.plan->episode != kNoEpisode) {
            const auto& id = node.spec->catalog[node.plan->strategy].id;
            node.learning = evaluate_and_learn(node.learning, {node.plan->episode, 1.0, 0.0}, id,
                                               node.plan->regime);
            ++result_.model_building_ops[i];
          }
        }
        node.pending_social.reset();
      }
      if (node.spec->social) {
        const auto views = social_views();
        if (auto action = decide_social_action(views[i], views, *node.spec->social, *pool_, ledger_,
                                               sc_.pool->social)) {
          try_apply(i, *action, t);
        }
      }
    }
    if (!pool_->conserved()) ++result_.pool_violations;
    PoolSnapshot snap;
    snap.time = t;
    snap.reserve = pool_->reserve();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      snap.members.push_back(pool_->is_member(i));
      snap.allocations.push_back(pool_->allocation(i));
    }
    result_.pool_log.push_back(std::move(snap));
  }

  void close_episodes(double t) {
    const double eps = 1e-9 * sc_.engine.dt;
    while (closed_ < next_shock_) {
      const auto& sh = sc_.shocks[closed_];
      if (t < sh.at + sh.recovery_window - eps) break;
      close_episode(closed_);
      ++closed_;
    }
  }

  void close_episode(std::size_t e) {
    const auto& sh = sc_.shocks[e];
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      auto& node = nodes_[i];
      if (!node.plan || node.plan->episode != e) continue;
      if (!node.plan->failed && node.spec->controller.learning) {
        const double cost = integrate_abs_delta(result_.nodes[i].trace.samples, sh.at,
                                                sh.at + sh.recovery_window);
        const double baseline = i < baselines_.size() ? baselines_[i] : 0.0;
        const auto& id = node.spec->catalog[node.plan->strategy].id;
        node.learning = evaluate_and_learn(node.learning, {e, cost, baseline}, id,
                                           node.plan->regime);
        ++result_.model_building_ops[i];
      }
      node.plan.reset();
    }
  }

  void finish() {
    // Episodes still open when the run ends are closed on the data available.
    while (closed_ < next_shock_) close_episode(closed_++);
    std::vector<IdentityClass> contracts;
    std::vector<DetectorConfig> guards;
    std::vector<DeltaTrace> traces;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      contracts.push_back(nodes_[i].spec->contract);
      guards.push_back(nodes_[i].spec->identity.detector);
      traces.push_back(result_.nodes[i].trace);
    }
    const std::size_t applied = next_shock_;
    result_.episodes = compute_recovery_metrics(
        traces, std::span<const ShockEvent>(sc_.shocks).first(applied), contracts, guards);
    result_.episode_costs.assign(applied, 0.0);
    for (auto& m : result_.episodes) {
      result_.episode_costs[m.episode] += m.integrated_abs_delta;
      auto it = nodes_[m.node].episode_strategy.find(m.episode);
      if (it != nodes_[m.node].episode_strategy.end()) m.strategy = it->second;
    }
    if (result_.episode_costs.size() >= kMinEpisodes) {
      result_.report = antifragility_score(result_.episode_costs, sc_.engine.slope_band);
    }
    for (auto& node : nodes_) result_.learning.push_back(node.learning);
  }

  const Scenario& sc_;
  RunOptions options_;
  std::vector<double> baselines_;
  EnvState env_;
  std::deque<EnvState> env_history_;
  std::vector<FigureStreams> streams_;
  std::optional<ResourcePool> pool_;
  AssistLedger ledger_;
  std::vector<Node> nodes_;
  std::size_t next_shock_ = 0;
  std::size_t closed_ = 0;
  RunResult result_;
};

}  // namespace detail

/// Passive calibration: per node, the integrated |Δ| of a passive copy of the
/// node under the scenario's largest shock alone.
inline std::vector<double> calibrate_reward_baselines(const Scenario& scenario) {
  std::vector<double> out(scenario.nodes.size(), 0.0);
  bool needed = false;
  for (const auto& n : scenario.nodes) needed = needed || (!n.catalog.empty() && !n.controller.reward_baseline);
  if (needed && !scenario.shocks.empty()) {
    const auto largest = std::max_element(
        scenario.shocks.begin(), scenario.shocks.end(),
        [](const ShockEvent& a, const ShockEvent& b) { return std::abs(a.magnitude) < std::abs(b.magnitude); });
    Scenario probe = scenario;
    probe.shocks = {*largest};
    probe.pool.reset();
    for (auto& n : probe.nodes) {
      n.behavior = Passive{};
      n.catalog.clear();
      n.social.reset();
      n.capacity.reset();
    }
    const auto result = detail::Simulation(probe, {}, {}).run();
    for (const auto& m : result.episodes) out[m.node] = m.integrated_abs_delta;
  }
  for (std::size_t i = 0; i < scenario.nodes.size(); ++i) {
    if (scenario.nodes[i].controller.reward_baseline) out[i] = *scenario.nodes[i].controller.reward_baseline;
  }
  return out;
}

/// Runs a validated scenario. Throws ValidationError listing every problem otherwise.
inline RunResult run_scenario(const Scenario& scenario, RunOptions options = {}) {
  if (auto problems = validate(scenario); !problems.empty()) throw ValidationError(std::move(problems));
  auto baselines = calibrate_reward_baselines(scenario);
  return detail::Simulation(scenario, std::move(options), std::move(baselines)).run();
}

}  // namespace fidelity
