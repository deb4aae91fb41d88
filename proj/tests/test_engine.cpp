#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fidelity/engine.hpp"
#include "fidelity/export.hpp"
#include "oracles.hpp"

using namespace fidelity;

namespace {

Scenario base(double duration) {
  Scenario s;
  s.figures = {{"x", "u", 0.0}};
  s.processes = {{0, Constant{}}};
  s.engine.duration = duration;
  s.engine.dt = 0.1;
  s.engine.seed = 1;
  NodeSpec n;
  n.name = "a";
  n.contract = HardRT{0.1};
  s.nodes = {n};
  return s;
}

std::vector<DeltaSample> samples(const std::vector<double>& ts, const std::vector<double>& ds) {
  std::vector<DeltaSample> out;
  for (std::size_t i = 0; i < ts.size(); ++i) out.push_back({ts[i], 0, ds[i]});
  return out;
}

double total_abs(const RunResult& r, std::size_t node) {
  double sum = 0.0;
  for (const auto& s : r.nodes[node].trace.samples) sum += std::abs(s.delta);
  return sum;
}

}  // namespace

TEST(Engine, ZeroDurationIsEmpty) {
  const auto r = run_scenario(base(0.0));
  EXPECT_TRUE(r.times.empty());
  EXPECT_TRUE(r.nodes[0].trace.samples.empty());
  EXPECT_TRUE(r.episodes.empty());
  EXPECT_FALSE(r.report);
}

TEST(Engine, IsomorphismLimit) {
  auto s = base(30.0);
  s.figures[0].initial = 2.5;
  s.nodes[0].catalog = {{"react", Reconfigure{Reactive{1.0}, {}}}};
  const auto r = run_scenario(s);
  ASSERT_EQ(r.times.size(), 300u);
  const auto& tl = r.nodes[0];
  for (std::size_t k = 0; k < r.times.size(); ++k) {
    EXPECT_EQ(tl.trace.samples[k].delta, 0.0);
    EXPECT_EQ(class_name(tl.identity[k]), "HardRT");
    EXPECT_EQ(tl.modes[k], Mode::Elastic);
  }
  EXPECT_EQ(r.model_building_ops[0], 0u);
  EXPECT_TRUE(r.changes.empty());
}

TEST(Engine, TimelinesShareTickGrid) {
  auto s = base(5.0);
  s.nodes.push_back(s.nodes[0]);
  s.nodes[1].channel.map.sampling_period = 0.3;
  const auto r = run_scenario(s);
  for (const auto& tl : r.nodes) {
    EXPECT_EQ(tl.trace.size(), r.times.size());
    EXPECT_EQ(tl.identity.size(), r.times.size());
    EXPECT_EQ(tl.modes.size(), r.times.size());
    EXPECT_EQ(tl.status.size(), r.times.size());
  }
  for (std::size_t k = 0; k < r.times.size(); ++k) EXPECT_DOUBLE_EQ(r.times[k], 0.1 * static_cast<double>(k));
}

TEST(Engine, ZeroOrderHoldBetweenSamples) {
  auto s = base(3.0);
  s.processes = {{0, LinearDrift{1.0}}};
  s.nodes[0].channel.map.sampling_period = 0.5;
  s.nodes[0].contract = NonRT{};
  const auto r = run_scenario(s);
  const auto& q = r.nodes[0].quale;
  for (std::size_t k = 0; k < q.size(); ++k) EXPECT_EQ(q[k], q[k - k % 5]) << k;
  EXPECT_NE(q[5], q[4]);
}

TEST(Engine, LatencyDelaysQuale) {
  auto s = base(2.0);
  s.processes = {{0, LinearDrift{1.0}}};
  s.nodes[0].channel.map.latency = 0.3;
  s.nodes[0].contract = NonRT{};
  const auto r = run_scenario(s);
  const auto& tl = r.nodes[0];
  for (std::size_t k = 3; k < tl.raw.size(); ++k) EXPECT_NEAR(tl.quale[k], tl.raw[k - 3], 1e-12);
}

TEST(Engine, DeterministicExports) {
  auto s = base(40.0);
  s.processes = {{0, RandomWalk{0.2}}};
  s.nodes[0].channel.map.noise_std = 0.05;
  s.nodes[0].catalog = {{"r", Reconfigure{Reactive{0.5}, {}}}, {"p", Reconfigure{PredictiveOrderK{1, 4}, {}}}};
  s.shocks = {{5.0, 0, 1.0, 5.0}, {12.0, 0, -1.0, 5.0}, {20.0, 0, 1.0, 5.0}, {28.0, 0, -1.0, 5.0}};
  const auto a = run_scenario(s), b = run_scenario(s);
  EXPECT_EQ(ticks_csv(s, a), ticks_csv(s, b));
  EXPECT_EQ(episodes_csv(s, a), episodes_csv(s, b));
  EXPECT_EQ(report_json(s, a).dump(), report_json(s, b).dump());
  s.engine.seed = 2;
  EXPECT_NE(ticks_csv(s, run_scenario(s)), ticks_csv(s, a));
}

TEST(Engine, NoiseFreeRunsIgnoreSeed) {
  auto s = base(20.0);
  s.processes = {{0, LinearDrift{0.05}}};
  s.nodes[0].channel.map.gain = 1.2;
  s.nodes[0].catalog = {{"r", Reconfigure{Reactive{1.0}, {}}}};
  s.shocks = {{5.0, 0, 1.0, 5.0}};
  const auto a = run_scenario(s);
  s.engine.seed = 99;
  EXPECT_EQ(ticks_csv(s, run_scenario(s)), ticks_csv(s, a));
}

TEST(Engine, StagesRunInDeclaredOrder) {
  auto s = base(2.0);
  s.pool = PoolSpec{1.0, {}};
  s.nodes[0].social = SocialBehavior::Neutral;
  RunOptions opt;
  opt.record_stages = true;
  const auto r = run_scenario(s, opt);
  ASSERT_EQ(r.stages.size(), 20u * 8u);
  for (std::size_t i = 0; i < r.stages.size(); ++i) {
    EXPECT_EQ(r.stages[i].tick, i / 8);
    EXPECT_EQ(static_cast<std::size_t>(r.stages[i].stage), i % 8);
  }
}

TEST(Engine, TrapezoidRectangle) {
  std::vector<double> ts, ds;
  for (int k = 0; k <= 50; ++k) ts.push_back(0.1 * k), ds.push_back(k % 2 ? 0.3 : -0.3);
  EXPECT_NEAR(integrate_abs_delta(samples(ts, ds), 0.0, 5.0), 0.3 * 5.0, 1e-12);
}

TEST(Engine, TrapezoidTriangle) {
  const double c = 2.0, w = 4.0;
  std::vector<double> ts, ds;
  for (int k = 0; k <= 40; ++k) ts.push_back(0.1 * k), ds.push_back(c * (1.0 - 0.1 * k / w));
  const double got = integrate_abs_delta(samples(ts, ds), 0.0, w);
  EXPECT_NEAR(got, c * w / 2.0, c * 0.1);
  EXPECT_NEAR(got, oracle::trapezoid(ts, ds), 1e-12);
}

TEST(Engine, TrapezoidRespectsWindow) {
  std::vector<double> ts, ds;
  for (int k = 0; k <= 100; ++k) ts.push_back(0.1 * k), ds.push_back(k >= 30 && k <= 60 ? 1.0 : 5.0);
  EXPECT_NEAR(integrate_abs_delta(samples(ts, ds), 3.0, 6.0), 3.0, 1e-12);
}

TEST(Engine, RecoveryZeroDeltaRestoresAtOnce) {
  std::vector<double> ts, ds;
  for (int k = 0; k <= 100; ++k) ts.push_back(0.1 * k), ds.push_back(0.0);
  DeltaTrace t;
  for (const auto& s : samples(ts, ds)) t.push(s);
  const std::vector<DeltaTrace> traces{t};
  const std::vector<ShockEvent> shocks{{2.0, 0, 1.0, 3.0}};
  const std::vector<IdentityClass> contracts{HardRT{0.1}};
  const std::vector<DetectorConfig> guards{DetectorConfig{}};
  const auto m = compute_recovery_metrics(traces, shocks, contracts, guards);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].integrated_abs_delta, 0.0);
  ASSERT_TRUE(m[0].restoration_time);
  EXPECT_EQ(*m[0].restoration_time, 0.0);
}

TEST(Engine, RecoveryRestorationNeedsFiveHoldingTicks) {
  // Violation for 1 s after the shock at t = 2; guard window 1.
  std::vector<double> ts, ds;
  for (int k = 0; k <= 100; ++k) ts.push_back(0.1 * k), ds.push_back(k >= 20 && k < 30 ? 0.5 : 0.0);
  DeltaTrace t;
  for (const auto& s : samples(ts, ds)) t.push(s);
  DetectorConfig g;
  g.guard_window = 1;
  const std::vector<DeltaTrace> traces{t};
  const std::vector<IdentityClass> contracts{HardRT{0.1}};
  const std::vector<DetectorConfig> guards{g};
  const std::vector<ShockEvent> ok{{2.0, 0, 1.0, 3.0}};
  const auto m = compute_recovery_metrics(traces, ok, contracts, guards);
  ASSERT_TRUE(m[0].restoration_time);
  EXPECT_NEAR(*m[0].restoration_time, 1.0, 1e-9);
  EXPECT_NEAR(m[0].integrated_abs_delta, 0.5 * 0.9 + 0.5 * 0.5 * 0.1, 1e-12);
  const std::vector<ShockEvent> short_window{{2.0, 0, 1.0, 0.5}};
  EXPECT_FALSE(compute_recovery_metrics(traces, short_window, contracts, guards)[0].restoration_time);
}

TEST(Engine, RecoveryRejectsOverlap) {
  const std::vector<DeltaTrace> traces{DeltaTrace{}};
  const std::vector<ShockEvent> shocks{{1.0, 0, 1.0, 3.0}, {2.0, 0, 1.0, 3.0}};
  const std::vector<IdentityClass> contracts{HardRT{0.1}};
  const std::vector<DetectorConfig> guards{DetectorConfig{}};
  EXPECT_THROW(compute_recovery_metrics(traces, shocks, contracts, guards), ValidationError);
  auto s = base(10.0);
  s.shocks = shocks;
  EXPECT_THROW(run_scenario(s), ValidationError);
}

TEST(Engine, TheilSenAlternatingIsZero) {
  const std::vector<double> c{2, 3, 2, 3, 2, 3};
  EXPECT_EQ(theil_sen_slope(c), 0.0);
  EXPECT_EQ(oracle::median_pairwise_slope(c), 0.0);
  EXPECT_EQ(antifragility_score(c).verdict, Verdict::Robust);
}

TEST(Engine, TheilSenVerdicts) {
  const std::vector<double> halving{8, 4, 2, 1}, flat{3, 3, 3, 3, 3}, rising{1, 2, 4, 8};
  EXPECT_EQ(antifragility_score(halving).verdict, Verdict::Antifragile);
  EXPECT_EQ(antifragility_score(flat).slope, 0.0);
  EXPECT_EQ(antifragility_score(flat).verdict, Verdict::Robust);
  EXPECT_EQ(antifragility_score(rising).verdict, Verdict::Fragile);
  EXPECT_THROW(antifragility_score(std::vector<double>{1, 2, 3}), InsufficientData);
}

TEST(Engine, TheilSenMatchesOracle) {
  RandomStream rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> c(4 + trial % 20);
    for (auto& x : c) x = rng.uniform() * 10.0;
    EXPECT_DOUBLE_EQ(theil_sen_slope(c), oracle::median_pairwise_slope(c));
  }
}

TEST(Engine, TheilSenNormalisedBand) {
  // Slope -0.1 on a first cost of 10 is -0.01 normalised: inside the band.
  const std::vector<double> c{10.0, 9.9, 9.8, 9.7};
  const auto r = antifragility_score(c, 0.02);
  EXPECT_NEAR(r.normalized_slope, -0.01, 1e-12);
  EXPECT_EQ(r.verdict, Verdict::Robust);
  EXPECT_EQ(antifragility_score(c, 0.005).verdict, Verdict::Antifragile);
}

TEST(Engine, EpisodeCountEqualsShockCount) {
  auto s = base(60.0);
  s.shocks = {{5.0, 0, 0.5, 8.0}, {15.0, 0, -0.5, 8.0}, {25.0, 0, 0.5, 8.0}, {35.0, 0, -0.5, 8.0},
              {55.0, 0, 0.5, 8.0}};
  s.nodes[0].channel.map.gain = 1.1;
  s.nodes.push_back(s.nodes[0]);
  const auto r = run_scenario(s);
  EXPECT_EQ(r.episode_costs.size(), s.shocks.size());
  EXPECT_EQ(r.episodes.size(), s.shocks.size() * s.nodes.size());
  ASSERT_TRUE(r.report);
  for (const auto& m : r.episodes) {
    EXPECT_GE(m.integrated_abs_delta, 0.0);
    if (m.restoration_time) {
      EXPECT_LE(*m.restoration_time, s.shocks[m.episode].recovery_window + 1e-9);
    }
  }
}

TEST(Engine, ElasticModeDoesNoModelBuilding) {
  auto s = base(50.0);
  s.processes = {{0, RandomWalk{0.001}}};
  s.nodes[0].contract = HardRT{10.0};
  s.nodes[0].catalog = {{"r", Reconfigure{Reactive{1.0}, {}}}};
  s.shocks = {{10.0, 0, 0.5, 10.0}};
  const auto r = run_scenario(s);
  for (auto m : r.nodes[0].modes) ASSERT_EQ(m, Mode::Elastic);
  EXPECT_EQ(r.model_building_ops[0], 0u);
}

TEST(Engine, ResilientModeSelectsAndLearns) {
  auto s = base(40.0);
  s.nodes[0].channel.map.gain = 1.5;
  s.nodes[0].catalog = {{"r", Reconfigure{Reactive{1.0}, {}}}};
  s.shocks = {{5.0, 0, 1.0, 10.0}, {20.0, 0, 1.0, 10.0}};
  const auto r = run_scenario(s);
  EXPECT_GT(r.model_building_ops[0], 0u);
  EXPECT_GT(r.reward_baselines[0], 0.0);
  std::size_t pulls = 0;
  for (const auto& [regime, arms] : r.learning[0].arms) pulls += arms[0].pulls;
  EXPECT_GE(pulls, 1u);
}

TEST(Engine, ScalingLeavesTimelinesUnchanged) {
  auto build = [](double k) {
    auto s = base(60.0);
    s.figures[0].initial = 1.0 * k;
    s.regime.threshold = 0.5 * k;
    s.nodes[0].channel.map.gain = 1.25;
    s.nodes[0].channel.map.bias = 0.0625 * k;
    s.nodes[0].contract = HardRT{0.5 * k};
    auto& d = s.nodes[0].identity.detector;
    d.reference = 0.125 * k;
    d.slack = 0.0625 * k;
    d.threshold = 2.0 * k;
    s.nodes[0].controller.safety.turbulence_threshold = 0.25 * k;
    s.nodes[0].behavior = Reactive{0.5};
    s.nodes[0].catalog = {{"r", Reconfigure{Reactive{1.0}, {}}}};
    s.shocks = {{5.0, 0, 2.0 * k, 10.0}, {20.0, 0, -3.0 * k, 10.0}, {40.0, 0, 1.5 * k, 10.0}};
    return s;
  };
  const auto ref = run_scenario(build(1.0));
  for (double k : {0.25, 2.0, 8.0}) {
    const auto r = run_scenario(build(k));
    std::vector<std::string> a, b;
    for (const auto& c : ref.nodes[0].identity) a.emplace_back(class_name(c));
    for (const auto& c : r.nodes[0].identity) b.emplace_back(class_name(c));
    EXPECT_EQ(a, b) << k;
    EXPECT_EQ(r.nodes[0].modes, ref.nodes[0].modes) << k;
  }
}

TEST(Engine, PoolConservedEveryTick) {
  auto s = base(60.0);
  s.figures.push_back({"y", "u", 0.0});
  s.processes.push_back({1, RandomWalk{0.3}});
  s.pool = PoolSpec{2.0, {}};
  s.nodes.clear();
  for (std::size_t i = 0; i < 6; ++i) {
    NodeSpec n;
    n.name = "n" + std::to_string(i);
    n.contract = HardRT{0.2};
    n.channel.disturbances = {{1, 0.3}};
    n.behavior = Reactive{0.5};
    n.capacity = 0.05;
    n.social = static_cast<SocialBehavior>(i % 3);
    n.catalog = {{"grab", SocialMove{SocialTemplate::Grab, 0.3}}, {"assist", SocialMove{SocialTemplate::Assist, 0.2}}};
    s.nodes.push_back(n);
  }
  s.shocks = {{10.0, 1, 1.0, 10.0}, {30.0, 1, -1.0, 10.0}};
  const auto r = run_scenario(s);
  EXPECT_EQ(r.pool_violations, 0u);
  ASSERT_EQ(r.pool_log.size(), r.times.size());
  for (const auto& snap : r.pool_log) {
    Budget sum = snap.reserve;
    for (std::size_t i = 0; i < snap.allocations.size(); ++i) {
      EXPECT_GE(snap.allocations[i].micro, 0);
      if (!snap.members[i]) {
        EXPECT_EQ(snap.allocations[i].micro, 0);
      }
      sum += snap.allocations[i];
    }
    EXPECT_EQ(sum, Budget::from_units(2.0));
  }
  EXPECT_FALSE(r.social.empty());
}

TEST(Engine, IdenticalReconfigureHasEqualSummaries) {
  auto s = base(20.0);
  s.nodes[0].channel.map.bias = 0.5;
  s.nodes[0].catalog = {{"same", Reconfigure{Passive{}, {}}}};
  const auto r = run_scenario(s);
  ASSERT_FALSE(r.changes.empty());
  const auto& c = r.changes.front();
  EXPECT_EQ(c.strategy_id, "same");
  EXPECT_EQ(c.note, "reconfigure");
  EXPECT_EQ(c.pre, c.post);
}

TEST(Engine, ReconfigureTakesEffectNextTick) {
  auto s = base(5.0);
  s.nodes[0].channel.map.bias = 0.5;
  s.nodes[0].catalog = {{"r", Reconfigure{Reactive{1.0}, {}}}};
  const auto r = run_scenario(s);
  ASSERT_FALSE(r.changes.empty());
  const auto first_resilient = std::find(r.nodes[0].modes.begin(), r.nodes[0].modes.end(), Mode::Resilient);
  ASSERT_NE(first_resilient, r.nodes[0].modes.end());
  const auto k = static_cast<std::size_t>(first_resilient - r.nodes[0].modes.begin());
  EXPECT_DOUBLE_EQ(r.changes.front().time, r.times[k + 1]);
}

TEST(Engine, JoinWhenMemberIsFailedEnactment) {
  auto s = base(40.0);
  s.pool = PoolSpec{1.0, {}};
  s.nodes[0].channel.map.bias = 0.5;
  s.nodes[0].catalog = {{"join", SocialMove{SocialTemplate::Join, 0.0}}};
  s.shocks = {{5.0, 0, 1.0, 10.0}, {20.0, 0, 1.0, 10.0}};
  const auto r = run_scenario(s);
  bool joined = false, failed = false;
  for (const auto& c : r.changes) {
    if (c.strategy_id != "join") continue;
    if (c.ok) joined = true;
    if (!c.ok) {
      failed = true;
      EXPECT_EQ(c.note, "failed enactment");
    }
  }
  EXPECT_TRUE(joined);
  EXPECT_TRUE(failed);
  bool zero_reward = false;
  for (const auto& h : r.learning[0].history) zero_reward = zero_reward || h.reward == 0.0;
  EXPECT_TRUE(zero_reward);
}

TEST(Engine, PredictiveReconfigureBeatsPassiveUnderDrift) {
  auto s = base(100.0);
  s.processes = {{0, LinearDrift{0.01}}};
  s.nodes[0].channel.map.gain = 2.0;
  s.nodes[0].contract = HardRT{0.01};
  const auto passive = run_scenario(s);
  s.nodes[0].catalog = {{"predict", Reconfigure{PredictiveOrderK{1, 3}, {}}}};
  const auto predictive = run_scenario(s);
  EXPECT_LT(total_abs(predictive, 0), 0.5 * total_abs(passive, 0));
}

TEST(Engine, ValidationListsEveryProblem) {
  auto s = base(-1.0);
  s.engine.dt = 0.0;
  s.nodes[0].channel.map.sampling_period = -1.0;
  s.nodes[0].contract = HardRT{0.0};
  try {
    run_scenario(s);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_GE(e.problems().size(), 4u);
  }
}

TEST(Engine, CalibrationUsesLargestShockOnPassiveCopy) {
  auto s = base(40.0);
  s.nodes[0].channel.map.gain = 1.5;
  s.nodes[0].behavior = Reactive{1.0};
  s.nodes[0].catalog = {{"r", Reconfigure{Reactive{1.0}, {}}}};
  s.shocks = {{5.0, 0, 1.0, 10.0}, {20.0, 0, -2.0, 10.0}};
  const auto b = calibrate_reward_baselines(s);
  // Passive: Δ = 0.5 * x, x = -2 from t = 5 on; integral over 10 s.
  EXPECT_NEAR(b[0], 1.0 * 10.0, 1e-9);
  s.nodes[0].controller.reward_baseline = 3.0;
  EXPECT_EQ(calibrate_reward_baselines(s)[0], 3.0);
}
