// Acceptance gate: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria, or, with --known-failure N (repeatable), zero exactly when
// the failed set equals the declared set.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fidelity/fidelity.hpp"
#include "oracles.hpp"

using namespace fidelity;

namespace {

// Pinned tolerances and limits.
constexpr double kC1Seconds = 1.0;
constexpr double kC2Seconds = 5.0;
constexpr double kC4Residual = 1e-6;
constexpr std::size_t kC4WarmupTicks = 10;
constexpr double kC5Seconds = 2.0;
constexpr double kC6Seconds = 60.0;
constexpr double kC6MinCorrect = 0.80;
constexpr double kC6MinGap = 0.3;
constexpr double kC6MaxNoise = 0.05;
constexpr double kC7Seconds = 120.0;
constexpr int kC7MinSeeds = 16;
constexpr double kC8Seconds = 60.0;
constexpr int kC8MinTrials = 18;
constexpr int kSeeds = 20;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Algebraic model

Outcome algebraic_model() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 gen(1);
  // Dyadic gains, biases and inputs keep every product and sum exact.
  std::uniform_int_distribution<int> gain_num(-64, 64), bias_num(-1024, 1024);
  std::uniform_int_distribution<std::int64_t> input(-(std::int64_t{1} << 30), std::int64_t{1} << 30);
  std::size_t exact = 0;
  const std::size_t pairs = 1000;
  for (std::size_t i = 0; i < pairs; ++i) {
    ReflectiveMap m;
    m.gain = std::ldexp(gain_num(gen), -4);
    m.bias = std::ldexp(bias_num(gen), -8);
    const double u1 = std::ldexp(static_cast<double>(input(gen)), -16);
    const double u2 = std::ldexp(static_cast<double>(input(gen)), -16);
    exact += preservation_distance(m, u1, u2) == -m.bias;
  }

  std::size_t grid_points = 0, within = 0;
  for (double q : {0.05, 0.1, 0.25, 0.5, 1.0}) {
    for (double bias : {0.0, 0.03, -0.4, 1.1}) {
      for (double gain : {0.5, 1.0, 1.7}) {
        ReflectiveMap m;
        m.gain = gain;
        m.bias = bias;
        m.quantization = q;
        for (int a = -100; a <= 100; ++a) {
          for (int b = -20; b <= 20; ++b) {
            const double u1 = 0.0371 * a, u2 = 0.193 * b;
            ++grid_points;
            within += std::abs(preservation_distance(m, u1, u2)) <= 1.5 * q + std::abs(bias);
          }
        }
      }
    }
  }
  const double secs = seconds_since(start);
  return {exact == pairs && within == grid_points && secs < kC1Seconds,
          fmt("exact -bias %zu/%zu, quantized bound %zu/%zu grid points, %.3fs", exact, pairs, within,
              grid_points, secs)};
}

// ---------------------------------------------------------------------------
// 2. Classifier oracle equivalence

Outcome classifier_oracle() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 0.04);
  std::student_t_distribution<double> heavy(1.5);
  std::size_t match = 0;
  const std::size_t traces = 200;
  for (std::size_t i = 0; i < traces; ++i) {
    const std::size_t n = 20 + i % 181;
    std::vector<double> d(n);
    for (auto& x : d) {
      switch (i % 3) {
        case 0: x = 0.15 * (unit(gen) - 0.5); break;
        case 1: x = unit(gen) < 0.04 ? gauss(gen) * 15.0 : gauss(gen); break;
        default: x = 0.02 * heavy(gen); break;
      }
    }
    DeltaTrace t;
    for (std::size_t k = 0; k < n; ++k) t.push({0.1 * static_cast<double>(k), 0, d[k]});
    const ClassCandidate c{0.07, 0.05, 0.06};
    match += class_name(classify_trace(t, c, n)) == oracle::classify(d, c.t, c.sigma, c.b);
  }
  const double secs = seconds_since(start);
  return {match == traces && secs < kC2Seconds, fmt("%zu/%zu traces match, %.3fs", match, traces, secs)};
}

// ---------------------------------------------------------------------------
// 3. Isomorphism limit

Outcome isomorphism_limit() {
  Scenario s;
  s.figures = {{"x", "u", 3.25}, {"y", "u", -1.0}};
  s.processes = {{0, Constant{}}, {1, Constant{}}};
  s.engine.duration = 60.0;
  for (std::size_t i = 0; i < 3; ++i) {
    NodeSpec n;
    n.channel.map.figure = i % 2;
    n.contract = HardRT{0.05};
    n.behavior = Reactive{1.0};
    n.catalog = {{"predict", Reconfigure{PredictiveOrderK{1, 4}, {}}}};
    s.nodes.push_back(n);
  }
  const auto r = run_scenario(s);
  std::size_t nonzero = 0, not_hard = 0, not_elastic = 0, ops = 0;
  for (std::size_t i = 0; i < r.nodes.size(); ++i) {
    const auto& tl = r.nodes[i];
    for (std::size_t k = 0; k < r.times.size(); ++k) {
      nonzero += tl.trace.samples[k].delta != 0.0;
      not_hard += !std::holds_alternative<HardRT>(tl.identity[k]);
      not_elastic += tl.modes[k] != Mode::Elastic;
    }
    ops += r.model_building_ops[i];
  }
  return {r.times.size() == 600 && nonzero == 0 && not_hard == 0 && not_elastic == 0 && ops == 0,
          fmt("%zu ticks x 3 nodes: nonzero delta %zu, non-HardRT %zu, non-Elastic %zu, model-building ops %zu",
              r.times.size(), nonzero, not_hard, not_elastic, ops)};
}

// ---------------------------------------------------------------------------
// 4. Behavior ordering under linear drift

Outcome behavior_ordering() {
  auto run = [](BehaviorClass b) {
    Scenario s;
    s.figures = {{"x", "u", 0.0}};
    s.processes = {{0, LinearDrift{0.01}}};
    s.engine.duration = 100.0;
    NodeSpec n;
    n.channel.map.gain = 2.0;  // open-loop delta equals the figure
    n.behavior = b;
    s.nodes = {n};
    return run_scenario(s);
  };
  const auto passive = run(Passive{}), reactive = run(Reactive{1.0}), predictive = run(PredictiveOrderK{1, 3});
  auto cost = [](const RunResult& r) { return integrate_abs_delta(r.nodes[0].trace.samples, 0.0, 100.0); };
  double worst = 0.0;
  const auto& samples = predictive.nodes[0].trace.samples;
  for (std::size_t k = kC4WarmupTicks; k < samples.size(); ++k) worst = std::max(worst, std::abs(samples[k].delta));
  const double cp = cost(predictive), cr = cost(reactive), cpa = cost(passive);
  return {cp < cr && cr < cpa && worst < kC4Residual,
          fmt("predictive %.3g < reactive %.3g < passive %.3g; max predictive residual after tick %zu %.3g",
              cp, cr, cpa, kC4WarmupTicks, worst)};
}

// ---------------------------------------------------------------------------
// 5. Identity-failure detection on ramps

Outcome cusum_detection() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> ref(0.0, 0.05), slack(0.0, 0.02), h(0.05, 2.0), slope(0.002, 0.05);
  std::size_t equal = 0, fired = 0;
  const std::size_t configs = 50;
  for (std::size_t c = 0; c < configs; ++c) {
    const double rate = slope(gen);
    Scenario s;
    s.figures = {{"x", "u", 0.0}};
    s.processes = {{0, LinearDrift{rate}}};
    s.engine.duration = 30.0;
    NodeSpec n;
    n.channel.map.gain = 2.0;
    n.contract = HardRT{1e6};  // the guard never trips; only the CUSUM arm can fire
    n.identity.detector = {ref(gen), slack(gen), h(gen), 10, kDefaultAtRiskRatio};
    s.nodes = {n};
    const auto r = run_scenario(s);

    // Oracle: the figure advances by rate * dt per tick, and delta equals the figure.
    std::vector<double> xs;
    double x = 0.0;
    for (std::size_t k = 0; k < s.tick_count(); ++k) {
      if (k > 0) x = x + rate * s.engine.dt;
      xs.push_back(x);
    }
    const auto& d = n.identity.detector;
    const auto expect = oracle::cusum_first(xs, d.reference + d.slack, d.threshold);
    const bool got = !r.failures.empty();
    if (got) ++fired;
    if (expect && got && r.failures.front().event.time == r.times[*expect] && r.failures.front().event.by_cusum) {
      ++equal;
    } else if (!expect && !got) {
      ++equal;
    }
  }
  const double secs = seconds_since(start);
  return {equal == configs && fired > 0 && secs < kC5Seconds,
          fmt("%zu/%zu configurations fire on the oracle tick (%zu fired), %.3fs", equal, configs, fired, secs)};
}

// ---------------------------------------------------------------------------
// 6-7. Learning and antifragility

// One node, channel gain 1.5 against nominal 1 so delta = 0.5 * x. Thirty
// upward unit steps on x; the catalog offers doing nothing and a reactive
// correction.
Scenario learning_scenario(std::uint64_t seed, bool learning) {
  Scenario s;
  s.name = "learning";
  s.figures = {{"x", "u", 0.0}};
  s.processes = {{0, RandomWalk{0.01}}};
  for (int e = 0; e < 30; ++e) s.shocks.push_back({10.0 + 20.0 * e, 0, 1.0, 15.0});
  s.engine.duration = 610.0;
  s.engine.seed = seed;
  NodeSpec n;
  n.name = "node";
  n.channel.map.gain = 1.5;
  n.contract = HardRT{0.1};
  n.catalog = {{"hold", Reconfigure{Passive{}, {}}}, {"react", Reconfigure{Reactive{1.0}, {}}}};
  n.controller.learning = learning;
  s.nodes = {n};
  return s;
}

struct LearningRun {
  RunResult result;
  std::vector<std::string> chosen;   // strategy per episode
  std::vector<double> rewards;       // learned reward per episode
};

LearningRun run_learning(std::uint64_t seed, bool learning) {
  LearningRun out;
  const auto s = learning_scenario(seed, learning);
  out.result = run_scenario(s);
  out.chosen.assign(s.shocks.size(), "-");
  for (const auto& m : out.result.episodes) out.chosen[m.episode] = m.strategy;
  for (const auto& h : out.result.learning[0].history) out.rewards.push_back(h.reward);
  return out;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return v.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(v.size()));
}

std::vector<LearningRun> g_learning_runs;

Outcome learning_convergence() {
  const auto start = std::chrono::steady_clock::now();
  std::size_t correct = 0, counted = 0;
  std::vector<double> hold_rewards, react_rewards;
  for (int seed = 0; seed < kSeeds; ++seed) {
    g_learning_runs.push_back(run_learning(static_cast<std::uint64_t>(seed), true));
    const auto& run = g_learning_runs.back();
    for (std::size_t e = 10; e < 30; ++e) {
      ++counted;
      correct += run.chosen[e] == "react";
    }
    for (const auto& h : run.result.learning[0].history) {
      (h.strategy_id == "react" ? react_rewards : hold_rewards).push_back(h.reward);
    }
  }
  const double secs = seconds_since(start);
  const double frac = static_cast<double>(correct) / static_cast<double>(counted);
  const double gap = mean_of(react_rewards) - mean_of(hold_rewards);
  const double noise = std::max(std_of(react_rewards), std_of(hold_rewards));
  const bool premise = gap >= kC6MinGap && noise <= kC6MaxNoise;
  return {premise && frac >= kC6MinCorrect && secs < kC6Seconds,
          fmt("better strategy in %zu/%zu of episodes 11-30 (%.3f); reward gap %.3f, noise std %.3f; %.1fs",
              correct, counted, frac, gap, noise, secs)};
}

Outcome antifragility_verdicts() {
  const auto start = std::chrono::steady_clock::now();
  int learning_antifragile = 0, fixed_not_antifragile = 0;
  std::vector<double> learning_slopes;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto& on = g_learning_runs.at(static_cast<std::size_t>(seed)).result;
    if (on.report && on.report->verdict == Verdict::Antifragile) ++learning_antifragile;
    if (on.report) learning_slopes.push_back(on.report->normalized_slope);
    const auto off = run_learning(static_cast<std::uint64_t>(seed), false).result;
    if (off.report && off.report->verdict != Verdict::Antifragile) ++fixed_not_antifragile;
  }
  std::sort(learning_slopes.begin(), learning_slopes.end());
  const double median = learning_slopes.empty() ? 0.0 : learning_slopes[learning_slopes.size() / 2];
  const double secs = seconds_since(start);
  return {learning_antifragile >= kC7MinSeeds && fixed_not_antifragile >= kC7MinSeeds && secs < kC7Seconds,
          fmt("learning Antifragile in %d/%d seeds (median normalized slope %.4f); fixed strategy "
              "Robust/Fragile in %d/%d; %.1fs",
              learning_antifragile, kSeeds, median, fixed_not_antifragile, kSeeds, secs)};
}

// ---------------------------------------------------------------------------
// 8-10. Diversity, determinism, conservation

constexpr std::size_t kPopulation = 12;

// Twelve capacity-limited nodes sharing a correction pool. A shared step on
// the interference figure reaches the randomly chosen half of the nodes that
// are coupled to it.
Scenario population_scenario(std::uint64_t seed, bool diverse) {
  Scenario s;
  s.name = diverse ? "diverse" : "monoculture";
  s.figures = {{"load", "u", 1.0}, {"interference", "u", 0.0}};
  s.processes = {{0, RandomWalk{0.005}}, {1, Constant{}}};
  for (int e = 0; e < 4; ++e) s.shocks.push_back({5.0 + 15.0 * e, 1, e % 2 ? -1.0 : 1.0, 12.0});
  s.pool = PoolSpec{2.0, {}};
  s.engine.duration = 65.0;
  s.engine.seed = seed;

  const std::vector<BehaviorClass> behaviors{Reactive{0.5}, PredictiveOrderK{1, 4}};
  const std::vector<SocialBehavior> socials{SocialBehavior::Neutral, SocialBehavior::Individualistic,
                                            SocialBehavior::Cooperative};
  s.engine.diversity_space = behaviors.size() * socials.size();

  std::vector<std::size_t> order(kPopulation);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 gen(derive_seed(seed, StreamPurpose::Policy, 1'000'000));
  std::shuffle(order.begin(), order.end(), gen);
  std::vector<bool> coupled(kPopulation, false);
  for (std::size_t i = 0; i < kPopulation / 2; ++i) coupled[order[i]] = true;

  for (std::size_t i = 0; i < kPopulation; ++i) {
    NodeSpec n;
    n.name = "n" + std::to_string(i);
    n.contract = HardRT{0.2};
    n.capacity = 0.02;
    if (coupled[i]) n.channel.disturbances = {{1, 1.0}};
    n.behavior = diverse ? behaviors[i % behaviors.size()] : behaviors[0];
    n.social = diverse ? socials[(i / behaviors.size()) % socials.size()] : socials[0];
    s.nodes.push_back(n);
  }
  return s;
}

double worst_recovery(const Scenario& s, const RunResult& r) {
  double worst = 0.0;
  for (const auto& m : r.episodes) {
    const double w = s.shocks[m.episode].recovery_window;
    worst = std::max(worst, m.restoration_time.value_or(w + s.engine.dt));
  }
  return worst;
}

std::vector<RunResult> g_population_runs;

Outcome diversity_property() {
  const auto start = std::chrono::steady_clock::now();
  int wins = 0, ties = 0;
  double sum_diverse = 0.0, sum_mono = 0.0, min_score = 1.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto sd = population_scenario(static_cast<std::uint64_t>(seed), true);
    const auto sm = population_scenario(static_cast<std::uint64_t>(seed), false);
    auto rd = run_scenario(sd);
    auto rm = run_scenario(sm);
    const double wd = worst_recovery(sd, rd), wm = worst_recovery(sm, rm);
    wins += wd <= wm;
    ties += wd == wm;
    sum_diverse += wd;
    sum_mono += wm;
    min_score = std::min(min_score, diversity_score(population_variants(sd), sd.engine.diversity_space));
    g_population_runs.push_back(std::move(rd));
    g_population_runs.push_back(std::move(rm));
  }
  const double secs = seconds_since(start);
  return {wins >= kC8MinTrials && secs < kC8Seconds,
          fmt("diverse worst-node recovery <= monoculture in %d/%d trials, %d of them ties (mean %.2fs vs %.2fs, diversity %.3f); %.1fs",
              wins, kSeeds, ties, sum_diverse / kSeeds, sum_mono / kSeeds, min_score, secs)};
}

Outcome determinism() {
  std::vector<Scenario> scenarios{learning_scenario(3, true), population_scenario(4, true)};
  scenarios.push_back(load_scenario(std::string(FIDELITY_SOURCE_DIR) + "/scenarios/drift_learning.json"));
  std::size_t identical = 0;
  for (const auto& s : scenarios) {
    const auto a = run_scenario(s), b = run_scenario(s);
    identical += ticks_csv(s, a) == ticks_csv(s, b) && episodes_csv(s, a) == episodes_csv(s, b) &&
                 report_json(s, a).dump() == report_json(s, b).dump();
  }
  return {identical == scenarios.size(),
          fmt("%zu/%zu scenarios byte-identical across two runs (ticks.csv, episodes.csv, report.json)", identical,
              scenarios.size())};
}

Outcome pool_conservation() {
  std::size_t violations = 0, snapshots = 0, bad = 0;
  for (const auto& r : g_population_runs) {
    violations += r.pool_violations;
    for (const auto& snap : r.pool_log) {
      ++snapshots;
      Budget sum = snap.reserve;
      bool ok = snap.reserve.micro >= 0;
      for (const auto& a : snap.allocations) {
        ok = ok && a.micro >= 0;
        sum += a;
      }
      bad += !(ok && sum == Budget::from_units(2.0));
    }
  }
  return {!g_population_runs.empty() && violations == 0 && bad == 0,
          fmt("%zu pool snapshots over %zu runs: %zu engine-reported violations, %zu sweep violations", snapshots,
              g_population_runs.size(), violations, bad)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::size_t> known;
  for (int a = 1; a + 1 < argc; a += 2) {
    if (std::string(argv[a]) == "--known-failure") known.insert(std::stoul(argv[a + 1]));
  }
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"algebraic model", algebraic_model},
      {"classifier oracle equivalence", classifier_oracle},
      {"isomorphism limit", isomorphism_limit},
      {"behavior ordering", behavior_ordering},
      {"identity-failure detection", cusum_detection},
      {"learning convergence", learning_convergence},
      {"antifragility verdicts", antifragility_verdicts},
      {"diversity", diversity_property},
      {"determinism", determinism},
      {"pool conservation", pool_conservation},
  };
  int failed = 0;
  std::set<std::size_t> failed_set;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    if (!o.pass) failed_set.insert(i + 1);
    std::printf("criterion %2zu %-30s %s  %s\n", i + 1, criteria[i].first, o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  if (known.empty()) return failed;
  for (std::size_t k : known) {
    std::printf("criterion %2zu declared as a known failure: %s\n", k,
                failed_set.count(k) ? "still failing" : "now passing, remove the declaration");
  }
  return failed_set == known ? 0 : 1;
}
