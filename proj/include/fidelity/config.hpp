#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fidelity/errors.hpp"
#include "fidelity/scenario.hpp"

namespace fidelity {

// Scenario documents are JSON. Every section is an object; unknown keys are
// errors, absent keys take the defaults of the corresponding struct.

namespace config_detail {

using nlohmann::json;

/// Reads one object, tracking which keys were consumed.
class Section {
 public:
  Section(const json* node, std::string path, std::vector<std::string>& problems)
      : node_(node), path_(std::move(path)), problems_(problems) {
    if (node_ && !node_->is_object()) {
      problems_.push_back(path_ + ": must be an object");
      node_ = nullptr;
    }
  }

  ~Section() = default;
  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  const std::string& path() const { return path_; }
  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    used_.insert(key);
    return node_ && node_->contains(key) && !(*node_)[key].is_null();
  }

  const json* raw(const std::string& key) {
    if (!has(key)) return nullptr;
    return &(*node_)[key];
  }

  template <class T>
  void read(const std::string& key, T& target) {
    const json* v = raw(key);
    if (!v) return;
    convert(*v, at(key), target);
  }

  template <class T>
  void read(const std::string& key, std::optional<T>& target) {
    const json* v = raw(key);
    if (!v) return;
    T value{};
    if (convert(*v, at(key), value)) target = value;
  }

  template <class T>
  void require(const std::string& key, T& target) {
    if (!has(key)) {
      problems_.push_back(at(key) + ": required");
      return;
    }
    read(key, target);
  }

  /// Reports every key present but never asked for.
  void finish() {
    if (!node_) return;
    for (const auto& [key, value] : node_->items()) {
      if (!used_.contains(key)) problems_.push_back(at(key) + ": unknown key");
    }
  }

  std::vector<std::string>& problems() { return problems_; }

 private:
  template <class T>
  bool convert(const json& v, const std::string& where, T& out) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return fail(where, "must be a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) return fail(where, "must be a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) return fail(where, "must be a number");
      out = v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) return fail(where, "must be an integer");
      if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() &&
          v.get<std::int64_t>() < 0) {
        return fail(where, "must be non-negative");
      }
      out = v.get<T>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
    return true;
  }

  bool fail(const std::string& where, const std::string& what) {
    problems_.push_back(where + ": " + what);
    return false;
  }

  const json* node_;
  std::string path_;
  std::vector<std::string>& problems_;
  std::set<std::string> used_;
};

inline const json* array_at(Section& s, const std::string& key) {
  const json* v = s.raw(key);
  if (v && !v->is_array()) {
    s.problems().push_back(s.at(key) + ": must be an array");
    return nullptr;
  }
  return v;
}

inline std::string indexed(const std::string& base, std::size_t i) {
  return base + "[" + std::to_string(i) + "]";
}

inline BasicProcess read_basic(Section& s, const std::string& kind) {
  if (kind == "constant") return Constant{};
  if (kind == "linear_drift") {
    LinearDrift d;
    s.require("rate", d.rate);
    return d;
  }
  if (kind == "random_walk") {
    RandomWalk w;
    s.require("step_std", w.step_std);
    return w;
  }
  s.problems().push_back(s.at("kind") + ": unknown process kind '" + kind + "'");
  return Constant{};
}

inline BasicProcess read_basic_section(const json* node, const std::string& path,
                                       std::vector<std::string>& problems) {
  Section s(node, path, problems);
  std::string kind = "constant";
  s.read("kind", kind);
  auto out = read_basic(s, kind);
  s.finish();
  return out;
}

inline DriftProcess read_process(const json& node, const std::string& path,
                                 std::vector<std::string>& problems) {
  Section s(&node, path, problems);
  DriftProcess p;
  s.require("figure", p.figure);
  std::string kind = "constant";
  s.require("kind", kind);
  if (kind == "regime_switching") {
    RegimeSwitching r;
    s.require("hazard", r.hazard);
    r.calm = read_basic_section(s.raw("calm"), s.at("calm"), problems);
    r.turbulent = read_basic_section(s.raw("turbulent"), s.at("turbulent"), problems);
    p.kind = r;
  } else {
    std::visit([&](auto b) { p.kind = b; }, read_basic(s, kind));
  }
  s.finish();
  return p;
}

inline IdentityClass read_contract(const json* node, const std::string& path,
                                   std::vector<std::string>& problems) {
  Section s(node, path, problems);
  std::string cls = "none";
  s.read("class", cls);
  IdentityClass out = NonRT{};
  if (cls == "hard") {
    HardRT h;
    s.require("t", h.t);
    out = h;
  } else if (cls == "soft") {
    SoftRT c;
    s.require("t", c.t);
    s.require("sigma", c.sigma);
    out = c;
  } else if (cls == "best_effort") {
    BestEffort b;
    s.require("b", b.b);
    out = b;
  } else if (cls != "none") {
    problems.push_back(s.at("class") + ": unknown contract class '" + cls + "'");
  }
  s.finish();
  return out;
}

inline CorrectiveAction read_action(const json& node, const std::string& path,
                                    std::vector<std::string>& problems) {
  Section s(&node, path, problems);
  CorrectiveAction a;
  s.read("bias", a.bias_adjustment);
  s.read("gain", a.gain_multiplier);
  s.read("sampling_period", a.sampling_period);
  s.finish();
  return a;
}

inline BehaviorClass read_behavior(const json* node, const std::string& path,
                                   std::vector<std::string>& problems) {
  Section s(node, path, problems);
  std::string kind = "passive";
  s.read("kind", kind);
  BehaviorClass out = Passive{};
  if (kind == "active") {
    ActiveNonPurposeful a;
    if (const json* list = array_at(s, "schedule")) {
      for (std::size_t i = 0; i < list->size(); ++i) {
        a.schedule.push_back(read_action((*list)[i], indexed(s.at("schedule"), i), problems));
      }
    }
    out = a;
  } else if (kind == "purposeful") {
    PurposefulNonTeleological p;
    s.read("setpoint", p.setpoint);
    s.read("policy_gain", p.policy_gain);
    out = p;
  } else if (kind == "reactive") {
    Reactive r;
    s.read("gain", r.gain);
    out = r;
  } else if (kind == "predictive") {
    PredictiveOrderK p;
    s.read("order", p.order);
    s.read("history", p.history);
    out = p;
  } else if (kind != "passive") {
    problems.push_back(s.at("kind") + ": unknown behavior kind '" + kind + "'");
  }
  s.finish();
  return out;
}

inline std::optional<SocialBehavior> parse_social(const std::string& name) {
  if (name == "neutral") return SocialBehavior::Neutral;
  if (name == "individualistic") return SocialBehavior::Individualistic;
  if (name == "cooperative") return SocialBehavior::Cooperative;
  return std::nullopt;
}

inline Strategy read_strategy(const json& node, const std::string& path,
                              std::vector<std::string>& problems) {
  Section s(&node, path, problems);
  Strategy st;
  s.require("id", st.id);
  const bool reconf = s.has("reconfigure");
  const bool social = s.has("social");
  if (reconf == social) {
    problems.push_back(path + ": exactly one of 'reconfigure' or 'social' is required");
  }
  if (reconf) {
    Section r(s.raw("reconfigure"), s.at("reconfigure"), problems);
    Reconfigure rc;
    rc.behavior = read_behavior(r.raw("behavior"), r.at("behavior"), problems);
    Section c(r.raw("channel"), r.at("channel"), problems);
    c.read("gain", rc.channel.gain);
    c.read("noise_std", rc.channel.noise_std);
    c.read("quantization", rc.channel.quantization);
    c.read("sampling_period", rc.channel.sampling_period);
    c.read("latency", rc.channel.latency);
    c.finish();
    r.finish();
    st.kind = rc;
  } else if (social) {
    Section m(s.raw("social"), s.at("social"), problems);
    SocialMove mv;
    std::string action;
    m.require("action", action);
    if (action == "join") mv.action = SocialTemplate::Join;
    else if (action == "leave") mv.action = SocialTemplate::Leave;
    else if (action == "grab") mv.action = SocialTemplate::Grab;
    else if (action == "assist") mv.action = SocialTemplate::Assist;
    else if (!action.empty()) problems.push_back(m.at("action") + ": unknown action '" + action + "'");
    m.read("amount", mv.amount);
    m.finish();
    st.kind = mv;
  }
  s.finish();
  return st;
}

inline NodeSpec read_node(const json& node, const std::string& path,
                          std::vector<std::string>& problems) {
  Section s(&node, path, problems);
  NodeSpec n;
  s.read("name", n.name);
  {
    Section c(s.raw("channel"), s.at("channel"), problems);
    auto& m = n.channel.map;
    c.require("figure", m.figure);
    c.read("gain", m.gain);
    c.read("bias", m.bias);
    c.read("noise_std", m.noise_std);
    c.read("quantization", m.quantization);
    c.read("sampling_period", m.sampling_period);
    c.read("latency", m.latency);
    if (const json* list = array_at(c, "disturbances")) {
      for (std::size_t i = 0; i < list->size(); ++i) {
        Section d(&(*list)[i], indexed(c.at("disturbances"), i), problems);
        Disturbance dist;
        d.require("figure", dist.figure);
        d.read("sensitivity", dist.sensitivity);
        d.finish();
        n.channel.disturbances.push_back(dist);
      }
    }
    c.finish();
  }
  {
    Section c(s.raw("nominal"), s.at("nominal"), problems);
    c.read("gain", n.nominal.gain);
    c.read("bias", n.nominal.bias);
    c.finish();
  }
  n.contract = read_contract(s.raw("contract"), s.at("contract"), problems);
  {
    Section c(s.raw("identity"), s.at("identity"), problems);
    c.read("window", n.identity.window);
    auto& d = n.identity.detector;
    c.read("guard_window", d.guard_window);
    c.read("at_risk_ratio", d.at_risk_ratio);
    c.read("cusum_reference", d.reference);
    c.read("cusum_slack", d.slack);
    c.read("cusum_threshold", d.threshold);
    c.finish();
  }
  n.behavior = read_behavior(s.raw("behavior"), s.at("behavior"), problems);
  if (s.has("social")) {
    std::string social;
    s.read("social", social);
    if (social != "none") {
      n.social = parse_social(social);
      if (!n.social) problems.push_back(s.at("social") + ": unknown social behavior '" + social + "'");
    }
  }
  if (const json* list = array_at(s, "context")) {
    for (std::size_t i = 0; i < list->size(); ++i) {
      const auto& v = (*list)[i];
      if (!v.is_number_unsigned()) {
        problems.push_back(indexed(s.at("context"), i) + ": must be a figure index");
      } else {
        n.context.push_back(v.get<std::size_t>());
      }
    }
  }
  s.read("capacity", n.capacity);
  {
    Section c(s.raw("controller"), s.at("controller"), problems);
    auto& k = n.controller;
    c.read("alpha", k.alpha);
    c.read("turbulence_threshold", k.safety.turbulence_threshold);
    c.read("horizon", k.safety.horizon);
    c.read("hysteresis", k.hysteresis);
    std::string policy = "ucb1";
    c.read("policy", policy);
    if (policy == "ucb1") k.policy = SelectionPolicy::Ucb1;
    else if (policy == "epsilon_greedy") k.policy = SelectionPolicy::EpsilonGreedy;
    else problems.push_back(c.at("policy") + ": unknown policy '" + policy + "'");
    c.read("exploration", k.exploration);
    c.read("epsilon", k.epsilon);
    c.read("learning", k.learning);
    c.read("reward_baseline", k.reward_baseline);
    c.finish();
  }
  if (const json* list = array_at(s, "catalog")) {
    for (std::size_t i = 0; i < list->size(); ++i) {
      n.catalog.push_back(read_strategy((*list)[i], indexed(s.at("catalog"), i), problems));
    }
  }
  s.finish();
  return n;
}

// Writers mirror the readers and always emit every key.

inline json write_basic(const BasicProcess& b) {
  if (const auto* d = std::get_if<LinearDrift>(&b)) return {{"kind", "linear_drift"}, {"rate", d->rate}};
  if (const auto* w = std::get_if<RandomWalk>(&b)) return {{"kind", "random_walk"}, {"step_std", w->step_std}};
  return {{"kind", "constant"}};
}

inline json write_behavior(const BehaviorClass& b) {
  struct V {
    json operator()(const Passive&) const { return {{"kind", "passive"}}; }
    json operator()(const ActiveNonPurposeful& a) const {
      json list = json::array();
      for (const auto& s : a.schedule) {
        json e{{"bias", s.bias_adjustment}, {"gain", s.gain_multiplier}};
        if (s.sampling_period) e["sampling_period"] = *s.sampling_period;
        list.push_back(e);
      }
      return {{"kind", "active"}, {"schedule", list}};
    }
    json operator()(const PurposefulNonTeleological& p) const {
      return {{"kind", "purposeful"}, {"setpoint", p.setpoint}, {"policy_gain", p.policy_gain}};
    }
    json operator()(const Reactive& r) const { return {{"kind", "reactive"}, {"gain", r.gain}}; }
    json operator()(const PredictiveOrderK& p) const {
      return {{"kind", "predictive"}, {"order", p.order}, {"history", p.history}};
    }
  };
  return std::visit(V{}, b);
}

inline json write_contract(const IdentityClass& c) {
  struct V {
    json operator()(const HardRT& h) const { return {{"class", "hard"}, {"t", h.t}}; }
    json operator()(const SoftRT& s) const { return {{"class", "soft"}, {"t", s.t}, {"sigma", s.sigma}}; }
    json operator()(const BestEffort& b) const { return {{"class", "best_effort"}, {"b", b.b}}; }
    json operator()(const NonRT&) const { return {{"class", "none"}}; }
  };
  return std::visit(V{}, c);
}

inline json write_strategy(const Strategy& st) {
  json out{{"id", st.id}};
  if (const auto* r = std::get_if<Reconfigure>(&st.kind)) {
    json ch = json::object();
    if (r->channel.gain) ch["gain"] = *r->channel.gain;
    if (r->channel.noise_std) ch["noise_std"] = *r->channel.noise_std;
    if (r->channel.quantization) ch["quantization"] = *r->channel.quantization;
    if (r->channel.sampling_period) ch["sampling_period"] = *r->channel.sampling_period;
    if (r->channel.latency) ch["latency"] = *r->channel.latency;
    out["reconfigure"] = {{"behavior", write_behavior(r->behavior)}, {"channel", ch}};
  } else {
    const auto& m = std::get<SocialMove>(st.kind);
    static constexpr const char* names[] = {"join", "leave", "grab", "assist"};
    out["social"] = {{"action", names[static_cast<int>(m.action)]}, {"amount", m.amount}};
  }
  return out;
}

}  // namespace config_detail

/// Parses a scenario document. Collects every structural and semantic
/// problem and throws one ValidationError listing all of them.
inline Scenario scenario_from_json(const nlohmann::json& doc) {
  using namespace config_detail;
  std::vector<std::string> problems;
  Scenario sc;
  Section root(&doc, "", problems);
  if (!doc.is_object()) throw ValidationError(std::move(problems));

  int version = 0;
  root.require("schema_version", version);
  if (root.has("schema_version") && version != kScenarioSchemaVersion) {
    problems.push_back("schema_version: unsupported version " + std::to_string(version) +
                       " (expected " + std::to_string(kScenarioSchemaVersion) + ")");
  }
  root.read("name", sc.name);

  {
    Section env(root.raw("environment"), "environment", problems);
    if (const json* list = array_at(env, "figures")) {
      for (std::size_t i = 0; i < list->size(); ++i) {
        Section f(&(*list)[i], indexed("environment.figures", i), problems);
        FigureSpec fig;
        f.require("name", fig.name);
        f.read("units", fig.units);
        f.read("initial", fig.initial);
        f.finish();
        sc.figures.push_back(fig);
      }
    }
    if (const json* list = array_at(env, "processes")) {
      for (std::size_t i = 0; i < list->size(); ++i) {
        sc.processes.push_back(read_process((*list)[i], indexed("environment.processes", i), problems));
      }
    }
    {
      Section r(env.raw("regime"), "environment.regime", problems);
      r.read("window", sc.regime.window);
      r.read("threshold", sc.regime.threshold);
      r.finish();
    }
    if (const json* list = array_at(env, "shocks")) {
      for (std::size_t i = 0; i < list->size(); ++i) {
        Section sh(&(*list)[i], indexed("environment.shocks", i), problems);
        ShockEvent e;
        sh.require("at", e.at);
        sh.require("figure", e.figure);
        sh.require("magnitude", e.magnitude);
        sh.require("recovery_window", e.recovery_window);
        sh.finish();
        sc.shocks.push_back(e);
      }
    }
    env.finish();
  }

  if (root.has("pool")) {
    Section p(root.raw("pool"), "pool", problems);
    PoolSpec pool;
    p.require("total_budget", pool.total_budget);
    double quantum = pool.social.assist_quantum.units();
    p.read("assist_quantum", quantum);
    pool.social.assist_quantum = Budget::from_units(quantum);
    p.read("reciprocation_weight", pool.social.reciprocation_weight);
    p.read("calm_window", pool.social.calm_window);
    p.read("assist_headroom", pool.social.assist_headroom);
    p.finish();
    sc.pool = pool;
  }

  if (const json* list = array_at(root, "nodes")) {
    for (std::size_t i = 0; i < list->size(); ++i) {
      sc.nodes.push_back(read_node((*list)[i], indexed("nodes", i), problems));
    }
  }

  {
    Section e(root.raw("engine"), "engine", problems);
    e.require("duration", sc.engine.duration);
    e.read("dt", sc.engine.dt);
    e.read("seed", sc.engine.seed);
    e.read("slope_band", sc.engine.slope_band);
    e.read("diversity_space", sc.engine.diversity_space);
    e.finish();
  }
  root.finish();

  if (problems.empty()) problems = validate(sc);
  if (!problems.empty()) throw ValidationError(std::move(problems));
  return sc;
}

/// Fully defaulted document; scenario_from_json(scenario_to_json(s)) reproduces `s`.
inline nlohmann::json scenario_to_json(const Scenario& sc) {
  using namespace config_detail;
  json doc;
  doc["schema_version"] = kScenarioSchemaVersion;
  doc["name"] = sc.name;

  json figures = json::array();
  for (const auto& f : sc.figures) figures.push_back({{"name", f.name}, {"units", f.units}, {"initial", f.initial}});
  json processes = json::array();
  for (const auto& p : sc.processes) {
    json j;
    if (const auto* r = std::get_if<RegimeSwitching>(&p.kind)) {
      j = {{"kind", "regime_switching"}, {"hazard", r->hazard}, {"calm", write_basic(r->calm)},
           {"turbulent", write_basic(r->turbulent)}};
    } else {
      std::visit(
          [&](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            if constexpr (!std::is_same_v<K, RegimeSwitching>) j = write_basic(k);
          },
          p.kind);
    }
    j["figure"] = p.figure;
    processes.push_back(j);
  }
  json shocks = json::array();
  for (const auto& s : sc.shocks) {
    shocks.push_back({{"at", s.at}, {"figure", s.figure}, {"magnitude", s.magnitude},
                      {"recovery_window", s.recovery_window}});
  }
  doc["environment"] = {{"figures", figures},
                        {"processes", processes},
                        {"regime", {{"window", sc.regime.window}, {"threshold", sc.regime.threshold}}},
                        {"shocks", shocks}};

  if (sc.pool) {
    const auto& s = sc.pool->social;
    doc["pool"] = {{"total_budget", sc.pool->total_budget},
                   {"assist_quantum", s.assist_quantum.units()},
                   {"reciprocation_weight", s.reciprocation_weight},
                   {"calm_window", s.calm_window},
                   {"assist_headroom", s.assist_headroom}};
  }

  json nodes = json::array();
  for (const auto& n : sc.nodes) {
    const auto& m = n.channel.map;
    json dist = json::array();
    for (const auto& d : n.channel.disturbances) dist.push_back({{"figure", d.figure}, {"sensitivity", d.sensitivity}});
    const auto& det = n.identity.detector;
    const auto& k = n.controller;
    json controller{{"alpha", k.alpha},
                    {"turbulence_threshold", k.safety.turbulence_threshold},
                    {"horizon", k.safety.horizon},
                    {"hysteresis", k.hysteresis},
                    {"policy", k.policy == SelectionPolicy::Ucb1 ? "ucb1" : "epsilon_greedy"},
                    {"exploration", k.exploration},
                    {"epsilon", k.epsilon},
                    {"learning", k.learning}};
    if (k.reward_baseline) controller["reward_baseline"] = *k.reward_baseline;
    json catalog = json::array();
    for (const auto& st : n.catalog) catalog.push_back(write_strategy(st));
    json node{{"name", n.name},
              {"channel",
               {{"figure", m.figure}, {"gain", m.gain}, {"bias", m.bias}, {"noise_std", m.noise_std},
                {"quantization", m.quantization}, {"sampling_period", m.sampling_period},
                {"latency", m.latency}, {"disturbances", dist}}},
              {"nominal", {{"gain", n.nominal.gain}, {"bias", n.nominal.bias}}},
              {"contract", write_contract(n.contract)},
              {"identity",
               {{"window", n.identity.window}, {"guard_window", det.guard_window},
                {"at_risk_ratio", det.at_risk_ratio}, {"cusum_reference", det.reference},
                {"cusum_slack", det.slack}, {"cusum_threshold", det.threshold}}},
              {"behavior", write_behavior(n.behavior)},
              {"social", n.social ? std::string(to_string(*n.social)) : std::string("none")},
              {"context", n.context},
              {"controller", controller},
              {"catalog", catalog}};
    if (n.capacity) node["capacity"] = *n.capacity;
    nodes.push_back(node);
  }
  doc["nodes"] = nodes;
  doc["engine"] = {{"duration", sc.engine.duration},   {"dt", sc.engine.dt},
                   {"seed", sc.engine.seed},           {"slope_band", sc.engine.slope_band},
                   {"diversity_space", sc.engine.diversity_space}};
  return doc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError({path + ": " + e.what()});
  }
  return scenario_from_json(doc);
}

}  // namespace fidelity
