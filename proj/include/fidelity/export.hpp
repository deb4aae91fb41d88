#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fidelity/config.hpp"
#include "fidelity/engine.hpp"
#include "fidelity/errors.hpp"
#include "fidelity/format.hpp"

namespace fidelity {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string node_label(const Scenario& sc, std::size_t i) {
  const auto& name = sc.nodes[i].name;
  return name.empty() ? "node" + std::to_string(i) : name;
}

/// (behavior variant, social variant) per node; social variants count from 1, 0 is none.
inline std::vector<std::pair<int, int>> population_variants(const Scenario& sc) {
  std::vector<std::pair<int, int>> out;
  for (const auto& n : sc.nodes) {
    out.emplace_back(static_cast<int>(n.behavior.index()),
                     n.social ? static_cast<int>(*n.social) + 1 : 0);
  }
  return out;
}

inline std::string ticks_csv(const Scenario& sc, const RunResult& r) {
  std::string out = "time,node,figure,raw,quale,delta,mode,contract_status\n";
  for (std::size_t k = 0; k < r.times.size(); ++k) {
    for (std::size_t i = 0; i < r.nodes.size(); ++i) {
      const auto& tl = r.nodes[i];
      const auto& sample = tl.trace.samples[k];
      out += format_number(r.times[k]);
      out += ',';
      out += csv_field(node_label(sc, i));
      out += ',';
      out += csv_field(sc.figures[sample.figure].name);
      out += ',';
      out += format_number(tl.raw[k]);
      out += ',';
      out += format_number(tl.quale[k]);
      out += ',';
      out += format_number(sample.delta);
      out += ',';
      out += to_string(tl.modes[k]);
      out += ',';
      out += to_string(tl.status[k]);
      out += '\n';
    }
  }
  return out;
}

inline std::string episodes_csv(const Scenario& sc, const RunResult& r) {
  std::string out = "episode,node,cost,restoration_time,strategy\n";
  for (const auto& m : r.episodes) {
    out += std::to_string(m.episode) + "," + csv_field(node_label(sc, m.node)) + "," +
           format_number(m.integrated_abs_delta) + "," +
           (m.restoration_time ? format_number(*m.restoration_time) : std::string("not_restored")) +
           "," + csv_field(m.strategy) + "\n";
  }
  return out;
}

inline std::string events_csv(const Scenario& sc, const RunResult& r) {
  std::string out = "time,node,figure,previous_class,max_abs,window_mean,window_std,trigger\n";
  for (const auto& f : r.failures) {
    const auto& e = f.event;
    out += format_number(e.time) + "," + csv_field(node_label(sc, f.node)) + "," +
           csv_field(sc.figures[e.figure].name) + "," + std::string(class_name(e.previous)) + "," +
           format_number(e.max_abs) + "," + format_number(e.window_mean) + "," +
           format_number(e.window_std) + "," + (e.by_cusum ? "cusum" : "guard") + "\n";
  }
  return out;
}

inline std::string changes_csv(const Scenario& sc, const RunResult& r) {
  std::string out = "time,node,strategy,before,after,ok,note\n";
  for (const auto& c : r.changes) {
    out += format_number(c.time) + "," + csv_field(node_label(sc, c.node)) + "," +
           csv_field(c.strategy_id) + "," + csv_field(c.pre) + "," + csv_field(c.post) + "," +
           (c.ok ? "true" : "false") + "," + csv_field(c.note) + "\n";
  }
  return out;
}

inline std::string pool_csv(const Scenario& sc, const RunResult& r) {
  std::string out = "time,reserve";
  for (std::size_t i = 0; i < sc.nodes.size(); ++i) out += "," + csv_field(node_label(sc, i));
  out += "\n";
  for (const auto& snap : r.pool_log) {
    out += format_number(snap.time) + "," + format_number(snap.reserve.units());
    for (std::size_t i = 0; i < snap.allocations.size(); ++i) {
      out += ",";
      out += snap.members[i] ? format_number(snap.allocations[i].units()) : std::string("-");
    }
    out += "\n";
  }
  return out;
}

inline nlohmann::json learning_json(const Scenario& sc, const std::vector<LearningState>& states) {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < states.size(); ++i) {
    nodes.push_back({{"node", node_label(sc, i)}, {"learning", to_json(states[i])}});
  }
  return {{"nodes", nodes}};
}

/// Learning states from a learning.json written by a previous run, in node order.
inline std::vector<LearningState> learning_from_file(const Scenario& sc, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open learning state '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("learning state '" + path + "': " + e.what());
  }
  const auto& nodes = doc.at("nodes");
  if (nodes.size() != sc.nodes.size()) throw CatalogError("learning state node count differs from scenario");
  std::vector<LearningState> out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].at("node").get<std::string>() != node_label(sc, i)) {
      throw CatalogError("learning state node '" + nodes[i].at("node").get<std::string>() +
                         "' does not match scenario node '" + node_label(sc, i) + "'");
    }
    out.push_back(learning_from_json(nodes[i].at("learning")));
  }
  return out;
}

inline nlohmann::json report_json(const Scenario& sc, const RunResult& r) {
  using nlohmann::json;
  json report;
  report["scenario"] = sc.name;
  report["seed"] = sc.engine.seed;
  report["ticks"] = r.times.size();
  report["episodes"] = r.episode_costs.size();
  json costs = json::array();
  for (double c : r.episode_costs) costs.push_back(c);
  report["episode_costs"] = costs;

  json af;
  af["metric"] = "theil_sen_slope_of_episode_cost_normalized_by_first_episode";
  af["band"] = sc.engine.slope_band;
  if (r.report) {
    af["verdict"] = std::string(to_string(r.report->verdict));
    af["slope"] = r.report->slope;
    af["normalized_slope"] = r.report->normalized_slope;
  } else {
    af["verdict"] = nullptr;
    af["reason"] = "fewer than " + std::to_string(kMinEpisodes) + " episodes";
  }
  report["antifragility"] = af;

  json nodes = json::array();
  for (std::size_t i = 0; i < sc.nodes.size(); ++i) {
    json ranks = json::object();
    if (i < r.learning.size()) {
      for (const auto& [regime, arms] : r.learning[i].arms) {
        json list = json::array();
        for (const auto& a : arms) {
          list.push_back({{"strategy_id", a.strategy_id}, {"rank", a.rank}, {"pulls", a.pulls},
                          {"mean_reward", a.mean}});
        }
        ranks[std::string(to_string(regime))] = list;
      }
    }
    std::size_t failures = 0;
    for (const auto& f : r.failures) failures += f.node == i ? 1 : 0;
    nodes.push_back({{"node", node_label(sc, i)},
                     {"strategy_ranks", ranks},
                     {"identity_failures", failures},
                     {"model_building_ops", r.model_building_ops[i]},
                     {"reward_baseline", r.reward_baselines[i]}});
  }
  report["nodes"] = nodes;
  const auto population = population_variants(sc);
  report["diversity_score"] =
      population.empty() ? 0.0 : diversity_score(population, sc.engine.diversity_space);
  report["pool_violations"] = r.pool_violations;
  report["config"] = scenario_to_json(sc);
  return report;
}

/// Writes `files` (name -> content) into `dir`. Each file is written under a
/// temporary name first and renamed once every file has been written.
inline void write_files_atomically(const std::filesystem::path& dir,
                                   const std::vector<std::pair<std::string, std::string>>& files) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory '" + dir.string() + "': " + ec.message());
  std::vector<fs::path> temps;
  auto cleanup = [&] {
    for (const auto& t : temps) fs::remove(t, ec);
  };
  for (const auto& [name, content] : files) {
    const fs::path tmp = dir / ("." + name + ".tmp");
    temps.push_back(tmp);
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    out.close();
    if (!out) {
      cleanup();
      throw Error("cannot write '" + tmp.string() + "'");
    }
  }
  for (std::size_t i = 0; i < files.size(); ++i) {
    fs::rename(temps[i], dir / files[i].first, ec);
    if (ec) {
      cleanup();
      throw Error("cannot rename into '" + (dir / files[i].first).string() + "': " + ec.message());
    }
  }
}

inline void write_run(const std::filesystem::path& dir, const Scenario& sc, const RunResult& r) {
  write_files_atomically(dir, {
                                  {"ticks.csv", ticks_csv(sc, r)},
                                  {"episodes.csv", episodes_csv(sc, r)},
                                  {"report.json", report_json(sc, r).dump(2) + "\n"},
                                  {"learning.json", learning_json(sc, r.learning).dump(2) + "\n"},
                                  {"events.csv", events_csv(sc, r)},
                                  {"changes.csv", changes_csv(sc, r)},
                                  {"pool.csv", pool_csv(sc, r)},
                              });
}

}  // namespace fidelity
