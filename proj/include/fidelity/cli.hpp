#pragma once

#include <glob.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fidelity/config.hpp"
#include "fidelity/engine.hpp"
#include "fidelity/errors.hpp"
#include "fidelity/export.hpp"
#include "fidelity/identity.hpp"

namespace fidelity::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitValidation = 2;

inline void print_problems(std::ostream& err, const ValidationError& e) {
  err << "validation failed:\n";
  for (const auto& p : e.problems()) err << "  " << p << "\n";
}

struct RunArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<std::string> resume;
};

inline int cmd_run(const RunArgs& args, std::ostream& out, std::ostream& err) {
  Scenario sc;
  std::vector<LearningState> initial;
  try {
    sc = load_scenario(args.config);
    if (args.seed) sc.engine.seed = *args.seed;
    if (args.resume) initial = learning_from_file(sc, *args.resume);
  } catch (const ValidationError& e) {
    print_problems(err, e);
    return kExitValidation;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  try {
    RunOptions options;
    options.initial_learning = std::move(initial);
    const auto result = run_scenario(sc, std::move(options));
    write_run(args.out, sc, result);
    out << "wrote " << args.out << " (" << result.times.size() << " ticks, "
        << result.episode_costs.size() << " episodes";
    if (result.report) out << ", " << to_string(result.report->verdict);
    out << ")\n";
    return kExitOk;
  } catch (const ValidationError& e) {
    print_problems(err, e);
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

struct ClassifyArgs {
  std::string trace;
  ClassCandidate candidate;
  std::optional<std::size_t> window;
  std::optional<std::string> node;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a Δ trace. Columns are found by header name: `time` and `delta` are
/// required, `node` filters rows when a node is requested.
inline DeltaTrace read_trace_csv(std::istream& in, const std::optional<std::string>& node) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw InsufficientData("trace is empty");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  auto col = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto time_col = col("time");
  const auto delta_col = col("delta");
  const auto node_col = col("node");
  if (!time_col || !delta_col) throw ConfigError("line 1: header must name 'time' and 'delta' columns");
  if (node && !node_col) throw ConfigError("line 1: --node given but the trace has no 'node' column");

  DeltaTrace trace;
  std::optional<std::string> seen_node;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    const auto where = "line " + std::to_string(lineno);
    if (fields.size() != header.size()) {
      throw ConfigError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                        std::to_string(fields.size()));
    }
    if (node_col) {
      const auto& name = fields[*node_col];
      if (node && name != *node) continue;
      if (!node) {
        if (seen_node && *seen_node != name) {
          throw ConfigError(where + ": trace mixes nodes; select one with --node");
        }
        seen_node = name;
      }
    }
    const auto t = detail::parse_double(fields[*time_col]);
    const auto d = detail::parse_double(fields[*delta_col]);
    if (!t || !d) throw ConfigError(where + ": time and delta must be numbers");
    try {
      trace.push({*t, 0, *d});
    } catch (const SequencingError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  if (trace.empty()) throw InsufficientData("trace has no samples");
  return trace;
}

inline nlohmann::json classification_json(const IdentityClass& cls, const WindowStats& stats) {
  nlohmann::json params = nlohmann::json::object();
  if (const auto* h = std::get_if<HardRT>(&cls)) params["t"] = h->t;
  if (const auto* s = std::get_if<SoftRT>(&cls)) {
    params["t"] = s->t;
    params["sigma"] = s->sigma;
  }
  if (const auto* b = std::get_if<BestEffort>(&cls)) params["b"] = b->b;
  return {{"class", std::string(class_name(cls))},
          {"parameters", params},
          {"window_stats",
           {{"count", stats.count},
            {"max_abs", stats.max_abs},
            {"mean_abs", stats.mean_abs},
            {"std_abs", stats.std_abs},
            {"quantile_abs", stats.quantile_abs}}}};
}

inline int cmd_classify(const ClassifyArgs& args, std::ostream& out, std::ostream& err) {
  try {
    std::ifstream in(args.trace);
    if (!in) throw ConfigError("cannot open trace '" + args.trace + "'");
    const auto trace = read_trace_csv(in, args.node);
    const std::size_t window = args.window.value_or(trace.size());
    if (window == 0 || window > trace.size()) {
      throw InsufficientData("window " + std::to_string(window) + " exceeds trace length " +
                             std::to_string(trace.size()));
    }
    const auto cls = classify_trace(trace, args.candidate, window);
    const auto stats = window_stats(trace.tail(window));
    out << classification_json(cls, stats).dump() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

struct BatchArgs {
  std::string pattern;
  std::size_t reps = 1;
  std::optional<std::uint64_t> seed_base;
  std::size_t jobs = 1;
  std::string out = "batch";
};

inline std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<std::string> out;
  if (::glob(pattern.c_str(), 0, nullptr, &g) == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  ::globfree(&g);
  std::sort(out.begin(), out.end());
  return out;
}

inline int cmd_batch(const BatchArgs& args, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  const auto configs = expand_glob(args.pattern);
  if (configs.empty()) {
    err << "error: no config matches '" << args.pattern << "'\n";
    return kExitValidation;
  }
  if (args.reps == 0 || args.jobs == 0) {
    err << "error: --reps and --jobs must be >= 1\n";
    return kExitValidation;
  }

  struct Job {
    std::string config;
    std::string stem;
    std::uint64_t seed = 0;
    fs::path dir;
    int status = kExitOk;
    std::string message;
    std::optional<AntifragilityReport> report;
    double mean_cost = 0.0;
    std::size_t episodes = 0;
  };
  std::vector<Job> jobs;
  int load_status = kExitOk;
  for (const auto& path : configs) {
    const std::string stem = fs::path(path).stem().string();
    std::optional<Scenario> sc;
    try {
      sc = load_scenario(path);
    } catch (const ValidationError& e) {
      print_problems(err, e);
      load_status = kExitValidation;
    } catch (const Error& e) {
      err << "error: " << path << ": " << e.what() << "\n";
      load_status = kExitValidation;
    }
    for (std::size_t r = 0; r < args.reps; ++r) {
      Job j;
      j.config = path;
      j.stem = stem;
      j.seed = args.seed_base.value_or(sc ? sc->engine.seed : 0) + r;
      j.dir = fs::path(args.out) / stem / ("seed-" + std::to_string(j.seed));
      if (!sc) {
        j.status = kExitValidation;
        j.message = "invalid config";
      }
      jobs.push_back(std::move(j));
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      auto& j = jobs[i];
      if (j.status != kExitOk) continue;
      try {
        auto sc = load_scenario(j.config);
        sc.engine.seed = j.seed;
        const auto result = run_scenario(sc);
        write_run(j.dir, sc, result);
        j.report = result.report;
        j.episodes = result.episode_costs.size();
        for (double c : result.episode_costs) j.mean_cost += c;
        if (j.episodes > 0) j.mean_cost /= static_cast<double>(j.episodes);
      } catch (const ValidationError& e) {
        j.status = kExitValidation;
        j.message = e.what();
      } catch (const std::exception& e) {
        j.status = kExitRuntime;
        j.message = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(args.jobs, jobs.size());
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::string summary = "scenario,seed,status,verdict,slope,normalized_slope,episodes,mean_episode_cost\n";
  int status = load_status;
  for (const auto& j : jobs) {
    summary += csv_field(j.stem) + "," + std::to_string(j.seed) + ",";
    if (j.status != kExitOk) {
      summary += "failed,,,,,\n";
      if (!j.message.empty()) err << "error: " << j.config << " seed " << j.seed << ": " << j.message << "\n";
      status = std::max(status, j.status);
      continue;
    }
    summary += "ok,";
    if (j.report) {
      summary += std::string(to_string(j.report->verdict)) + "," + format_number(j.report->slope) + "," +
                 format_number(j.report->normalized_slope);
    } else {
      summary += ",,";
    }
    summary += "," + std::to_string(j.episodes) + "," + format_number(j.mean_cost) + "\n";
  }
  write_files_atomically(args.out, {{"summary.csv", summary}});
  out << "ran " << jobs.size() << " runs into " << args.out << "\n";
  return status;
}

}  // namespace fidelity::cli
