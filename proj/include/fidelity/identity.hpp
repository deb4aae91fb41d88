#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "fidelity/errors.hpp"
#include "fidelity/reflection.hpp"

namespace fidelity {

struct HardRT {
  double t = 0.0;
};
struct SoftRT {
  double t = 0.0;
  double sigma = 0.0;
};
struct BestEffort {
  double b = 0.0;
};
struct NonRT {};

/// Identity classes, strongest first.
using IdentityClass = std::variant<HardRT, SoftRT, BestEffort, NonRT>;

inline std::string_view class_name(const IdentityClass& c) {
  static constexpr std::string_view names[] = {"HardRT", "SoftRT", "BestEffort", "NonRT"};
  return names[c.index()];
}

inline bool is_contract_free(const IdentityClass& c) { return std::holds_alternative<NonRT>(c); }

/// Primary threshold of a contract: t for the real-time classes, b for best effort.
inline double contract_threshold(const IdentityClass& c) {
  return std::visit(
      [](const auto& k) -> double {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, HardRT> || std::is_same_v<K, SoftRT>) return k.t;
        else if constexpr (std::is_same_v<K, BestEffort>) return k.b;
        else return 0.0;
      },
      c);
}

inline std::vector<std::string> contract_problems(const IdentityClass& c,
                                                  const std::string& where = "contract") {
  std::vector<std::string> out;
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, HardRT>) {
          if (!(k.t > 0.0)) out.push_back(where + ".t: must be > 0");
        } else if constexpr (std::is_same_v<K, SoftRT>) {
          if (!(k.t > 0.0)) out.push_back(where + ".t: must be > 0");
          if (!(k.sigma > 0.0)) out.push_back(where + ".sigma: must be > 0");
        } else if constexpr (std::is_same_v<K, BestEffort>) {
          if (!(k.b > 0.0)) out.push_back(where + ".b: must be > 0");
        }
      },
      c);
  return out;
}

/// Fraction of samples a best-effort window must keep within b.
inline constexpr double kBestEffortQuantile = 0.95;

/// Smallest count of in-bound samples that satisfies the best-effort quantile
/// for a window of n samples: ceil(0.95 n), computed in integers.
constexpr std::size_t best_effort_required(std::size_t n) noexcept { return (19 * n + 19) / 20; }

/// Statistics of |Δ| over one window. Standard deviation uses the 1/n normalisation.
struct WindowStats {
  std::size_t count = 0;
  double max_abs = 0.0;
  double mean_abs = 0.0;
  double std_abs = 0.0;
  /// |Δ| at the best-effort order statistic (sorted ascending, index ceil(0.95 n) - 1).
  double quantile_abs = 0.0;
};

inline WindowStats window_stats(std::span<const DeltaSample> window) {
  WindowStats s;
  s.count = window.size();
  if (window.empty()) return s;
  std::vector<double> mags;
  mags.reserve(window.size());
  double sum = 0.0;
  for (const auto& d : window) {
    const double m = std::abs(d.delta);
    mags.push_back(m);
    sum += m;
    s.max_abs = std::max(s.max_abs, m);
  }
  const double n = static_cast<double>(window.size());
  s.mean_abs = sum / n;
  double ss = 0.0;
  for (double m : mags) ss += (m - s.mean_abs) * (m - s.mean_abs);
  s.std_abs = std::sqrt(ss / n);
  const std::size_t k = best_effort_required(window.size()) - 1;
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k), mags.end());
  s.quantile_abs = mags[k];
  return s;
}

/// Which class predicates to try; each is tested only when its parameters are present.
struct ClassCandidate {
  std::optional<double> t;
  std::optional<double> sigma;
  std::optional<double> b;

  static ClassCandidate from_contract(const IdentityClass& c) {
    return std::visit(
        [](const auto& k) -> ClassCandidate {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, HardRT>) return {k.t, std::nullopt, std::nullopt};
          else if constexpr (std::is_same_v<K, SoftRT>) return {k.t, k.sigma, std::nullopt};
          else if constexpr (std::is_same_v<K, BestEffort>) return {std::nullopt, std::nullopt, k.b};
          else return {};
        },
        c);
  }
};

inline IdentityClass classify_stats(const WindowStats& s, const ClassCandidate& c) {
  if (c.t && s.max_abs <= *c.t) return HardRT{*c.t};
  if (c.t && c.sigma && s.mean_abs <= *c.t && s.std_abs <= *c.sigma) return SoftRT{*c.t, *c.sigma};
  if (c.b && s.quantile_abs <= *c.b) return BestEffort{*c.b};
  return NonRT{};
}

/// Strongest class the trailing `window` samples satisfy (HardRT > SoftRT > BestEffort > NonRT).
inline IdentityClass classify_trace(const DeltaTrace& trace, const ClassCandidate& candidate,
                                    std::size_t window) {
  if (trace.empty()) throw InsufficientData("classify_trace: empty trace");
  if (window == 0 || window > trace.size()) {
    throw InsufficientData("classify_trace: window " + std::to_string(window) +
                           " exceeds trace length " + std::to_string(trace.size()));
  }
  return classify_stats(window_stats(trace.tail(window)), candidate);
}

enum class ContractStatus { Holding, AtRisk, Violated };

inline std::string_view to_string(ContractStatus s) {
  switch (s) {
    case ContractStatus::Holding: return "holding";
    case ContractStatus::AtRisk: return "at_risk";
    case ContractStatus::Violated: return "violated";
  }
  return "?";
}

inline constexpr double kDefaultAtRiskRatio = 0.8;

struct ContractCheck {
  ContractStatus status = ContractStatus::Holding;
  /// Utilisation of the contract: 1 is the bound, > 1 is a breach.
  double ratio = 0.0;
  WindowStats stats;

  /// Contract threshold over observed utilisation; infinite for a silent window.
  double headroom() const {
    return ratio > 0.0 ? 1.0 / ratio : std::numeric_limits<double>::infinity();
  }
};

inline ContractCheck check_contract(std::span<const DeltaSample> window,
                                    const IdentityClass& contract,
                                    double at_risk_ratio = kDefaultAtRiskRatio) {
  if (is_contract_free(contract)) throw ContractFreeError("check_contract: NonRT has no contract");
  ContractCheck out;
  out.stats = window_stats(window);
  const auto& s = out.stats;
  bool violated = false;
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, HardRT>) {
          out.ratio = s.max_abs / k.t;
          violated = !(s.max_abs <= k.t);
        } else if constexpr (std::is_same_v<K, SoftRT>) {
          out.ratio = std::max(s.mean_abs / k.t, s.std_abs / k.sigma);
          violated = !(s.mean_abs <= k.t && s.std_abs <= k.sigma);
        } else if constexpr (std::is_same_v<K, BestEffort>) {
          out.ratio = s.quantile_abs / k.b;
          violated = !(s.quantile_abs <= k.b);
        }
      },
      contract);
  if (violated) out.status = ContractStatus::Violated;
  else if (out.ratio > at_risk_ratio) out.status = ContractStatus::AtRisk;
  return out;
}

struct IdentityFailureEvent {
  double time = 0.0;
  std::size_t figure = 0;
  IdentityClass previous = NonRT{};
  double max_abs = 0.0;
  double window_mean = 0.0;
  double window_std = 0.0;
  /// True when the CUSUM fired, false when the guard saw a direct violation.
  bool by_cusum = false;
};

/// CUSUM on |Δ|: S+ <- max(0, S+ + |Δ| - reference - slack), fires when S+ > threshold.
struct DetectorConfig {
  double reference = 0.0;
  double slack = 0.0;
  double threshold = 1.0;
  std::size_t guard_window = 10;
  double at_risk_ratio = kDefaultAtRiskRatio;

  std::vector<std::string> problems(const std::string& where = "detector") const {
    std::vector<std::string> out;
    if (!(reference >= 0.0)) out.push_back(where + ".reference: must be >= 0");
    if (!(slack >= 0.0)) out.push_back(where + ".slack: must be >= 0");
    if (!(threshold > 0.0)) out.push_back(where + ".threshold: must be > 0");
    if (guard_window == 0) out.push_back(where + ".guard_window: must be >= 1");
    if (!(at_risk_ratio > 0.0 && at_risk_ratio <= 1.0)) {
      out.push_back(where + ".at_risk_ratio: must be in (0, 1]");
    }
    return out;
  }
};

/// Streaming identity-failure detector for one figure under one contract.
///
/// Tracks a two-sided CUSUM on |Δ| around `reference`. Only the upper arm
/// raises failures; the lower arm measures sustained improvement and is
/// exposed for observers. After an event the detector latches and re-arms
/// once the guard window is back to Holding.
class FailureDetector {
 public:
  FailureDetector(IdentityClass contract, DetectorConfig config)
      : contract_(contract), config_(config) {
    if (is_contract_free(contract_)) {
      throw ContractFreeError("FailureDetector: NonRT has no contract to fail");
    }
  }

  std::optional<IdentityFailureEvent> observe(const DeltaSample& sample) {
    if (!window_.empty() && !(sample.time > window_.back().time)) {
      throw SequencingError("FailureDetector: out-of-order sample");
    }
    window_.push_back(sample);
    while (window_.size() > config_.guard_window) window_.pop_front();

    const std::vector<DeltaSample> view(window_.begin(), window_.end());
    last_check_ = check_contract(view, contract_, config_.at_risk_ratio);

    if (latched_) {
      if (last_check_.status == ContractStatus::Holding) {
        latched_ = false;
        upper_ = lower_ = 0.0;
      }
      return std::nullopt;
    }

    const double x = std::abs(sample.delta);
    upper_ = std::max(0.0, upper_ + x - config_.reference - config_.slack);
    lower_ = std::max(0.0, lower_ + config_.reference - x - config_.slack);

    const bool violated = last_check_.status == ContractStatus::Violated;
    const bool drifted = upper_ > config_.threshold;
    if (!violated && !drifted) return std::nullopt;

    IdentityFailureEvent ev;
    ev.time = sample.time;
    ev.figure = sample.figure;
    ev.previous = contract_;
    ev.max_abs = last_check_.stats.max_abs;
    ev.window_mean = last_check_.stats.mean_abs;
    ev.window_std = last_check_.stats.std_abs;
    ev.by_cusum = drifted && !violated;
    latched_ = true;
    upper_ = lower_ = 0.0;
    return ev;
  }

  double upper() const noexcept { return upper_; }
  double lower() const noexcept { return lower_; }
  bool latched() const noexcept { return latched_; }
  const ContractCheck& last_check() const noexcept { return last_check_; }

 private:
  IdentityClass contract_;
  DetectorConfig config_;
  std::deque<DeltaSample> window_;
  ContractCheck last_check_{};
  double upper_ = 0.0;
  double lower_ = 0.0;
  bool latched_ = false;
};

/// Runs a detector over a whole stream and returns the first event, if any.
inline std::optional<IdentityFailureEvent> detect_identity_failure(
    std::span<const DeltaSample> stream, const IdentityClass& contract,
    const DetectorConfig& config) {
  FailureDetector detector(contract, config);
  for (const auto& s : stream) {
    if (auto ev = detector.observe(s)) return ev;
  }
  return std::nullopt;
}

}  // namespace fidelity
