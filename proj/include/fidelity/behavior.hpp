#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "fidelity/reflection.hpp"

namespace fidelity {

struct CorrectiveAction {
  double bias_adjustment = 0.0;
  double gain_multiplier = 1.0;
  std::optional<double> sampling_period;
  /// Set when a predictive behavior lacked history and acted reactively instead.
  bool fallback = false;

  bool is_zero() const {
    return bias_adjustment == 0.0 && gain_multiplier == 1.0 && !sampling_period;
  }
};

struct Passive {};

/// Replays a fixed action schedule, cycling, regardless of what it observes.
struct ActiveNonPurposeful {
  std::vector<CorrectiveAction> schedule;
};

/// Servo towards a fixed correction setpoint; never looks at Δ.
struct PurposefulNonTeleological {
  double setpoint = 0.0;
  double policy_gain = 1.0;
};

/// Proportional correction on the observed Δ.
struct Reactive {
  double gain = 1.0;
};

/// Least-squares extrapolation of the open-loop Δ one step ahead.
/// Order 1 regresses on time; each extra order adds one context figure.
struct PredictiveOrderK {
  int order = 1;
  std::size_t history = 3;
};

using BehaviorClass =
    std::variant<Passive, ActiveNonPurposeful, PurposefulNonTeleological, Reactive, PredictiveOrderK>;

inline constexpr std::size_t kBehaviorVariants = std::variant_size_v<BehaviorClass>;

inline std::string_view behavior_name(const BehaviorClass& b) {
  static constexpr std::string_view names[] = {"passive", "active", "purposeful", "reactive",
                                                "predictive"};
  return names[b.index()];
}

inline int behavior_order(const BehaviorClass& b) {
  if (const auto* p = std::get_if<PredictiveOrderK>(&b)) return p->order;
  return 0;
}

/// History the behavior needs to see; 1 for the memoryless classes.
inline std::size_t behavior_history(const BehaviorClass& b) {
  if (const auto* p = std::get_if<PredictiveOrderK>(&b)) return p->history;
  return 1;
}

inline std::vector<std::string> behavior_problems(const BehaviorClass& b,
                                                  std::size_t context_count,
                                                  const std::string& where = "behavior") {
  std::vector<std::string> out;
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Reactive>) {
          if (!(k.gain > 0.0 && k.gain <= 2.0)) out.push_back(where + ".gain: must be in (0, 2]");
        } else if constexpr (std::is_same_v<K, PredictiveOrderK>) {
          if (k.order < 1) out.push_back(where + ".order: must be >= 1");
          if (static_cast<std::size_t>(k.order) > context_count + 1) {
            out.push_back(where + ".order: exceeds tracked context variables (" +
                          std::to_string(context_count + 1) + ")");
          }
          if (k.history < static_cast<std::size_t>(k.order) + 1) {
            out.push_back(where + ".history: must be >= order + 1");
          }
        } else if constexpr (std::is_same_v<K, ActiveNonPurposeful>) {
          if (k.schedule.empty()) out.push_back(where + ".schedule: must not be empty");
          for (std::size_t i = 0; i < k.schedule.size(); ++i) {
            const auto& a = k.schedule[i];
            const auto w = where + ".schedule[" + std::to_string(i) + "]";
            if (!(a.gain_multiplier > 0.0)) out.push_back(w + ".gain: must be > 0");
            if (a.sampling_period && !(*a.sampling_period > 0.0)) {
              out.push_back(w + ".sampling_period: must be > 0");
            }
          }
        }
      },
      b);
  return out;
}

struct HistoryEntry {
  double time = 0.0;
  /// Open-loop Δ: the observed Δ with the node's own bias correction removed.
  double delta = 0.0;
  std::vector<double> context;
};

struct Observation {
  /// Closed-loop Δ seen this tick.
  DeltaSample latest;
  /// Contract utilisation, when the node has a contract.
  std::optional<double> goal;
  std::deque<HistoryEntry> history;
};

namespace detail {

/// Least-squares fit of y on [1, x1, ..., xp]; returns coefficients.
inline Eigen::VectorXd least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& y) {
  return design.colPivHouseholderQr().solve(y);
}

/// One-step-ahead open-loop Δ forecast from the trailing `m` history entries.
inline double extrapolate(const std::deque<HistoryEntry>& history, int order, std::size_t m) {
  const std::size_t n = std::min(m, history.size());
  const std::size_t first = history.size() - n;
  const double t_last = history.back().time;
  const double step = n >= 2 ? history.back().time - history[history.size() - 2].time : 1.0;
  const int contexts = order - 1;

  Eigen::MatrixXd design(static_cast<Eigen::Index>(n), order + 1);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& h = history[first + i];
    const auto r = static_cast<Eigen::Index>(i);
    design(r, 0) = 1.0;
    design(r, 1) = h.time - t_last;
    for (int c = 0; c < contexts; ++c) design(r, 2 + c) = h.context.at(static_cast<std::size_t>(c));
    y(r) = h.delta;
  }
  const Eigen::VectorXd beta = least_squares(design, y);

  Eigen::RowVectorXd next(order + 1);
  next(0) = 1.0;
  next(1) = step;
  if (contexts > 0) {
    // Context figures are themselves forecast by a straight line in time.
    Eigen::MatrixXd time_design = design.leftCols(2);
    for (int c = 0; c < contexts; ++c) {
      const Eigen::VectorXd trend = least_squares(time_design, design.col(2 + c));
      next(2 + c) = trend(0) + trend(1) * step;
    }
  }
  return next.dot(beta);
}

}  // namespace detail

/// A behavior instance: its class plus the state the class carries.
class Behavior {
 public:
  explicit Behavior(BehaviorClass spec = Passive{}) : spec_(std::move(spec)) {}

  const BehaviorClass& spec() const noexcept { return spec_; }

  CorrectiveAction act(const Observation& obs) {
    return std::visit([&](const auto& k) { return act_as(k, obs); }, spec_);
  }

 private:
  CorrectiveAction act_as(const Passive&, const Observation&) { return {}; }

  CorrectiveAction act_as(const ActiveNonPurposeful& k, const Observation&) {
    if (k.schedule.empty()) return {};
    const auto a = k.schedule[cursor_ % k.schedule.size()];
    ++cursor_;
    return a;
  }

  CorrectiveAction act_as(const PurposefulNonTeleological& k, const Observation&) {
    const double step = k.policy_gain * (k.setpoint - servo_position_);
    servo_position_ += step;
    return {step, 1.0, std::nullopt, false};
  }

  CorrectiveAction act_as(const Reactive& k, const Observation& obs) {
    return {-k.gain * obs.latest.delta, 1.0, std::nullopt, false};
  }

  CorrectiveAction act_as(const PredictiveOrderK& k, const Observation& obs) {
    const auto needed = static_cast<std::size_t>(k.order) + 1;
    if (obs.history.size() < needed) {
      return {-obs.latest.delta, 1.0, std::nullopt, true};
    }
    const double open_loop_next = detail::extrapolate(obs.history, k.order, k.history);
    // Residual expected next tick if the current correction stays in place.
    const double correction = obs.latest.delta - obs.history.back().delta;
    const double predicted = open_loop_next + correction;
    return {-predicted, 1.0, std::nullopt, false};
  }

  BehaviorClass spec_;
  std::size_t cursor_ = 0;
  double servo_position_ = 0.0;
};

}  // namespace fidelity
