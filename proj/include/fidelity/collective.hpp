#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "fidelity/errors.hpp"
#include "fidelity/format.hpp"
#include "fidelity/identity.hpp"

namespace fidelity {

/// Correction budget in fixed-point micro-units, so pool transfers conserve exactly.
struct Budget {
  std::int64_t micro = 0;

  static constexpr std::int64_t kScale = 1'000'000;

  static Budget from_units(double units) {
    return {static_cast<std::int64_t>(std::llround(units * static_cast<double>(kScale)))};
  }
  double units() const { return static_cast<double>(micro) / static_cast<double>(kScale); }

  friend constexpr Budget operator+(Budget a, Budget b) { return {a.micro + b.micro}; }
  friend constexpr Budget operator-(Budget a, Budget b) { return {a.micro - b.micro}; }
  constexpr Budget& operator+=(Budget o) {
    micro += o.micro;
    return *this;
  }
  constexpr Budget& operator-=(Budget o) {
    micro -= o.micro;
    return *this;
  }
  friend constexpr auto operator<=>(Budget, Budget) = default;
};

enum class SocialBehavior { Neutral, Individualistic, Cooperative };

inline constexpr std::size_t kSocialVariants = 3;

inline std::string_view to_string(SocialBehavior s) {
  switch (s) {
    case SocialBehavior::Neutral: return "neutral";
    case SocialBehavior::Individualistic: return "individualistic";
    case SocialBehavior::Cooperative: return "cooperative";
  }
  return "?";
}

struct Join {};
struct Leave {};
struct Grab {
  Budget amount;
};
struct Assist {
  std::size_t target = 0;
  Budget amount;
};

using SocialAction = std::variant<Join, Leave, Grab, Assist>;

inline std::string describe(const SocialAction& a) {
  struct V {
    std::string operator()(const Join&) const { return "join"; }
    std::string operator()(const Leave&) const { return "leave"; }
    std::string operator()(const Grab& g) const { return "grab(" + format_number(g.amount.units()) + ")"; }
    std::string operator()(const Assist& s) const {
      return "assist(" + std::to_string(s.target) + "," + format_number(s.amount.units()) + ")";
    }
  };
  return std::visit(V{}, a);
}

/// Shared per-tick correction budget. Members hold non-negative allocations;
/// allocations plus the unallocated reserve always equal the total.
class ResourcePool {
 public:
  ResourcePool() = default;
  explicit ResourcePool(Budget total) : total_(total), reserve_(total) {}

  Budget total() const noexcept { return total_; }
  Budget reserve() const noexcept { return reserve_; }
  bool is_member(std::size_t node) const { return allocations_.contains(node); }
  std::size_t member_count() const noexcept { return allocations_.size(); }
  const std::map<std::size_t, Budget>& allocations() const noexcept { return allocations_; }

  Budget allocation(std::size_t node) const {
    auto it = allocations_.find(node);
    return it == allocations_.end() ? Budget{} : it->second;
  }

  /// Largest amount `node` could grab: the reserve plus every other member's allocation.
  Budget grabbable(std::size_t node) const {
    Budget out = reserve_;
    for (const auto& [id, a] : allocations_) {
      if (id != node) out += a;
    }
    return out;
  }

  /// Share a joining node receives: an equal split of the total, capped by the reserve.
  Budget join_share() const {
    const auto members = static_cast<std::int64_t>(allocations_.size()) + 1;
    return std::min(reserve_, Budget{total_.micro / members});
  }

  /// Checks allocation-sum and sign invariants.
  bool conserved() const {
    if (reserve_.micro < 0) return false;
    Budget sum = reserve_;
    for (const auto& [id, a] : allocations_) {
      if (a.micro < 0) return false;
      sum += a;
    }
    return sum == total_;
  }

  friend bool operator==(const ResourcePool&, const ResourcePool&) = default;

 private:
  friend ResourcePool apply_social_action(const ResourcePool&, std::size_t, const SocialAction&);

  Budget total_{};
  Budget reserve_{};
  std::map<std::size_t, Budget> allocations_;
};

namespace detail {
__extension__ using wide_int = __int128;
}  // namespace detail

/// Splits `amount` across `weights` proportionally, in integer micro-units.
/// Remainders go to the largest fractional parts, lowest index first.
inline std::vector<std::int64_t> proportional_split(std::int64_t amount,
                                                    std::span<const std::int64_t> weights) {
  std::vector<std::int64_t> out(weights.size(), 0);
  const std::int64_t total = std::accumulate(weights.begin(), weights.end(), std::int64_t{0});
  if (total <= 0 || amount <= 0) return out;
  std::vector<std::pair<detail::wide_int, std::size_t>> rema;
  std::int64_t given = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const detail::wide_int num = static_cast<detail::wide_int>(amount) * weights[i];
    out[i] = static_cast<std::int64_t>(num / total);
    rema.emplace_back(num % total, i);
    given += out[i];
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; given < amount; ++j, ++given) ++out[rema[j % rema.size()].second];
  return out;
}

/// Applies one social action. Throws RejectedAction (or MembershipError) and
/// leaves `pool` untouched when the action is infeasible.
inline ResourcePool apply_social_action(const ResourcePool& pool, std::size_t actor,
                                        const SocialAction& action) {
  ResourcePool next = pool;
  struct V {
    ResourcePool& p;
    std::size_t actor;

    void operator()(const Join&) {
      if (p.is_member(actor)) throw MembershipError("join: node already a member");
      const Budget share = p.join_share();
      p.reserve_ -= share;
      p.allocations_[actor] = share;
    }
    void operator()(const Leave&) {
      auto it = p.allocations_.find(actor);
      if (it == p.allocations_.end()) throw MembershipError("leave: node is not a member");
      p.reserve_ += it->second;
      p.allocations_.erase(it);
    }
    void operator()(const Grab& g) {
      if (!p.is_member(actor)) throw MembershipError("grab: node is not a member");
      if (g.amount.micro <= 0) throw RejectedAction("grab: amount must be > 0");
      if (g.amount > p.grabbable(actor)) throw RejectedAction("grab: amount exceeds pool slack");
      const Budget from_reserve = std::min(g.amount, p.reserve_);
      p.reserve_ -= from_reserve;
      const Budget rest = g.amount - from_reserve;
      if (rest.micro > 0) {
        std::vector<std::size_t> ids;
        std::vector<std::int64_t> slack;
        for (const auto& [id, a] : p.allocations_) {
          if (id == actor) continue;
          ids.push_back(id);
          slack.push_back(a.micro);
        }
        const auto cut = proportional_split(rest.micro, slack);
        for (std::size_t i = 0; i < ids.size(); ++i) p.allocations_[ids[i]] -= Budget{cut[i]};
      }
      p.allocations_[actor] += g.amount;
    }
    void operator()(const Assist& s) {
      if (s.target == actor) throw RejectedAction("assist: target must differ from actor");
      if (!p.is_member(actor)) throw MembershipError("assist: actor is not a member");
      if (!p.is_member(s.target)) throw MembershipError("assist: target is not a member");
      if (s.amount.micro <= 0) throw RejectedAction("assist: amount must be > 0");
      if (s.amount > p.allocations_[actor]) throw RejectedAction("assist: amount exceeds allocation");
      p.allocations_[actor] -= s.amount;
      p.allocations_[s.target] += s.amount;
    }
  };
  std::visit(V{next, actor}, action);
  return next;
}

/// What a node knows about itself or a neighbor when deciding socially.
struct SocialView {
  std::size_t node = 0;
  bool member = false;
  ContractStatus status = ContractStatus::Holding;
  /// Contract threshold over observed utilisation (1 = at the bound).
  double headroom = std::numeric_limits<double>::infinity();
  /// Consecutive Holding ticks so far.
  std::size_t holding_streak = 0;
};

struct SocialConfig {
  Budget assist_quantum = Budget::from_units(0.5);
  /// Priority multiplier for neighbors this node owes assistance to.
  double reciprocation_weight = 2.0;
  /// Consecutive Holding ticks after which a neutral node leaves.
  std::size_t calm_window = 50;
  /// Own headroom a cooperative node needs before assisting.
  double assist_headroom = 2.0;
};

/// Assistance received and not yet returned: debts[{debtor, creditor}].
using AssistLedger = std::map<std::pair<std::size_t, std::size_t>, Budget>;

inline bool in_danger(ContractStatus s) { return s != ContractStatus::Holding; }

inline std::optional<SocialAction> decide_social_action(const SocialView& self,
                                                        std::span<const SocialView> neighborhood,
                                                        SocialBehavior behavior,
                                                        const ResourcePool& pool,
                                                        const AssistLedger& ledger,
                                                        const SocialConfig& config) {
  if (self.member != pool.is_member(self.node)) {
    throw MembershipError("decide_social_action: view and pool disagree on membership");
  }
  switch (behavior) {
    case SocialBehavior::Neutral:
      if (!self.member && in_danger(self.status)) return Join{};
      if (self.member && self.status == ContractStatus::Holding &&
          self.holding_streak >= config.calm_window) {
        return Leave{};
      }
      return std::nullopt;

    case SocialBehavior::Individualistic: {
      if (!in_danger(self.status)) return std::nullopt;
      if (!self.member) return Join{};
      const Budget free = pool.grabbable(self.node);
      if (free.micro > 0) return Grab{free};
      return std::nullopt;
    }

    case SocialBehavior::Cooperative: {
      if (!self.member) return Join{};
      const Budget own = pool.allocation(self.node);
      if (own.micro <= 0 || !(self.headroom > config.assist_headroom)) return std::nullopt;
      const SocialView* best = nullptr;
      double best_priority = -1.0;
      for (const auto& n : neighborhood) {
        if (n.node == self.node || !n.member || !in_danger(n.status)) continue;
        double priority = n.headroom > 0.0 ? 1.0 / n.headroom
                                           : std::numeric_limits<double>::infinity();
        auto debt = ledger.find({self.node, n.node});
        if (debt != ledger.end() && debt->second.micro > 0) priority *= config.reciprocation_weight;
        if (priority > best_priority) {
          best_priority = priority;
          best = &n;
        }
      }
      if (!best) return std::nullopt;
      return Assist{best->node, std::min(own, config.assist_quantum)};
    }
  }
  return std::nullopt;
}

/// Records an executed assist: the target now owes the actor, and any debt the
/// actor held towards the target is paid down first.
inline void record_assist(AssistLedger& ledger, std::size_t actor, const Assist& a) {
  Budget amount = a.amount;
  auto owed = ledger.find({actor, a.target});
  if (owed != ledger.end()) {
    const Budget repay = std::min(owed->second, amount);
    owed->second -= repay;
    amount -= repay;
    if (owed->second.micro == 0) ledger.erase(owed);
  }
  if (amount.micro > 0) ledger[{a.target, actor}] += amount;
}

/// Normalised Shannon entropy of (behavior variant, social variant) pairs.
/// `variant_space` is the number of declared combinations; 1 or fewer yields 0.
inline double diversity_score(std::span<const std::pair<int, int>> population,
                              std::size_t variant_space) {
  if (population.empty()) throw InsufficientData("diversity_score: empty population");
  std::map<std::pair<int, int>, std::size_t> counts;
  for (const auto& p : population) ++counts[p];
  if (counts.size() > variant_space) {
    throw ConfigError("diversity_score: population uses more variants than declared");
  }
  if (variant_space <= 1) return 0.0;
  const double n = static_cast<double>(population.size());
  double h = 0.0;
  for (const auto& [k, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return std::clamp(h / std::log(static_cast<double>(variant_space)), 0.0, 1.0);
}

}  // namespace fidelity
