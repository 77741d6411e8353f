#pragma once

#include <memory>
#include <string>
#include <variant>

#include "termsum/highway.hpp"
#include "termsum/qnet.hpp"

namespace termsum {

/// Scripted driver standing in for the human operator. Rules, in order:
///  1. gap ahead < 2*speed: move to an adjacent lane whose ahead-gap is at
///     least 3*speed (right wins ties), otherwise slow down;
///  2. below max speed with gap ahead >= 4*speed: speed up;
///  3. otherwise idle.
inline Action human_policy(const EnvState& s, const EnvConfig& cfg) {
    constexpr long open_road = 1L << 40;
    const long speed = s.ego_speed;
    const long gap = gap_ahead(s, s.ego_lane, open_road);
    if (gap < 2 * speed) {
        const bool right_ok = s.ego_lane + 1 < cfg.lanes && gap_ahead(s, s.ego_lane + 1, open_road) >= 3 * speed;
        const bool left_ok = s.ego_lane > 0 && gap_ahead(s, s.ego_lane - 1, open_road) >= 3 * speed;
        if (right_ok) return Action::lane_right;
        if (left_ok) return Action::lane_left;
        return Action::slower;
    }
    if (s.ego_speed < cfg.max_speed && gap >= 4 * speed) return Action::faster;
    return Action::idle;
}

class PolicyHandle;

struct GreedyPolicy {
    std::shared_ptr<const QApprox> q;
};

/// Defers to `primary` except in `flaw_lane`, where it always emits
/// `degenerate_action`.
struct CompositePolicy {
    std::shared_ptr<const PolicyHandle> primary;
    Action degenerate_action = Action::slower;
    int flaw_lane = 0;
};

struct HumanRulePolicy {};

struct ConstantPolicy {
    Action action = Action::idle;
};

class PolicyHandle {
public:
    using Kind = std::variant<GreedyPolicy, CompositePolicy, HumanRulePolicy, ConstantPolicy>;

    PolicyHandle() : kind_(HumanRulePolicy{}) {}
    explicit PolicyHandle(Kind kind) : kind_(std::move(kind)) {}

    static PolicyHandle greedy(std::shared_ptr<const QApprox> q) {
        if (!q) throw ContractError("greedy policy needs a model");
        return PolicyHandle(GreedyPolicy{std::move(q)});
    }
    static PolicyHandle human() { return PolicyHandle(HumanRulePolicy{}); }
    static PolicyHandle constant(Action a) { return PolicyHandle(ConstantPolicy{a}); }

    Action act(const EnvState& s, const EnvConfig& cfg) const {
        return std::visit(
            [&](const auto& p) -> Action {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, GreedyPolicy>) {
                    return static_cast<Action>(p.q->greedy_action(featurize(s, cfg), kNumActions));
                } else if constexpr (std::is_same_v<T, CompositePolicy>) {
                    if (p.flaw_lane >= cfg.lanes) throw ContractError("flaw lane outside the road");
                    if (s.ego_lane == p.flaw_lane) return p.degenerate_action;
                    return p.primary->act(s, cfg);
                } else if constexpr (std::is_same_v<T, HumanRulePolicy>) {
                    return human_policy(s, cfg);
                } else {
                    return p.action;
                }
            },
            kind_);
    }

    const Kind& kind() const noexcept { return kind_; }

    /// Short provenance string stored in dataset headers.
    std::string describe() const {
        return std::visit(
            [](const auto& p) -> std::string {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, GreedyPolicy>) {
                    return "greedy(seed=" + std::to_string(p.q->seed()) + ")";
                } else if constexpr (std::is_same_v<T, CompositePolicy>) {
                    return "composite(" + p.primary->describe() + "," + std::string(action_name(p.degenerate_action)) +
                           ",lane=" + std::to_string(p.flaw_lane) + ")";
                } else if constexpr (std::is_same_v<T, HumanRulePolicy>) {
                    return "human_rules";
                } else {
                    return "constant(" + std::string(action_name(p.action)) + ")";
                }
            },
            kind_);
    }

    /// Lane where a composite policy misbehaves, if any.
    std::optional<int> flaw_lane() const {
        if (const auto* c = std::get_if<CompositePolicy>(&kind_)) return c->flaw_lane;
        return std::nullopt;
    }

private:
    Kind kind_;
};

/// Composite flawed agent: greedy on `primary` outside `flaw_lane`, a
/// single fixed acceleration or deceleration inside it.
inline PolicyHandle make_flawed_agent(std::shared_ptr<const QApprox> primary, Action degenerate_action,
                                      int flaw_lane) {
    if (degenerate_action != Action::faster && degenerate_action != Action::slower)
        throw ContractError("degenerate action must be FASTER or SLOWER");
    if (flaw_lane < 0) throw ContractError("flaw lane must be non-negative");
    auto base = std::make_shared<const PolicyHandle>(PolicyHandle::greedy(std::move(primary)));
    return PolicyHandle(CompositePolicy{std::move(base), degenerate_action, flaw_lane});
}

}  // namespace termsum
