#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "termsum/config.hpp"
#include "termsum/termdp.hpp"

namespace termsum {

/// How to build the agent policy: a checkpointed Q-network, optionally
/// wrapped into the flawed composite (degenerate action in one lane).
struct AgentSpec {
    std::string checkpoint;
    int flaw_lane = -1;  // -1: no flaw
    std::string degenerate = "slower";

    template <class Binder>
    void bind(Binder& b) {
        b.field("checkpoint", checkpoint).field("flaw_lane", flaw_lane).field("degenerate", degenerate);
    }

    PolicyHandle build(const EnvConfig& env, const std::filesystem::path& base = {}) const {
        if (checkpoint.empty()) throw ConfigError("agent.checkpoint is required");
        std::filesystem::path p(checkpoint);
        if (p.is_relative() && !base.empty()) p = base / p;
        auto cp = load_checkpoint(p.string());
        if (cp.model.shape().inputs != env.feature_dim() || cp.model.shape().outputs != kNumActions)
            throw FormatError("checkpoint `" + p.string() + "` does not match the environment's feature size");
        auto q = std::make_shared<const QApprox>(std::move(cp.model));
        if (flaw_lane < 0) return PolicyHandle::greedy(std::move(q));
        if (flaw_lane >= env.lanes) throw ConfigError("agent.flaw_lane outside the road");
        return make_flawed_agent(std::move(q), action_from_name(degenerate), flaw_lane);
    }
};

/// A live-play setup: environment, termination parameters and policies.
struct Scenario {
    EnvConfig env;
    TermConfig term;
};

/// Reads env.*, term.* and agent.* keys; the human is the rule-based driver.
inline Scenario load_scenario(const std::filesystem::path& path) {
    auto cfg = KeyValueConfig::load(path.string());
    std::set<std::string> consumed;
    Scenario sc;
    sc.env = read_section<EnvConfig>(cfg, "env", &consumed);
    sc.term = read_section<TermConfig>(cfg, "term", &consumed);
    const auto agent = read_section<AgentSpec>(cfg, "agent", &consumed);
    reject_unknown_keys(cfg, consumed);
    sc.env.validate();
    sc.term.agent = agent.build(sc.env, path.parent_path());
    sc.term.human = PolicyHandle::human();
    sc.term.validate();
    return sc;
}

}  // namespace termsum
