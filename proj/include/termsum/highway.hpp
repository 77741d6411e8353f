#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "termsum/config.hpp"
#include "termsum/error.hpp"
#include "termsum/rng.hpp"

namespace termsum {

enum class Action : int { idle = 0, lane_left = 1, lane_right = 2, faster = 3, slower = 4 };

inline constexpr int kNumActions = 5;

inline constexpr std::array<Action, kNumActions> kAllActions{Action::idle, Action::lane_left, Action::lane_right,
                                                            Action::faster, Action::slower};

constexpr int action_code(Action a) noexcept { return static_cast<int>(a); }

inline Action action_from_code(int code) {
    if (code < 0 || code >= kNumActions) throw FormatError("action code out of range: " + std::to_string(code));
    return static_cast<Action>(code);
}

constexpr std::string_view action_name(Action a) noexcept {
    switch (a) {
        case Action::idle: return "IDLE";
        case Action::lane_left: return "LANE_LEFT";
        case Action::lane_right: return "LANE_RIGHT";
        case Action::faster: return "FASTER";
        case Action::slower: return "SLOWER";
    }
    return "?";
}

/// Case-insensitive.
inline Action action_from_name(std::string_view name) {
    std::string upper(name);
    for (char& ch : upper) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    for (const Action a : kAllActions)
        if (action_name(a) == upper) return a;
    throw ConfigError("unknown action `" + std::string(name) + "`");
}

/// Discrete highway parameters. Lane 0 is the leftmost lane.
struct EnvConfig {
    int lanes = 4;
    int max_speed = 5;
    int min_speed = 1;
    int episode_len = 40;
    double spawn_density = 0.3;
    int view_window = 30;
    double reward_speed_weight = 0.4;
    double reward_collision_weight = 1.0;
    double reward_right_lane_weight = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (lanes < 2) throw ConfigError("env.lanes must be >= 2");
        if (min_speed < 1 || min_speed > max_speed) throw ConfigError("env speeds need 1 <= min_speed <= max_speed");
        if (episode_len < 1) throw ConfigError("env.episode_len must be >= 1");
        if (!(spawn_density >= 0.0 && spawn_density <= 1.0)) throw ConfigError("env.spawn_density must lie in [0, 1]");
        if (view_window < 1) throw ConfigError("env.view_window must be >= 1");
    }

    template <class Binder>
    void bind(Binder& b) {
        b.field("lanes", lanes)
            .field("max_speed", max_speed)
            .field("min_speed", min_speed)
            .field("episode_len", episode_len)
            .field("spawn_density", spawn_density)
            .field("view_window", view_window)
            .field("reward_speed_weight", reward_speed_weight)
            .field("reward_collision_weight", reward_collision_weight)
            .field("reward_right_lane_weight", reward_right_lane_weight)
            .field("seed", seed);
    }

    double min_reward() const noexcept { return -reward_collision_weight; }
    double max_reward() const noexcept { return reward_speed_weight + reward_right_lane_weight; }

    int feature_dim() const noexcept { return lanes + 1 + 2 * lanes; }

    friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

struct Vehicle {
    int lane = 0;
    long pos = 0;
    int speed = 0;
    friend bool operator==(const Vehicle&, const Vehicle&) = default;
};

struct EnvState {
    int ego_lane = 0;
    long ego_pos = 0;
    int ego_speed = 0;
    std::vector<Vehicle> others;
    int step_index = 0;
    bool done = false;
    bool crashed = false;
    // Spawn stream position and the furthest slot position already drawn.
    SplitMix64 rng;
    long spawn_edge = 0;

    friend bool operator==(const EnvState&, const EnvState&) = default;
};

using FeatureVector = std::vector<double>;

struct StepOutcome {
    EnvState state;
    double reward = 0.0;
};

/// Spacing of the fixed candidate spawn slots along the road.
inline constexpr long kSpawnSlotSpacing = 6;

namespace detail {
inline std::atomic<std::uint64_t> highway_step_calls{0};

inline int draw_speed(const EnvConfig& cfg, SplitMix64& rng) {
    return rng.between(cfg.min_speed, std::max(cfg.min_speed, cfg.max_speed - 1));
}

inline bool occupied(const std::vector<Vehicle>& others, int lane, long pos) {
    return std::any_of(others.begin(), others.end(), [&](const Vehicle& v) { return v.lane == lane && v.pos == pos; });
}

inline void spawn_slots(const EnvConfig& cfg, EnvState& s, long from_exclusive, long to_inclusive) {
    const long first = (from_exclusive / kSpawnSlotSpacing + 1) * kSpawnSlotSpacing;
    for (long p = first; p <= to_inclusive; p += kSpawnSlotSpacing) {
        for (int lane = 0; lane < cfg.lanes; ++lane) {
            if (!s.rng.bernoulli(cfg.spawn_density)) continue;
            const int speed = draw_speed(cfg, s.rng);
            if (occupied(s.others, lane, p) || (lane == s.ego_lane && p == s.ego_pos)) continue;
            s.others.push_back({lane, p, speed});
        }
    }
}
}  // namespace detail

/// Number of `step` calls made process-wide; used to check that offline
/// training never touches the simulator.
inline std::uint64_t step_call_count() noexcept { return detail::highway_step_calls.load(); }

/// Start an episode. Ego sits in lane `lanes-2`, cell 0, at `min_speed+1`
/// (capped at max_speed); traffic is drawn at the fixed slots ahead.
inline EnvState reset(const EnvConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    EnvState s;
    s.ego_lane = cfg.lanes - 2;
    s.ego_pos = 0;
    s.ego_speed = std::min(cfg.min_speed + 1, cfg.max_speed);
    s.rng = make_stream(seed, "spawn");
    for (long p = kSpawnSlotSpacing; p <= cfg.view_window; p += kSpawnSlotSpacing) {
        for (int lane = 0; lane < cfg.lanes; ++lane) {
            if (!s.rng.bernoulli(cfg.spawn_density)) continue;
            s.others.push_back({lane, p, detail::draw_speed(cfg, s.rng)});
        }
    }
    s.spawn_edge = cfg.view_window;
    return s;
}

/// Relative-motion collision test in the ego's lane after the action is
/// applied: touching the same cell at the end of the step, starting in the
/// same cell, or the ordering of the two vehicles flipping during the step
/// all count. Independent of the order of `others`.
inline bool detect_crash(const EnvState& before_move, long ego_after, const std::vector<Vehicle>& others_after) {
    for (std::size_t i = 0; i < others_after.size(); ++i) {
        const Vehicle& o = others_after[i];
        if (o.lane != before_move.ego_lane) continue;
        const long rel_before = before_move.others[i].pos - before_move.ego_pos;
        const long rel_after = o.pos - ego_after;
        if (rel_after == 0 || rel_before == 0) return true;
        if ((rel_before > 0) != (rel_after > 0)) return true;
    }
    return false;
}

inline double step_reward(const EnvConfig& cfg, int lane, int speed, bool crashed) {
    const double speed_term = cfg.max_speed == cfg.min_speed
                                  ? 0.0
                                  : static_cast<double>(speed - cfg.min_speed) / (cfg.max_speed - cfg.min_speed);
    const double lane_term = static_cast<double>(lane) / (cfg.lanes - 1);
    return cfg.reward_speed_weight * speed_term + cfg.reward_right_lane_weight * lane_term -
           (crashed ? cfg.reward_collision_weight : 0.0);
}

/// Advance one step: action, motion, collision, despawn/spawn, reward.
inline StepOutcome step(const EnvConfig& cfg, const EnvState& state, Action action) {
    if (state.done) throw ContractError("step called on a finished episode");
    detail::highway_step_calls.fetch_add(1, std::memory_order_relaxed);

    EnvState s = state;
    switch (action) {
        case Action::lane_left: s.ego_lane = std::max(0, s.ego_lane - 1); break;
        case Action::lane_right: s.ego_lane = std::min(cfg.lanes - 1, s.ego_lane + 1); break;
        case Action::faster: s.ego_speed = std::min(cfg.max_speed, s.ego_speed + 1); break;
        case Action::slower: s.ego_speed = std::max(cfg.min_speed, s.ego_speed - 1); break;
        case Action::idle: break;
    }

    const EnvState before_move = s;
    s.ego_pos += s.ego_speed;
    for (auto& o : s.others) o.pos += o.speed;

    s.crashed = detect_crash(before_move, s.ego_pos, s.others);

    // Constant-speed traffic never steers; a car that runs onto another
    // one in its lane leaves the road.
    std::vector<Vehicle> kept;
    kept.reserve(s.others.size());
    for (std::size_t i = 0; i < s.others.size(); ++i) {
        const Vehicle& o = s.others[i];
        bool overtaking = false;
        for (std::size_t j = 0; j < s.others.size() && !overtaking; ++j)
            overtaking = j != i && s.others[j].lane == o.lane && s.others[j].pos == o.pos && o.speed > s.others[j].speed;
        const long rel = o.pos - s.ego_pos;
        if (!overtaking && rel <= cfg.view_window && rel >= -cfg.view_window) kept.push_back(o);
    }
    s.others = std::move(kept);

    const long edge = s.ego_pos + cfg.view_window;
    if (edge > s.spawn_edge) {
        detail::spawn_slots(cfg, s, s.spawn_edge, edge);
        s.spawn_edge = edge;
    }

    const double reward = step_reward(cfg, s.ego_lane, s.ego_speed, s.crashed);
    s.step_index += 1;
    s.done = s.crashed || s.step_index >= cfg.episode_len;
    return {std::move(s), reward};
}

/// Nearest vehicle in `lane` at or ahead of the ego (strictly ahead in the
/// ego's own lane).
inline std::optional<Vehicle> nearest_ahead(const EnvState& s, int lane) {
    std::optional<Vehicle> best;
    for (const auto& o : s.others) {
        if (o.lane != lane) continue;
        const long gap = o.pos - s.ego_pos;
        if (gap < 0 || (gap == 0 && lane == s.ego_lane)) continue;
        if (!best || o.pos < best->pos) best = o;
    }
    return best;
}

/// Cells to the nearest vehicle ahead in `lane`, or `fallback` if none.
inline long gap_ahead(const EnvState& s, int lane, long fallback) {
    const auto v = nearest_ahead(s, lane);
    return v ? v->pos - s.ego_pos : fallback;
}

/// Dense encoding: lane one-hot, normalized ego speed, then per lane the
/// clipped gap to the nearest car ahead (in view windows) and its relative
/// speed (in speed ranges).
inline FeatureVector featurize(const EnvState& s, const EnvConfig& cfg) {
    FeatureVector f(static_cast<std::size_t>(cfg.feature_dim()), 0.0);
    f[static_cast<std::size_t>(s.ego_lane)] = 1.0;
    const double speed_range = std::max(1, cfg.max_speed - cfg.min_speed);
    f[static_cast<std::size_t>(cfg.lanes)] = (s.ego_speed - cfg.min_speed) / speed_range;
    for (int lane = 0; lane < cfg.lanes; ++lane) {
        const auto idx = static_cast<std::size_t>(cfg.lanes + 1 + 2 * lane);
        const auto v = nearest_ahead(s, lane);
        if (!v) {
            f[idx] = 1.0;
            f[idx + 1] = 0.0;
            continue;
        }
        f[idx] = std::clamp(static_cast<double>(v->pos - s.ego_pos) / cfg.view_window, 0.0, 1.0);
        f[idx + 1] = std::clamp((v->speed - s.ego_speed) / speed_range, -1.0, 1.0);
    }
    return f;
}

/// Environment adapter used by the generic takeover runner.
struct HighwayEnv {
    using State = EnvState;
    EnvConfig config;

    State reset(std::uint64_t seed) const { return termsum::reset(config, seed); }
    StepOutcome step(const State& s, Action a) const { return termsum::step(config, s, a); }
    static bool done(const State& s) noexcept { return s.done; }
};

}  // namespace termsum
