#pragma once

#include <json.hpp>

#include "termsum/highway.hpp"

namespace termsum {

using Json = nlohmann::json;

inline void to_json(Json& j, const EnvConfig& c) {
    j = Json{{"lanes", c.lanes},
             {"max_speed", c.max_speed},
             {"min_speed", c.min_speed},
             {"episode_len", c.episode_len},
             {"spawn_density", c.spawn_density},
             {"view_window", c.view_window},
             {"reward_speed_weight", c.reward_speed_weight},
             {"reward_collision_weight", c.reward_collision_weight},
             {"reward_right_lane_weight", c.reward_right_lane_weight},
             {"seed", c.seed}};
}

inline void from_json(const Json& j, EnvConfig& c) {
    j.at("lanes").get_to(c.lanes);
    j.at("max_speed").get_to(c.max_speed);
    j.at("min_speed").get_to(c.min_speed);
    j.at("episode_len").get_to(c.episode_len);
    j.at("spawn_density").get_to(c.spawn_density);
    j.at("view_window").get_to(c.view_window);
    j.at("reward_speed_weight").get_to(c.reward_speed_weight);
    j.at("reward_collision_weight").get_to(c.reward_collision_weight);
    j.at("reward_right_lane_weight").get_to(c.reward_right_lane_weight);
    j.at("seed").get_to(c.seed);
}

inline void to_json(Json& j, const Vehicle& v) { j = Json::array({v.lane, v.pos, v.speed}); }

inline void from_json(const Json& j, Vehicle& v) {
    v.lane = j.at(0).get<int>();
    v.pos = j.at(1).get<long>();
    v.speed = j.at(2).get<int>();
}

inline void to_json(Json& j, const EnvState& s) {
    j = Json{{"lane", s.ego_lane},   {"pos", s.ego_pos},         {"speed", s.ego_speed},
             {"others", s.others},   {"step", s.step_index},     {"done", s.done},
             {"crashed", s.crashed}, {"rng", s.rng.state()},     {"spawn_edge", s.spawn_edge}};
}

inline void from_json(const Json& j, EnvState& s) {
    j.at("lane").get_to(s.ego_lane);
    j.at("pos").get_to(s.ego_pos);
    j.at("speed").get_to(s.ego_speed);
    j.at("others").get_to(s.others);
    j.at("step").get_to(s.step_index);
    j.at("done").get_to(s.done);
    j.at("crashed").get_to(s.crashed);
    s.rng = SplitMix64(j.at("rng").get<std::uint64_t>());
    j.at("spawn_edge").get_to(s.spawn_edge);
}

/// Compact single-line dump used by every line-oriented artifact.
inline std::string dump_line(const Json& j) { return j.dump(-1, ' ', false, Json::error_handler_t::strict); }

}  // namespace termsum
