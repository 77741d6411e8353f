#pragma once

#include <string>
#include <vector>

#include "termsum/termdp.hpp"

namespace termsum {

/// One rendered step: the state before the action, the action taken and the
/// reward it earned. The last frame of a stream has action -1.
struct FrameRecord {
    int t = 0;
    Controller controller = Controller::agent;
    int lane = 0;
    long pos = 0;
    int speed = 0;
    std::vector<Vehicle> others;
    int action = -1;
    double reward = 0.0;
    bool event = false;
    friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

inline FrameRecord make_frame(const EnvState& s, Controller who, int action, double reward, bool event) {
    return FrameRecord{s.step_index, who, s.ego_lane, s.ego_pos, s.ego_speed, s.others, action, reward, event};
}

inline void to_json(Json& j, const FrameRecord& f) {
    j = Json{{"t", f.t},         {"controller", controller_name(f.controller)},
             {"lane", f.lane},   {"pos", f.pos},
             {"speed", f.speed}, {"others", f.others},
             {"action", f.action}, {"reward", f.reward},
             {"event", f.event}};
}

inline void from_json(const Json& j, FrameRecord& f) {
    j.at("t").get_to(f.t);
    f.controller = parse_controller(j.at("controller").get<std::string>());
    j.at("lane").get_to(f.lane);
    j.at("pos").get_to(f.pos);
    j.at("speed").get_to(f.speed);
    j.at("others").get_to(f.others);
    j.at("action").get_to(f.action);
    j.at("reward").get_to(f.reward);
    j.at("event").get_to(f.event);
}

inline std::vector<FrameRecord> frames_of(const Trajectory& traj) {
    std::vector<FrameRecord> out;
    for (const auto& st : traj.steps)
        out.push_back(make_frame(st.state, Controller::agent, action_code(st.action), st.reward, false));
    out.push_back(make_frame(traj.final_state, Controller::agent, -1, 0.0, false));
    return out;
}

inline std::vector<FrameRecord> frames_of(const TakeoverTrace& tr) {
    std::vector<FrameRecord> out;
    for (const auto& st : tr.steps) out.push_back(make_frame(st.state, st.controller, st.action, st.reward, st.event));
    const Controller last = tr.steps.empty() ? Controller::agent : tr.steps.back().controller;
    out.push_back(make_frame(tr.final_state, last, -1, 0.0, false));
    return out;
}

/// Gap to the nearest car ahead in the ego lane as seen in a frame, and that
/// car's speed; gap is -1 when the lane ahead is empty.
inline std::pair<long, int> frame_gap_ahead(const FrameRecord& f) {
    long best = -1;
    int speed = 0;
    for (const auto& o : f.others) {
        if (o.lane != f.lane || o.pos <= f.pos) continue;
        if (best < 0 || o.pos - f.pos < best) {
            best = o.pos - f.pos;
            speed = o.speed;
        }
    }
    return {best, speed};
}

inline constexpr int kFramesVersion = 1;

inline std::string serialize_frames(const std::vector<FrameRecord>& frames, const Json& meta = Json::object()) {
    std::string payload = dump_line(Json{{"format", "termsum-frames"}, {"version", kFramesVersion}, {"meta", meta}}) + "\n";
    for (const auto& f : frames) payload += dump_line(Json(f)) + "\n";
    return seal_lines(payload, frames.size() + 1);
}

struct FrameStream {
    Json meta;
    std::vector<FrameRecord> frames;
};

inline FrameStream parse_frames(const std::string& text) {
    const auto lines = unseal_lines(text, "frame stream", kFramesVersion);
    try {
        FrameStream out;
        const Json header = Json::parse(lines.front());
        if (header.at("format") != "termsum-frames") throw FormatError("not a frame stream");
        out.meta = header.at("meta");
        for (std::size_t i = 1; i < lines.size(); ++i) out.frames.push_back(Json::parse(lines[i]).get<FrameRecord>());
        return out;
    } catch (const Json::exception& e) {
        throw FormatError(std::string("malformed frame stream: ") + e.what());
    }
}

}  // namespace termsum
