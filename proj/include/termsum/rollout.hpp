#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "termsum/error.hpp"
#include "termsum/json_io.hpp"
#include "termsum/parallel.hpp"
#include "termsum/policy.hpp"
#include "termsum/qlearn.hpp"

namespace termsum {

struct TrajectoryStep {
    EnvState state;
    FeatureVector features;
    Action action = Action::idle;
    double reward = 0.0;
    FeatureVector next_features;
    bool done = false;
    friend bool operator==(const TrajectoryStep&, const TrajectoryStep&) = default;
};

/// One episode. `final_state` is the state reached after the last step.
struct Trajectory {
    int id = 0;
    std::uint64_t env_seed = 0;
    std::vector<TrajectoryStep> steps;
    EnvState final_state;
    friend bool operator==(const Trajectory&, const Trajectory&) = default;

    std::size_t size() const noexcept { return steps.size(); }
};

struct Dataset {
    EnvConfig env;
    std::string policy;
    std::vector<Trajectory> trajectories;  // sorted by id
    std::vector<int> train_ids;
    std::vector<int> heldout_ids;
    std::uint64_t seed = 0;
    std::string manifest;
    friend bool operator==(const Dataset&, const Dataset&) = default;

    const Trajectory& trajectory(int id) const {
        auto it = std::lower_bound(trajectories.begin(), trajectories.end(), id,
                                   [](const Trajectory& t, int v) { return t.id < v; });
        if (it == trajectories.end() || it->id != id) throw ContractError("unknown trajectory id " + std::to_string(id));
        return *it;
    }
};

/// Run `policy` greedily for one episode.
inline Trajectory run_episode(const PolicyHandle& policy, const EnvConfig& env, std::uint64_t env_seed, int id) {
    Trajectory traj;
    traj.id = id;
    traj.env_seed = env_seed;
    EnvState s = reset(env, env_seed);
    FeatureVector f = featurize(s, env);
    while (!s.done) {
        const Action a = policy.act(s, env);
        auto out = step(env, s, a);
        FeatureVector nf = featurize(out.state, env);
        traj.steps.push_back({std::move(s), std::move(f), a, out.reward, nf, out.state.done});
        s = std::move(out.state);
        f = std::move(nf);
    }
    traj.final_state = std::move(s);
    return traj;
}

/// Collect `n_episodes` trajectories, episode i seeded from (seed, i).
inline std::vector<Trajectory> collect(const PolicyHandle& policy, const EnvConfig& env, int n_episodes,
                                       std::uint64_t seed, int jobs = 1) {
    env.validate();
    if (n_episodes < 1) throw ContractError("collect needs at least one episode");
    std::vector<Trajectory> out(static_cast<std::size_t>(n_episodes));
    parallel_for(out.size(), jobs, [&](std::size_t i) {
        out[i] = run_episode(policy, env, derive_seed(seed, "episode", i), static_cast<int>(i));
    });
    return out;
}

/// Held-out count for n trajectories: floor(n * fraction), kept in [1, n-1].
inline std::size_t heldout_count(std::size_t n, double fraction) {
    const auto raw = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 1e-9));
    return std::clamp<std::size_t>(raw, 1, n - 1);
}

/// Uniform random partition into train ids D and held-out ids D~.
inline Dataset split(std::vector<Trajectory> trajs, double heldout_fraction, std::uint64_t seed) {
    if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) throw ContractError("held-out fraction must lie in (0, 1)");
    if (trajs.size() < 2) throw ContractError("split needs at least two trajectories");
    std::sort(trajs.begin(), trajs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < trajs.size(); ++i)
        if (trajs[i].id == trajs[i - 1].id) throw ContractError("duplicate trajectory id");
    for (const auto& t : trajs)
        if (t.steps.empty()) throw ContractError("empty trajectory");

    std::vector<int> ids;
    for (const auto& t : trajs) ids.push_back(t.id);
    auto rng = make_stream(seed, "split");
    for (std::size_t i = ids.size() - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(i + 1)]);

    const std::size_t h = heldout_count(ids.size(), heldout_fraction);
    Dataset ds;
    ds.heldout_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(h));
    ds.train_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(h), ids.end());
    std::sort(ds.heldout_ids.begin(), ds.heldout_ids.end());
    std::sort(ds.train_ids.begin(), ds.train_ids.end());
    ds.trajectories = std::move(trajs);
    ds.seed = seed;
    return ds;
}

/// Learning samples of a trajectory; next_action is the logged action at t+1.
inline void append_transitions(const Trajectory& t, std::vector<LearnTransition>& out) {
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const auto& s = t.steps[i];
        const int next_action = i + 1 < t.steps.size() ? action_code(t.steps[i + 1].action) : 0;
        out.push_back({s.features, action_code(s.action), s.reward, s.next_features, next_action, s.done});
    }
}

inline std::vector<LearnTransition> transitions_of(const Dataset& ds, std::span<const int> ids) {
    std::vector<LearnTransition> out;
    for (const int id : ids) append_transitions(ds.trajectory(id), out);
    return out;
}

// ---------------------------------------------------------------------------
// Dataset file: line-oriented JSON.
//   line 1      header {format, version, env, policy, seed, manifest, train, heldout, trajectories}
//   lines 2..   one transition per line {id, t, state, action, reward, done[, env_seed][, next_state]}
//   last line   trailer {end, lines, checksum}; checksum is FNV-1a 64 over every
//               preceding byte (newlines included), as 16 hex digits.
// ---------------------------------------------------------------------------

inline constexpr int kDatasetVersion = 1;

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Append a checksummed trailer to line-oriented payload text.
inline std::string seal_lines(const std::string& payload, std::size_t lines) {
    Json trailer{{"end", true}, {"lines", lines}, {"checksum", hex64(fnv1a(payload))}};
    return payload + dump_line(trailer) + "\n";
}

/// Verify the trailer and return the payload lines. `expect_version` reads
/// the version field of the first line before anything else is checked.
inline std::vector<std::string> unseal_lines(const std::string& text, const std::string& what, int supported_version) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        lines.push_back(text.substr(start, end - start));
        start = end + 1;
    }
    if (lines.empty()) throw TruncationError(what + " is empty");
    {
        const Json header = Json::parse(lines.front(), nullptr, false);
        if (!header.is_discarded() && header.is_object() && header.contains("version") &&
            header["version"].is_number_integer()) {
            const int v = header["version"].get<int>();
            if (v > supported_version) throw VersionError(v, supported_version);
        }
    }
    const Json trailer = Json::parse(lines.back(), nullptr, false);
    if (trailer.is_discarded() || !trailer.is_object() || !trailer.contains("end") || !trailer.contains("checksum") ||
        !trailer.contains("lines"))
        throw TruncationError(what + " is truncated (no end record)");
    lines.pop_back();
    if (trailer["lines"].get<std::size_t>() != lines.size())
        throw TruncationError(what + " is truncated: expected " + std::to_string(trailer["lines"].get<std::size_t>()) +
                              " records, found " + std::to_string(lines.size()));
    const auto payload_end = text.rfind('\n', text.size() >= 2 ? text.size() - 2 : 0);
    const std::string payload = payload_end == std::string::npos ? std::string() : text.substr(0, payload_end + 1);
    if (hex64(fnv1a(payload)) != trailer["checksum"].get<std::string>())
        throw ChecksumError(what + " failed its checksum");
    return lines;
}

inline std::string serialize_dataset(const Dataset& ds) {
    Json header{{"format", "termsum-dataset"},
                {"version", kDatasetVersion},
                {"env", ds.env},
                {"policy", ds.policy},
                {"seed", ds.seed},
                {"manifest", ds.manifest},
                {"train", ds.train_ids},
                {"heldout", ds.heldout_ids},
                {"trajectories", ds.trajectories.size()}};
    std::string payload = dump_line(header) + "\n";
    std::size_t lines = 1;
    for (const auto& traj : ds.trajectories) {
        for (std::size_t t = 0; t < traj.steps.size(); ++t) {
            const auto& st = traj.steps[t];
            Json rec{{"id", traj.id},
                     {"t", t},
                     {"state", st.state},
                     {"action", action_code(st.action)},
                     {"reward", st.reward},
                     {"done", st.done}};
            if (t == 0) rec["env_seed"] = traj.env_seed;
            if (t + 1 == traj.steps.size()) rec["next_state"] = traj.final_state;
            payload += dump_line(rec) + "\n";
            ++lines;
        }
    }
    return seal_lines(payload, lines);
}

inline Dataset parse_dataset(const std::string& text) {
    const auto lines = unseal_lines(text, "dataset", kDatasetVersion);
    try {
        const Json header = Json::parse(lines.front());
        if (header.at("format") != "termsum-dataset") throw FormatError("not a dataset file");
        Dataset ds;
        header.at("env").get_to(ds.env);
        header.at("policy").get_to(ds.policy);
        header.at("seed").get_to(ds.seed);
        header.at("manifest").get_to(ds.manifest);
        header.at("train").get_to(ds.train_ids);
        header.at("heldout").get_to(ds.heldout_ids);
        const auto n_traj = header.at("trajectories").get<std::size_t>();
        for (std::size_t i = 1; i < lines.size(); ++i) {
            const Json rec = Json::parse(lines[i]);
            const int id = rec.at("id").get<int>();
            const auto t = rec.at("t").get<std::size_t>();
            if (t == 0) {
                ds.trajectories.push_back({});
                ds.trajectories.back().id = id;
                ds.trajectories.back().env_seed = rec.at("env_seed").get<std::uint64_t>();
            }
            if (ds.trajectories.empty() || ds.trajectories.back().id != id || ds.trajectories.back().steps.size() != t)
                throw FormatError("dataset record out of order at line " + std::to_string(i + 1));
            auto& traj = ds.trajectories.back();
            TrajectoryStep st;
            rec.at("state").get_to(st.state);
            st.action = action_from_code(rec.at("action").get<int>());
            rec.at("reward").get_to(st.reward);
            rec.at("done").get_to(st.done);
            st.features = featurize(st.state, ds.env);
            if (!traj.steps.empty()) traj.steps.back().next_features = st.features;
            traj.steps.push_back(std::move(st));
            if (rec.contains("next_state")) {
                rec.at("next_state").get_to(traj.final_state);
                traj.steps.back().next_features = featurize(traj.final_state, ds.env);
            }
        }
        if (ds.trajectories.size() != n_traj) throw FormatError("dataset trajectory count disagrees with its header");
        return ds;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed dataset record: ") + e.what());
    }
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open `" + path + "`");
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write `" + path + "`");
    out << content;
    if (!out) throw FormatError("write to `" + path + "` failed");
}

inline void save_dataset(const std::string& path, const Dataset& ds) { write_file(path, serialize_dataset(ds)); }
inline Dataset load_dataset(const std::string& path) { return parse_dataset(read_file(path)); }

}  // namespace termsum
