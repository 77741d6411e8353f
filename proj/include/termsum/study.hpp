#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "termsum/frames.hpp"
#include "termsum/summaries.hpp"

namespace termsum {

// --- summary bundles -------------------------------------------------------

struct BundleProvenance {
    std::string dataset;
    std::string trace;
    std::uint64_t seed = 0;
    friend bool operator==(const BundleProvenance&, const BundleProvenance&) = default;
};

struct SummaryBundle {
    std::string id;
    ScoreKind kind = ScoreKind::likelihood;
    double score = 0.0;
    std::vector<int> ids;
    EnvConfig env;
    std::vector<std::vector<FrameRecord>> streams;
    BundleProvenance provenance;
    friend bool operator==(const SummaryBundle&, const SummaryBundle&) = default;
};

/// Re-simulates a stored episode from its seed and actions; any state or
/// reward mismatch is an integrity failure.
inline std::vector<FrameRecord> replay_frames(const Trajectory& traj, const EnvConfig& env) {
    EnvState s = reset(env, traj.env_seed);
    std::vector<FrameRecord> out;
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        const auto& st = traj.steps[t];
        if (!(s == st.state))
            throw IntegrityError("episode " + std::to_string(traj.id) + " diverges from its record at step " +
                                 std::to_string(t));
        auto next = step(env, s, st.action);
        if (next.reward != st.reward)
            throw IntegrityError("episode " + std::to_string(traj.id) + " reward mismatch at step " +
                                 std::to_string(t));
        out.push_back(make_frame(s, Controller::agent, action_code(st.action), next.reward, false));
        s = std::move(next.state);
    }
    if (!(s == traj.final_state))
        throw IntegrityError("episode " + std::to_string(traj.id) + " final state mismatch");
    out.push_back(make_frame(s, Controller::agent, -1, 0.0, false));
    return out;
}

inline SummaryBundle build_summary_bundle(const Candidate& cand, const Dataset& data, ScoreKind kind,
                                          BundleProvenance provenance = {}) {
    if (!cand.score) throw ContractError("summary bundle needs a scored candidate");
    if (cand.ids.empty()) throw ContractError("summary bundle needs at least one episode");
    SummaryBundle b;
    b.kind = kind;
    b.score = *cand.score;
    b.ids = cand.ids;
    b.env = data.env;
    b.provenance = std::move(provenance);
    for (const int id : cand.ids) b.streams.push_back(replay_frames(data.trajectory(id), data.env));
    b.id = "bundle-" + hex64(fnv1a(std::string(score_name(kind)) + "|" + detail::ids_text(cand.ids) + "|" +
                                   b.provenance.dataset + "|" + std::to_string(b.provenance.seed)));
    return b;
}

inline constexpr int kBundleVersion = 1;

inline Json bundle_manifest(const SummaryBundle& b) {
    Json episodes = Json::array();
    for (const int id : b.ids) episodes.push_back(Json{{"id", id}, {"file", "episode_" + std::to_string(id) + ".frames"}});
    return Json{{"format", "termsum-bundle"},
                {"version", kBundleVersion},
                {"id", b.id},
                {"score_kind", score_name(b.kind)},
                {"score", b.score},
                {"env", b.env},
                {"episodes", episodes},
                {"provenance", {{"dataset", b.provenance.dataset}, {"trace", b.provenance.trace}, {"seed", b.provenance.seed}}}};
}

/// Manifest plus inline frame streams, as served over HTTP.
inline Json bundle_to_json(const SummaryBundle& b) {
    Json j = bundle_manifest(b);
    Json streams = Json::array();
    for (const auto& s : b.streams) streams.push_back(s);
    j["streams"] = streams;
    return j;
}

inline SummaryBundle bundle_from_manifest(const Json& m) {
    if (m.at("format") != "termsum-bundle") throw FormatError("not a summary bundle manifest");
    const int v = m.at("version").get<int>();
    if (v > kBundleVersion) throw VersionError(v, kBundleVersion);
    SummaryBundle b;
    b.id = m.at("id").get<std::string>();
    b.kind = parse_score_kind(m.at("score_kind").get<std::string>());
    b.score = m.at("score").get<double>();
    b.env = m.at("env").get<EnvConfig>();
    for (const auto& e : m.at("episodes")) b.ids.push_back(e.at("id").get<int>());
    const auto& p = m.at("provenance");
    b.provenance = {p.at("dataset").get<std::string>(), p.at("trace").get<std::string>(), p.at("seed").get<std::uint64_t>()};
    return b;
}

inline void write_bundle(const std::filesystem::path& dir, const SummaryBundle& b) {
    std::filesystem::create_directories(dir);
    const Json m = bundle_manifest(b);
    write_file((dir / "manifest.json").string(), seal_lines(dump_line(m) + "\n", 1));
    for (std::size_t i = 0; i < b.ids.size(); ++i)
        write_file((dir / m["episodes"][i]["file"].get<std::string>()).string(),
                   serialize_frames(b.streams[i], Json{{"bundle", b.id}, {"episode", b.ids[i]}}));
}

inline SummaryBundle read_bundle(const std::filesystem::path& dir) {
    const auto lines = unseal_lines(read_file((dir / "manifest.json").string()), "bundle manifest", kBundleVersion);
    try {
        const Json m = Json::parse(lines.front());
        auto b = bundle_from_manifest(m);
        for (const auto& e : m.at("episodes"))
            b.streams.push_back(parse_frames(read_file((dir / e.at("file").get<std::string>()).string())).frames);
        return b;
    } catch (const Json::exception& e) {
        throw FormatError(std::string("malformed bundle manifest: ") + e.what());
    }
}

// --- quiz ------------------------------------------------------------------

inline constexpr int kQuizScoredItems = 5;
inline constexpr int kQuizControlItems = 5;
inline constexpr int kQuizItems = kQuizScoredItems + kQuizControlItems;
inline constexpr int kQuizEpisodeBudget = 2000;

/// Ego in the flaw lane, closing on a strictly slower car less than two
/// ego-speeds ahead.
inline bool imminent_flaw(const FrameRecord& f, int flaw_lane) {
    if (f.lane != flaw_lane) return false;
    const auto [gap, ahead_speed] = frame_gap_ahead(f);
    return gap > 0 && gap < 2L * f.speed && ahead_speed < f.speed;
}

/// Ego outside the flaw lane with nothing within three ego-speeds ahead.
inline bool calm_scene(const FrameRecord& f, int flaw_lane) {
    if (f.lane == flaw_lane) return false;
    const auto gap = frame_gap_ahead(f).first;
    return gap < 0 || gap >= 3L * f.speed;
}

struct QuizClip {
    std::uint64_t env_seed = 0;
    int pause_step = 0;
    std::vector<FrameRecord> frames;  // steps 0..pause; the paused frame hides its action
    friend bool operator==(const QuizClip&, const QuizClip&) = default;
};

struct QuizItem {
    std::array<QuizClip, 2> clips;
    std::optional<int> ground_truth;  // 0 = first, 1 = second; absent on controls
    std::string rationale;
    friend bool operator==(const QuizItem&, const QuizItem&) = default;
};

struct Quiz {
    std::string id;
    std::uint64_t seed = 0;
    EnvConfig env;
    int flaw_lane = 0;
    std::string agent;
    std::vector<QuizItem> items;
    friend bool operator==(const Quiz&, const Quiz&) = default;
};

inline QuizClip clip_of(const Trajectory& traj, int pause) {
    QuizClip c;
    c.env_seed = traj.env_seed;
    c.pause_step = pause;
    for (int t = 0; t < pause; ++t) {
        const auto& st = traj.steps[t];
        c.frames.push_back(make_frame(st.state, Controller::agent, action_code(st.action), st.reward, false));
    }
    c.frames.push_back(make_frame(traj.steps[pause].state, Controller::agent, -1, 0.0, false));
    return c;
}

inline void check_quiz(const Quiz& q) {
    if (q.items.size() != static_cast<std::size_t>(kQuizItems)) throw IntegrityError("quiz must have 10 items");
    int scored = 0;
    for (const auto& item : q.items) {
        for (const auto& c : item.clips)
            if (c.frames.empty()) throw IntegrityError("quiz clip without frames");
        if (!item.ground_truth) continue;
        ++scored;
        const int gt = *item.ground_truth;
        if (gt != 0 && gt != 1) throw IntegrityError("quiz ground truth must be 0 or 1");
        if (!imminent_flaw(item.clips[gt].frames.back(), q.flaw_lane))
            throw IntegrityError("scored quiz item does not pause on an imminent flaw");
        if (!calm_scene(item.clips[1 - gt].frames.back(), q.flaw_lane))
            throw IntegrityError("scored quiz item pairs the flaw with a non-calm scene");
    }
    if (scored != kQuizScoredItems) throw IntegrityError("quiz must have exactly 5 scored items");
}

/// Scans seeded rollouts of the flawed agent for flaw-imminent and calm pause
/// points and assembles 5 scored and 5 control items in a shuffled order.
inline Quiz generate_quiz(const PolicyHandle& agent, const EnvConfig& env, std::uint64_t seed,
                          int budget = kQuizEpisodeBudget, int jobs = 1) {
    env.validate();
    const auto flaw = agent.flaw_lane();
    if (!flaw) throw ContractError("quiz generation needs an agent with a known flaw lane");
    const int flaw_lane = *flaw;
    const std::size_t need_a = kQuizScoredItems;
    const std::size_t need_b = kQuizScoredItems + 2 * kQuizControlItems;

    std::vector<QuizClip> a_clips;
    std::vector<QuizClip> b_clips;
    constexpr int kBatch = 64;
    for (int start = 0; start < budget && (a_clips.size() < need_a || b_clips.size() < need_b); start += kBatch) {
        const int count = std::min(kBatch, budget - start);
        std::vector<Trajectory> batch(static_cast<std::size_t>(count));
        parallel_for(batch.size(), jobs, [&](std::size_t i) {
            const auto idx = static_cast<std::uint64_t>(start) + i;
            batch[i] = run_episode(agent, env, derive_seed(seed, "quiz-episode", idx), static_cast<int>(idx));
        });
        for (const auto& traj : batch) {
            std::vector<int> a_points;
            std::vector<int> b_points;
            for (std::size_t t = 0; t < traj.steps.size(); ++t) {
                const auto f = make_frame(traj.steps[t].state, Controller::agent, -1, 0.0, false);
                if (imminent_flaw(f, flaw_lane)) a_points.push_back(static_cast<int>(t));
                if (calm_scene(f, flaw_lane)) b_points.push_back(static_cast<int>(t));
            }
            auto pick = make_stream(seed, "quiz-pause", static_cast<std::uint64_t>(traj.id));
            if (!a_points.empty() && a_clips.size() < need_a) a_clips.push_back(clip_of(traj, a_points.front()));
            else if (!b_points.empty() && b_clips.size() < need_b)
                b_clips.push_back(clip_of(traj, b_points[pick.below(b_points.size())]));
        }
    }
    if (a_clips.size() < need_a || b_clips.size() < need_b)
        throw BudgetError("quiz generation found " + std::to_string(a_clips.size()) + " flaw-imminent and " +
                              std::to_string(b_clips.size()) + " calm scenarios within " + std::to_string(budget) +
                              " episodes (need " + std::to_string(need_a) + " and " + std::to_string(need_b) + ")",
                          static_cast<int>(std::min(a_clips.size(), b_clips.size())));

    auto rng = make_stream(seed, "quiz-shuffle");
    Quiz q;
    q.seed = seed;
    q.env = env;
    q.flaw_lane = flaw_lane;
    q.agent = agent.describe();
    std::size_t next_b = 0;
    for (int i = 0; i < kQuizScoredItems; ++i) {
        QuizItem item;
        const int gt = rng.bernoulli(0.5) ? 1 : 0;
        item.clips[gt] = a_clips[i];
        item.clips[1 - gt] = b_clips[next_b++];
        item.ground_truth = gt;
        item.rationale = "imminent_flaw";
        q.items.push_back(std::move(item));
    }
    for (int i = 0; i < kQuizControlItems; ++i) {
        QuizItem item;
        item.clips[0] = b_clips[next_b++];
        item.clips[1] = b_clips[next_b++];
        item.rationale = "control";
        q.items.push_back(std::move(item));
    }
    for (std::size_t i = q.items.size(); i > 1; --i) std::swap(q.items[i - 1], q.items[rng.below(i)]);
    q.id = "quiz-" + hex64(derive_seed(seed, "quiz-id", static_cast<std::uint64_t>(flaw_lane)));
    check_quiz(q);
    return q;
}

struct QuizGrade {
    double score = 0.0;
    int correct = 0;
    std::vector<std::optional<bool>> per_item;  // empty for controls
};

inline QuizGrade grade_detail(std::span<const int> answers, const Quiz& quiz) {
    if (answers.size() != quiz.items.size())
        throw ContractError("expected " + std::to_string(quiz.items.size()) + " answers, got " +
                            std::to_string(answers.size()));
    QuizGrade g;
    int scored = 0;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        if (answers[i] != 0 && answers[i] != 1) throw ContractError("answers must be 0 (first) or 1 (second)");
        const auto& gt = quiz.items[i].ground_truth;
        if (!gt) {
            g.per_item.emplace_back();
            continue;
        }
        ++scored;
        const bool ok = answers[i] == *gt;
        g.correct += ok;
        g.per_item.emplace_back(ok);
    }
    g.score = scored ? static_cast<double>(g.correct) / scored : 0.0;
    return g;
}

/// Fraction of scored items answered correctly.
inline double grade(std::span<const int> answers, const Quiz& quiz) { return grade_detail(answers, quiz).score; }

inline constexpr int kQuizVersion = 1;

inline std::string clip_file(std::size_t item, std::size_t clip) {
    return "item" + std::to_string(item) + "_" + (clip == 0 ? "a" : "b") + ".frames";
}

/// With `include_truth` false the ground truth and rationale are withheld.
inline Json quiz_manifest(const Quiz& q, bool include_truth = true) {
    Json items = Json::array();
    for (std::size_t i = 0; i < q.items.size(); ++i) {
        const auto& it = q.items[i];
        Json clips = Json::array();
        for (std::size_t c = 0; c < 2; ++c)
            clips.push_back(Json{{"file", clip_file(i, c)},
                                 {"env_seed", it.clips[c].env_seed},
                                 {"pause_step", it.clips[c].pause_step}});
        Json j{{"clips", clips}};
        if (include_truth) {
            j["ground_truth"] = it.ground_truth ? Json(*it.ground_truth) : Json(nullptr);
            j["rationale"] = it.rationale;
        }
        items.push_back(std::move(j));
    }
    return Json{{"format", "termsum-quiz"}, {"version", kQuizVersion}, {"id", q.id},   {"seed", q.seed},
                {"env", q.env},            {"flaw_lane", q.flaw_lane}, {"agent", q.agent}, {"items", items}};
}

/// Manifest plus inline clip frames, as served over HTTP.
inline Json quiz_to_json(const Quiz& q, bool include_truth) {
    Json j = quiz_manifest(q, include_truth);
    if (!include_truth) j.erase("flaw_lane");
    for (std::size_t i = 0; i < q.items.size(); ++i)
        for (std::size_t c = 0; c < 2; ++c) j["items"][i]["clips"][c]["frames"] = q.items[i].clips[c].frames;
    return j;
}

inline void write_quiz(const std::filesystem::path& dir, const Quiz& q) {
    std::filesystem::create_directories(dir);
    write_file((dir / "manifest.json").string(), seal_lines(dump_line(quiz_manifest(q)) + "\n", 1));
    for (std::size_t i = 0; i < q.items.size(); ++i)
        for (std::size_t c = 0; c < 2; ++c)
            write_file((dir / clip_file(i, c)).string(),
                       serialize_frames(q.items[i].clips[c].frames, Json{{"quiz", q.id}, {"item", i}, {"clip", c}}));
}

inline Quiz read_quiz(const std::filesystem::path& dir) {
    const auto lines = unseal_lines(read_file((dir / "manifest.json").string()), "quiz manifest", kQuizVersion);
    Quiz q;
    try {
        const Json m = Json::parse(lines.front());
        if (m.at("format") != "termsum-quiz") throw FormatError("not a quiz manifest");
        q.id = m.at("id").get<std::string>();
        q.seed = m.at("seed").get<std::uint64_t>();
        q.env = m.at("env").get<EnvConfig>();
        q.flaw_lane = m.at("flaw_lane").get<int>();
        q.agent = m.at("agent").get<std::string>();
        for (const auto& j : m.at("items")) {
            QuizItem it;
            if (!j.at("ground_truth").is_null()) it.ground_truth = j.at("ground_truth").get<int>();
            it.rationale = j.at("rationale").get<std::string>();
            for (std::size_t c = 0; c < 2; ++c) {
                const auto& cj = j.at("clips").at(c);
                it.clips[c].env_seed = cj.at("env_seed").get<std::uint64_t>();
                it.clips[c].pause_step = cj.at("pause_step").get<int>();
                it.clips[c].frames = parse_frames(read_file((dir / cj.at("file").get<std::string>()).string())).frames;
            }
            q.items.push_back(std::move(it));
        }
    } catch (const Json::exception& e) {
        throw FormatError(std::string("malformed quiz manifest: ") + e.what());
    }
    check_quiz(q);
    return q;
}

}  // namespace termsum
