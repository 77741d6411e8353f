#pragma once

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "termsum/scenario.hpp"
#include "termsum/study.hpp"

namespace termsum {

inline constexpr int kApiVersion = 1;

/// One live TerMDP episode driven by API intents and ticks. Mirrors
/// run_takeover step for step: a termination applies to the next tick.
class Session {
public:
    Session(std::string id, const Scenario& scenario, std::uint64_t seed)
        : id_(std::move(id)), scenario_(scenario), state_(reset(scenario.env, seed)) {
        trace_.seed = seed;
        trace_.gamma = scenario.term.gamma;
        trace_.c = scenario.term.c;
        trace_.h = scenario.term.h;
    }

    enum class TerminateResult { accepted, human_in_control, finished };
    enum class ActionResult { queued, agent_in_control, finished };

    TerminateResult terminate() {
        std::lock_guard lock(mutex_);
        if (state_.done) return TerminateResult::finished;
        if (human_left_ > 0) return TerminateResult::human_in_control;
        human_left_ = scenario_.term.h;
        pending_event_ = true;
        const int t = static_cast<int>(trace_.steps.size());
        trace_.events.push_back(t);
        trace_.discounted_return -= discount_ * scenario_.term.c;
        return TerminateResult::accepted;
    }

    ActionResult human_action(Action a) {
        std::lock_guard lock(mutex_);
        if (state_.done) return ActionResult::finished;
        if (human_left_ == 0) return ActionResult::agent_in_control;
        queued_action_ = a;
        return ActionResult::queued;
    }

    /// Advances one step; returns the executed frame, or nothing when done.
    std::optional<FrameRecord> tick() {
        std::lock_guard lock(mutex_);
        if (state_.done) return std::nullopt;
        const auto& env = scenario_.env;
        const Controller who = human_left_ > 0 ? Controller::human : Controller::agent;
        Action a;
        if (who == Controller::human) {
            if (queued_action_) {
                a = *queued_action_;
            } else {
                a = scenario_.term.human.act(state_, env);
                ++fallbacks_;
            }
            queued_action_.reset();
            --human_left_;
        } else {
            a = scenario_.term.agent.act(state_, env);
        }
        auto out = step(env, state_, a);
        trace_.discounted_return += discount_ * out.reward;
        discount_ *= scenario_.term.gamma;
        const bool event = pending_event_;
        pending_event_ = false;
        auto frame = make_frame(state_, who, action_code(a), out.reward, event);
        trace_.steps.push_back({std::move(state_), action_code(a), out.reward, who, event});
        state_ = std::move(out.state);
        if (state_.done) trace_.final_state = state_;
        return frame;
    }

    Json snapshot() const {
        std::lock_guard lock(mutex_);
        const Controller who = human_left_ > 0 ? Controller::human : Controller::agent;
        return Json{{"schema", "session/v1"},
                    {"session", id_},
                    {"phase", "live_play"},
                    {"frame", make_frame(state_, who, -1, 0.0, pending_event_)},
                    {"controller", controller_name(who)},
                    {"remaining_takeover", human_left_},
                    {"events", trace_.events},
                    {"return", trace_.discounted_return},
                    {"done", state_.done},
                    {"fallbacks", fallbacks_},
                    {"c", scenario_.term.c},
                    {"h", scenario_.term.h}};
    }

    bool done() const {
        std::lock_guard lock(mutex_);
        return state_.done;
    }

    TakeoverTrace trace() const {
        std::lock_guard lock(mutex_);
        return trace_;
    }

    const std::string& id() const noexcept { return id_; }
    const EnvConfig& env() const noexcept { return scenario_.env; }

private:
    std::string id_;
    Scenario scenario_;
    mutable std::mutex mutex_;
    EnvState state_;
    TakeoverTrace trace_;
    int human_left_ = 0;
    bool pending_event_ = false;
    double discount_ = 1.0;
    int fallbacks_ = 0;
    std::optional<Action> queued_action_;
};

struct ServerOptions {
    std::filesystem::path artifact_root;  // empty: nothing loaded, traces not persisted
    double tick_hz = 4.0;
};

/// Versioned JSON/HTTP surface over summaries, sessions and quizzes.
class StudyServer {
public:
    explicit StudyServer(ServerOptions options = {}) : options_(std::move(options)) { routes(); }

    void add_summary(SummaryBundle b) {
        auto id = b.id;
        std::lock_guard lock(mutex_);
        summaries_[id] = std::make_shared<const SummaryBundle>(std::move(b));
    }
    void add_quiz(Quiz q) {
        auto id = q.id;
        std::lock_guard lock(mutex_);
        quizzes_[id] = std::make_shared<const Quiz>(std::move(q));
    }
    void add_scenario(const std::string& id, Scenario sc) {
        std::lock_guard lock(mutex_);
        scenarios_[id] = std::make_shared<const Scenario>(std::move(sc));
    }

    /// Loads summaries/<id>/, quizzes/<id>/ and scenarios/<id>.cfg.
    void load_artifacts() {
        namespace fs = std::filesystem;
        const auto& root = options_.artifact_root;
        if (root.empty()) return;
        if (fs::is_directory(root / "summaries"))
            for (const auto& e : fs::directory_iterator(root / "summaries"))
                if (e.is_directory()) add_summary(read_bundle(e.path()));
        if (fs::is_directory(root / "quizzes"))
            for (const auto& e : fs::directory_iterator(root / "quizzes"))
                if (e.is_directory()) add_quiz(read_quiz(e.path()));
        if (fs::is_directory(root / "scenarios"))
            for (const auto& e : fs::directory_iterator(root / "scenarios"))
                if (e.path().extension() == ".cfg") add_scenario(e.path().stem().string(), load_scenario(e.path()));
    }

    std::shared_ptr<Session> session(const std::string& id) const {
        std::lock_guard lock(mutex_);
        const auto it = sessions_.find(id);
        return it == sessions_.end() ? nullptr : it->second;
    }

    int bind_to_any_port(const std::string& host = "127.0.0.1") { return http_.bind_to_any_port(host); }
    bool bind(const std::string& host, int port) { return http_.bind_to_port(host, port); }
    bool listen_after_bind() { return http_.listen_after_bind(); }
    void stop() { http_.stop(); }
    void wait_until_ready() { http_.wait_until_ready(); }

private:
    static void send_json(httplib::Response& res, const Json& j, int status = 200) {
        res.status = status;
        res.set_content(j.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
        send_json(res, Json{{"schema", "error/v1"}, {"error", {{"code", code}, {"message", message}}}}, status);
    }

    static std::optional<Json> parse_body(const httplib::Request& req, httplib::Response& res) {
        Json body = Json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) {
            send_error(res, 422, "malformed_body", "request body must be a JSON object");
            return std::nullopt;
        }
        return body;
    }

    void persist(const Session& s) const {
        if (options_.artifact_root.empty()) return;
        const auto dir = options_.artifact_root / "sessions";
        std::filesystem::create_directories(dir);
        write_file((dir / (s.id() + ".trace")).string(), serialize_trace(s.trace(), s.env(), s.id()));
    }

    std::optional<FrameRecord> advance(Session& s) const {
        auto frame = s.tick();
        if (frame && s.done()) persist(s);
        return frame;
    }

    static Json schema() {
        return Json{
            {"schema", "schema/v1"},
            {"api_version", kApiVersion},
            {"frame", {{"t", "int"}, {"controller", "agent|human"}, {"lane", "int"}, {"pos", "int"},
                       {"speed", "int"}, {"others", "[[lane,pos,speed]]"}, {"action", "int, -1 when not taken"},
                       {"reward", "number"}, {"event", "bool"}}},
            {"session_create", {{"scenario", "string"}, {"seed", "uint64"}}},
            {"session", {{"session", "string"}, {"phase", "live_play"}, {"frame", "frame"},
                         {"controller", "agent|human"}, {"remaining_takeover", "int"}, {"events", "[int]"},
                         {"return", "number"}, {"done", "bool"}, {"fallbacks", "int"}, {"c", "number"},
                         {"h", "int"}}},
            {"human_action", {{"action", "int 0..4"}}},
            {"answers", {{"answers", "[int 0|1] x10"}}},
            {"error", {{"error", {{"code", "string"}, {"message", "string"}}}}}};
    }

    void routes() {
        http_.Get("/api/v1/healthz", [](const httplib::Request&, httplib::Response& res) {
            send_json(res, Json{{"schema", "health/v1"}, {"status", "ok"}, {"api_version", kApiVersion}});
        });
        http_.Get("/api/v1/schema",
                  [](const httplib::Request&, httplib::Response& res) { send_json(res, schema()); });

        http_.Get(R"(/api/v1/summaries/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            std::shared_ptr<const SummaryBundle> b;
            {
                std::lock_guard lock(mutex_);
                if (const auto it = summaries_.find(req.matches[1]); it != summaries_.end()) b = it->second;
            }
            if (!b) return send_error(res, 404, "unknown_summary", "no summary `" + std::string(req.matches[1]) + "`");
            send_json(res, bundle_to_json(*b));
        });

        http_.Post("/api/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            const auto body = parse_body(req, res);
            if (!body) return;
            if (!body->contains("scenario") || !(*body)["scenario"].is_string() || !body->contains("seed") ||
                !(*body)["seed"].is_number_unsigned())
                return send_error(res, 422, "malformed_body", "expected {\"scenario\": string, \"seed\": uint}");
            const auto scenario_id = (*body)["scenario"].get<std::string>();
            const auto seed = (*body)["seed"].get<std::uint64_t>();
            std::shared_ptr<Session> s;
            {
                std::lock_guard lock(mutex_);
                const auto it = scenarios_.find(scenario_id);
                if (it == scenarios_.end())
                    return send_error(res, 404, "unknown_scenario", "no scenario `" + scenario_id + "`");
                const auto id = "s" + std::to_string(++session_counter_) + "-" + hex64(seed).substr(8);
                s = std::make_shared<Session>(id, *it->second, seed);
                sessions_[id] = s;
            }
            send_json(res, s->snapshot(), 201);
        });

        http_.Get(R"(/api/v1/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            const auto s = session(req.matches[1]);
            if (!s) return send_error(res, 404, "unknown_session", "no session `" + std::string(req.matches[1]) + "`");
            send_json(res, s->snapshot());
        });

        http_.Post(R"(/api/v1/sessions/([^/]+)/tick)", [this](const httplib::Request& req, httplib::Response& res) {
            const auto s = session(req.matches[1]);
            if (!s) return send_error(res, 404, "unknown_session", "no session `" + std::string(req.matches[1]) + "`");
            const auto frame = advance(*s);
            if (!frame) return send_error(res, 409, "session_finished", "the episode has ended");
            send_json(res, Json{{"schema", "tick/v1"}, {"frame", *frame}, {"session", s->snapshot()}});
        });

        http_.Post(R"(/api/v1/sessions/([^/]+)/terminate)", [this](const httplib::Request& req,
                                                                    httplib::Response& res) {
            const auto s = session(req.matches[1]);
            if (!s) return send_error(res, 404, "unknown_session", "no session `" + std::string(req.matches[1]) + "`");
            switch (s->terminate()) {
                case Session::TerminateResult::accepted:
                    return send_json(res, Json{{"schema", "terminate/v1"}, {"status", "accepted"},
                                               {"event_step", s->trace().events.back()}});
                case Session::TerminateResult::human_in_control:
                    return send_json(res, Json{{"schema", "terminate/v1"}, {"status", "ignored"},
                                               {"reason", "human_in_control"}});
                case Session::TerminateResult::finished:
                    return send_error(res, 409, "session_finished", "the episode has ended");
            }
        });

        http_.Post(R"(/api/v1/sessions/([^/]+)/human-action)", [this](const httplib::Request& req,
                                                                       httplib::Response& res) {
            const auto s = session(req.matches[1]);
            if (!s) return send_error(res, 404, "unknown_session", "no session `" + std::string(req.matches[1]) + "`");
            const auto body = parse_body(req, res);
            if (!body) return;
            const auto it = body->find("action");
            if (it == body->end() || !it->is_number_integer() || it->get<int>() < 0 || it->get<int>() >= kNumActions)
                return send_error(res, 422, "malformed_body", "expected {\"action\": 0..4}");
            switch (s->human_action(action_from_code(it->get<int>()))) {
                case Session::ActionResult::queued:
                    return send_json(res, Json{{"schema", "human_action/v1"}, {"status", "queued"}});
                case Session::ActionResult::agent_in_control:
                    return send_error(res, 409, "agent_in_control", "actions are accepted only during a takeover");
                case Session::ActionResult::finished:
                    return send_error(res, 409, "session_finished", "the episode has ended");
            }
        });

        http_.Get(R"(/api/v1/sessions/([^/]+)/stream)", [this](const httplib::Request& req, httplib::Response& res) {
            const auto s = session(req.matches[1]);
            if (!s) return send_error(res, 404, "unknown_session", "no session `" + std::string(req.matches[1]) + "`");
            const auto interval = std::chrono::duration<double>(1.0 / options_.tick_hz);
            res.set_header("Cache-Control", "no-cache");
            res.set_chunked_content_provider("text/event-stream", [this, s, interval](std::size_t,
                                                                                      httplib::DataSink& sink) {
                const auto frame = advance(*s);
                std::string msg;
                if (frame) {
                    msg = "event: frame\ndata: " + Json(*frame).dump() + "\n\n";
                } else {
                    msg = "event: end\ndata: " + s->snapshot().dump() + "\n\n";
                }
                if (!sink.write(msg.data(), msg.size())) return false;
                if (!frame) {
                    sink.done();
                    return true;
                }
                std::this_thread::sleep_for(interval);
                return true;
            });
        });

        http_.Get(R"(/api/v1/quiz/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            const auto q = quiz(req.matches[1]);
            if (!q) return send_error(res, 404, "unknown_quiz", "no quiz `" + std::string(req.matches[1]) + "`");
            auto j = quiz_to_json(*q, false);
            j["schema"] = "quiz/v1";
            send_json(res, j);
        });

        http_.Post(R"(/api/v1/quiz/([^/]+)/answers)", [this](const httplib::Request& req, httplib::Response& res) {
            const auto q = quiz(req.matches[1]);
            if (!q) return send_error(res, 404, "unknown_quiz", "no quiz `" + std::string(req.matches[1]) + "`");
            const auto body = parse_body(req, res);
            if (!body) return;
            const auto it = body->find("answers");
            if (it == body->end() || !it->is_array())
                return send_error(res, 422, "malformed_body", "expected {\"answers\": [10 x 0|1]}");
            if (it->size() != q->items.size())
                return send_error(res, 422, "wrong_answer_count",
                                  "expected " + std::to_string(q->items.size()) + " answers, got " +
                                      std::to_string(it->size()));
            std::vector<int> answers;
            for (const auto& a : *it) {
                if (!a.is_number_integer() || (a.get<int>() != 0 && a.get<int>() != 1))
                    return send_error(res, 422, "malformed_answer", "answers must be 0 (first) or 1 (second)");
                answers.push_back(a.get<int>());
            }
            const auto g = grade_detail(answers, *q);
            Json items = Json::array();
            for (const auto& p : g.per_item) items.push_back(p ? Json(*p) : Json(nullptr));
            send_json(res, Json{{"schema", "grade/v1"}, {"grade", g.score}, {"correct", g.correct},
                                {"scored_items", kQuizScoredItems}, {"items", items}});
        });
    }

    std::shared_ptr<const Quiz> quiz(const std::string& id) const {
        std::lock_guard lock(mutex_);
        const auto it = quizzes_.find(id);
        return it == quizzes_.end() ? nullptr : it->second;
    }

    ServerOptions options_;
    httplib::Server http_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<const SummaryBundle>> summaries_;
    std::map<std::string, std::shared_ptr<const Quiz>> quizzes_;
    std::map<std::string, std::shared_ptr<const Scenario>> scenarios_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t session_counter_ = 0;
};

}  // namespace termsum
