#include <gtest/gtest.h>

#include <thread>

#include "termsum/server.hpp"

using namespace termsum;

namespace {

/// Drifts into lane 0 and brakes there; the human is the rule driver.
Scenario drifting_scenario(double c = 0.05, int h = 5) {
    Scenario sc;
    sc.term.c = c;
    sc.term.h = h;
    auto primary = std::make_shared<const PolicyHandle>(PolicyHandle::constant(Action::lane_left));
    sc.term.agent = PolicyHandle(CompositePolicy{primary, Action::slower, 0});
    sc.term.human = PolicyHandle::human();
    return sc;
}

FrameRecord frame_at(int lane, std::vector<Vehicle> others) {
    FrameRecord f;
    f.lane = lane;
    f.pos = 10;
    f.speed = 3;
    f.others = std::move(others);
    return f;
}

Quiz synthetic_quiz() {
    Quiz q;
    q.id = "quiz-test";
    q.flaw_lane = 0;
    const QuizClip flaw{1, 0, {frame_at(0, {{0, 14, 2}})}};
    const QuizClip calm{2, 0, {frame_at(2, {})}};
    for (int i = 0; i < 10; ++i) {
        QuizItem it;
        if (i % 2 == 0) {
            const int gt = (i / 2) % 2;
            it.clips[gt] = flaw;
            it.clips[1 - gt] = calm;
            it.ground_truth = gt;
            it.rationale = "imminent_flaw";
        } else {
            it.clips = {calm, calm};
            it.rationale = "control";
        }
        q.items.push_back(it);
    }
    return q;
}

class ServerTest : public ::testing::Test {
protected:
    void SetUp() override {
        root_ = std::filesystem::temp_directory_path() / "termsum_server_test";
        std::filesystem::remove_all(root_);
        server_ = std::make_unique<StudyServer>(ServerOptions{root_, 2000.0});
        server_->add_scenario("drift", drifting_scenario());
        server_->add_quiz(synthetic_quiz());
        EnvConfig env;
        auto ds = split(collect(PolicyHandle::human(), env, 8, 1), 0.25, 1);
        ds.env = env;
        server_->add_summary(build_summary_bundle(Candidate{{ds.train_ids[0], ds.train_ids[1]}, -1.0}, ds,
                                                  ScoreKind::likelihood, {"ds", "tr", 1}));
        summary_id_ = build_summary_bundle(Candidate{{ds.train_ids[0], ds.train_ids[1]}, -1.0}, ds,
                                           ScoreKind::likelihood, {"ds", "tr", 1})
                          .id;
        port_ = server_->bind_to_any_port();
        thread_ = std::thread([this] { server_->listen_after_bind(); });
        server_->wait_until_ready();
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    }

    void TearDown() override {
        server_->stop();
        thread_.join();
    }

    Json post(const std::string& path, const Json& body, int expected) {
        auto res = client_->Post(path, body.dump(), "application/json");
        EXPECT_TRUE(res);
        if (!res) return {};
        EXPECT_EQ(res->status, expected) << path << " " << res->body;
        return Json::parse(res->body);
    }

    Json get(const std::string& path, int expected) {
        auto res = client_->Get(path);
        EXPECT_TRUE(res);
        if (!res) return {};
        EXPECT_EQ(res->status, expected) << path << " " << res->body;
        return Json::parse(res->body);
    }

    std::string new_session(std::uint64_t seed) {
        return post("/api/v1/sessions", Json{{"scenario", "drift"}, {"seed", seed}}, 201)["session"];
    }

    std::filesystem::path root_;
    std::unique_ptr<StudyServer> server_;
    std::unique_ptr<httplib::Client> client_;
    std::thread thread_;
    std::string summary_id_;
    int port_ = 0;
};

}  // namespace

TEST_F(ServerTest, HealthAndSchema) {
    EXPECT_EQ(get("/api/v1/healthz", 200)["status"], "ok");
    const auto schema = get("/api/v1/schema", 200);
    EXPECT_EQ(schema["api_version"], kApiVersion);
    EXPECT_TRUE(schema["frame"].contains("controller"));
}

TEST_F(ServerTest, UnknownIdsAre404WithCodes) {
    EXPECT_EQ(get("/api/v1/summaries/nope", 404)["error"]["code"], "unknown_summary");
    EXPECT_EQ(get("/api/v1/sessions/nope", 404)["error"]["code"], "unknown_session");
    EXPECT_EQ(get("/api/v1/quiz/nope", 404)["error"]["code"], "unknown_quiz");
    EXPECT_EQ(post("/api/v1/sessions", Json{{"scenario", "nope"}, {"seed", 1}}, 404)["error"]["code"],
              "unknown_scenario");
    EXPECT_EQ(post("/api/v1/sessions/nope/terminate", Json::object(), 404)["error"]["code"], "unknown_session");
}

TEST_F(ServerTest, MalformedBodiesAre422) {
    auto res = client_->Post("/api/v1/sessions", "{not json", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 422);
    EXPECT_EQ(post("/api/v1/sessions", Json{{"scenario", "drift"}}, 422)["error"]["code"], "malformed_body");
    const auto id = new_session(3);
    post("/api/v1/sessions/" + id + "/terminate", Json::object(), 200);
    EXPECT_EQ(post("/api/v1/sessions/" + id + "/human-action", Json{{"action", 9}}, 422)["error"]["code"],
              "malformed_body");
}

TEST_F(ServerTest, SummaryIsServedWithFrames) {
    const auto j = get("/api/v1/summaries/" + summary_id_, 200);
    EXPECT_EQ(j["streams"].size(), 2u);
    EXPECT_EQ(j["score_kind"], "likelihood");
}

TEST_F(ServerTest, TerminateRoundTripAndTakeoverCountdown) {
    const auto id = new_session(7);
    const std::string base = "/api/v1/sessions/" + id;
    EXPECT_EQ(post(base + "/human-action", Json{{"action", 0}}, 409)["error"]["code"], "agent_in_control");
    const auto ack = post(base + "/terminate", Json::object(), 200);
    EXPECT_EQ(ack["status"], "accepted");
    EXPECT_EQ(ack["event_step"], 0);
    const auto again = post(base + "/terminate", Json::object(), 200);
    EXPECT_EQ(again["status"], "ignored");
    EXPECT_EQ(again["reason"], "human_in_control");
    EXPECT_EQ(get(base, 200)["remaining_takeover"], 5);

    EXPECT_EQ(post(base + "/human-action", Json{{"action", action_code(Action::faster)}}, 200)["status"], "queued");
    auto tick = post(base + "/tick", Json::object(), 200);
    EXPECT_EQ(tick["frame"]["controller"], "human");
    EXPECT_EQ(tick["frame"]["action"], action_code(Action::faster));
    EXPECT_TRUE(tick["frame"]["event"].get<bool>());
    EXPECT_EQ(tick["session"]["fallbacks"], 0);
    for (int k = 4; k > 0; --k) {
        tick = post(base + "/tick", Json::object(), 200);
        EXPECT_EQ(tick["frame"]["controller"], "human");
        EXPECT_EQ(tick["session"]["remaining_takeover"], k - 1);
    }
    EXPECT_EQ(tick["session"]["fallbacks"], 4);
    EXPECT_EQ(tick["session"]["controller"], "agent");
    EXPECT_EQ(get(base, 200)["events"].size(), 1u);
}

TEST_F(ServerTest, ScriptedLaneTriggerClientMatchesLibrary) {
    const auto sc = drifting_scenario();
    const auto op = OperatorModel::lane_trigger({0});
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto id = new_session(seed);
        const std::string base = "/api/v1/sessions/" + id;
        for (;;) {
            const auto snap = get(base, 200);
            if (snap["done"].get<bool>()) break;
            if (snap["controller"] == "agent" && snap["frame"]["lane"] == 0)
                post(base + "/terminate", Json::object(), 200);
            post(base + "/tick", Json::object(), 200);
        }
        const auto api_return = get(base, 200)["return"].get<double>();
        const auto lib = run_termdp(sc.env, sc.term, op, seed);
        EXPECT_NEAR(api_return, lib.discounted_return, 1e-9) << seed;
        EXPECT_TRUE(server_->session(id)->trace() == lib) << seed;
        EXPECT_FALSE(lib.events.empty());
    }
}

TEST_F(ServerTest, InterleavedSessionsWithOneSeedStayIdentical) {
    const auto a = new_session(11);
    const auto b = new_session(11);
    bool done = false;
    while (!done) {
        const auto fa = post("/api/v1/sessions/" + a + "/tick", Json::object(), 200);
        const auto fb = post("/api/v1/sessions/" + b + "/tick", Json::object(), 200);
        EXPECT_EQ(fa["frame"], fb["frame"]);
        done = fa["session"]["done"].get<bool>();
    }
    EXPECT_TRUE(server_->session(a)->trace() == server_->session(b)->trace());
    EXPECT_EQ(post("/api/v1/sessions/" + a + "/tick", Json::object(), 409)["error"]["code"], "session_finished");
}

TEST_F(ServerTest, StreamPushesFramesAndPersistsTrace) {
    const auto id = new_session(5);
    std::string body;
    auto res = client_->Get("/api/v1/sessions/" + id + "/stream",
                            [&](const char* data, std::size_t n) {
                                body.append(data, n);
                                return true;
                            });
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    const auto trace = server_->session(id)->trace();
    std::size_t frames = 0;
    for (std::size_t pos = 0; (pos = body.find("event: frame", pos)) != std::string::npos; ++pos) ++frames;
    EXPECT_EQ(frames, trace.steps.size());
    EXPECT_NE(body.find("event: end"), std::string::npos);
    const auto first = body.find("data: ") + 6;
    const auto frame = Json::parse(body.substr(first, body.find('\n', first) - first)).get<FrameRecord>();
    EXPECT_EQ(frame, frames_of(trace).front());
    const auto saved = parse_trace(read_file((root_ / "sessions" / (id + ".trace")).string()));
    EXPECT_TRUE(saved.trace == trace);
}

TEST_F(ServerTest, QuizHidesTruthAndGradesScoredItems) {
    const auto q = get("/api/v1/quiz/quiz-test", 200);
    ASSERT_EQ(q["items"].size(), 10u);
    for (const auto& it : q["items"]) EXPECT_FALSE(it.contains("ground_truth"));
    const auto quiz = synthetic_quiz();
    Json answers = Json::array();
    for (const auto& it : quiz.items) answers.push_back(it.ground_truth.value_or(1));
    const auto g = post("/api/v1/quiz/quiz-test/answers", Json{{"answers", answers}}, 200);
    EXPECT_EQ(g["grade"], 1.0);
    EXPECT_EQ(g["correct"], 5);
    EXPECT_TRUE(g["items"][1].is_null());
    answers.erase(answers.size() - 1);
    EXPECT_EQ(post("/api/v1/quiz/quiz-test/answers", Json{{"answers", answers}}, 422)["error"]["code"],
              "wrong_answer_count");
}

TEST(ServerArtifacts, LoadsBundlesQuizzesAndScenarios) {
    const auto root = std::filesystem::temp_directory_path() / "termsum_server_artifacts";
    std::filesystem::remove_all(root);
    EnvConfig env;
    auto ds = split(collect(PolicyHandle::human(), env, 6, 2), 0.25, 2);
    ds.env = env;
    const auto b = build_summary_bundle(Candidate{{ds.train_ids[0]}, -1.0}, ds, ScoreKind::likelihood);
    write_bundle(root / "summaries" / b.id, b);
    QApprox q(NetShape{}, 3);
    std::filesystem::create_directories(root / "scenarios");
    save_checkpoint((root / "scenarios" / "agent.ckpt").string(), q, 0.95);
    write_file((root / "scenarios" / "live.cfg").string(),
               "env.spawn_density = 0.2\nterm.c = 0.1\nterm.h = 4\nagent.checkpoint = agent.ckpt\nagent.flaw_lane = 0\n");
    StudyServer server(ServerOptions{root, 4.0});
    server.load_artifacts();
    const int port = server.bind_to_any_port();
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    httplib::Client client("127.0.0.1", port);
    auto res = client.Get("/api/v1/summaries/" + b.id);
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    res = client.Post("/api/v1/sessions", R"({"scenario":"live","seed":4})", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 201);
    EXPECT_EQ(Json::parse(res->body)["h"], 4);
    server.stop();
    t.join();

    write_file((root / "scenarios" / "live.cfg").string(), "agent.checkpoint = agent.ckpt\nterm.cc = 1\n");
    StudyServer bad(ServerOptions{root, 4.0});
    EXPECT_THROW(bad.load_artifacts(), ConfigError);
}
