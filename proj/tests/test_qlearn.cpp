#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "termsum/policy.hpp"
#include "termsum/qlearn.hpp"
#include "termsum/rollout.hpp"

using namespace termsum;

namespace {

EnvState lane_state(int lane, int speed, std::vector<Vehicle> others = {}) {
    EnvConfig cfg;
    cfg.spawn_density = 0.0;
    EnvState s = reset(cfg, 0);
    s.ego_lane = lane;
    s.ego_speed = speed;
    s.others = std::move(others);
    return s;
}

/// Transitions of the chain with multiplicities proportional to P (every
/// probability is a multiple of 0.1), next action taken by `pi`.
std::vector<LearnTransition> chain_transitions(const ChainMDP& m, const TabularPolicy& pi) {
    std::vector<LearnTransition> out;
    for (int s = 0; s < m.n_states; ++s)
        for (int a = 0; a < m.n_actions; ++a)
            for (int t = 0; t < m.n_states; ++t) {
                const int copies = static_cast<int>(std::lround(m.transition[s][a][t] * 10));
                for (int k = 0; k < copies; ++k)
                    out.push_back({detail::one_hot(s, m.n_states), a, m.reward[s][a], detail::one_hot(t, m.n_states),
                                   pi[t], false});
            }
    return out;
}

LearnConfig tabular_eval_config() {
    LearnConfig cfg;
    cfg.gamma = 0.9;
    cfg.learning_rate = 1.0;
    cfg.batch_size = 1'000'000;
    cfg.target_sync = 1;
    cfg.ensemble_budget = 400;
    return cfg;
}

}  // namespace

TEST(ExplorationSchedule, EndpointsAtExactIndices) {
    LearnConfig cfg;
    const long budget = 30'000;
    EXPECT_DOUBLE_EQ(exploration_rate(cfg, 0, budget), 1.0);
    EXPECT_DOUBLE_EQ(exploration_rate(cfg, 18'000, budget), 0.05);
    EXPECT_DOUBLE_EQ(exploration_rate(cfg, 29'999, budget), 0.05);
    EXPECT_GT(exploration_rate(cfg, 17'999, budget), 0.05);
    EXPECT_NEAR(exploration_rate(cfg, 9'000, budget), 0.525, 1e-12);
}

TEST(MeanVariance, PopulationVariance) {
    const std::vector<double> a{1.0, 3.0};
    EXPECT_DOUBLE_EQ(mean_variance(a).mean, 2.0);
    EXPECT_DOUBLE_EQ(mean_variance(a).variance, 1.0);
    const std::vector<double> b{0, 0, 0, 0, 10};
    EXPECT_DOUBLE_EQ(mean_variance(b).mean, 2.0);
    EXPECT_DOUBLE_EQ(mean_variance(b).variance, 16.0);
}

TEST(QApprox, OutputsAreFiniteAndSeeded) {
    const NetShape shape{};
    const QApprox a(shape, 5), b(shape, 5), c(shape, 6);
    EXPECT_EQ(a, b);
    EXPECT_FALSE(a == c);
    EnvConfig cfg;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto q = a.predict(featurize(reset(cfg, seed), cfg));
        ASSERT_EQ(q.size(), 5u);
        for (const double v : q) EXPECT_TRUE(std::isfinite(v));
    }
}

TEST(QApprox, GradientStepReducesLossOnFixedBatch) {
    QApprox net(NetShape{}, 3);
    EnvConfig cfg;
    std::vector<FeatureVector> xs;
    for (std::uint64_t s = 0; s < 16; ++s) xs.push_back(featurize(reset(cfg, s), cfg));
    std::vector<QTarget> batch;
    for (std::size_t i = 0; i < xs.size(); ++i) batch.push_back({xs[i], static_cast<int>(i % 5), 0.5 + 0.1 * (i % 3)});
    const double first = net.train(batch, 1e-2);
    double last = first;
    for (int i = 0; i < 300; ++i) last = net.train(batch, 1e-2);
    EXPECT_LT(last, first * 0.1);
}

TEST(QApprox, CheckpointRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "termsum_ckpt_test.bin";
    QApprox net(NetShape{}, 11);
    save_checkpoint(path.string(), net, 0.95);
    const NetShape expected{};
    const auto cp = load_checkpoint(path.string(), &expected);
    EXPECT_EQ(cp.model, net);
    EXPECT_DOUBLE_EQ(cp.gamma, 0.95);
    NetShape other{};
    other.hidden1 = 16;
    EXPECT_THROW(load_checkpoint(path.string(), &other), FormatError);
    std::filesystem::remove(path);
}

TEST(TrainAgent, ZeroBudgetReturnsInitialNetwork) {
    EnvConfig env;
    LearnConfig learn;
    learn.budget = 0;
    const auto result = train_agent(env, learn, 42);
    EXPECT_EQ(result.model, QApprox(mlp_shape(env, learn), 42));
}

TEST(TrainAgent, TabularChainLearnsOptimalPolicy) {
    const auto m = default_chain();
    LearnConfig learn;
    learn.learning_rate = 0.1;
    learn.batch_size = 32;
    learn.target_sync = 50;
    learn.budget = 20'000;
    const auto result = train_agent(m, learn, 9);
    const auto oracle = chain_value_iteration(m, std::nullopt, 1e-12);
    for (int s = 0; s < m.n_states; ++s)
        EXPECT_EQ(result.model.greedy_action(detail::one_hot(s, m.n_states), m.n_actions), greedy_policy(oracle.Q)[s])
            << "state " << s;
}

TEST(TrainEnsemble, EmptyTransitionsRejected) {
    LearnConfig learn;
    EXPECT_THROW(train_ensemble({}, NetShape{}, learn, EnsembleOptions{}, 1), ScoreError);
}

TEST(TrainEnsemble, SharedSeedWithoutBootstrapGivesIdenticalMembers) {
    const auto m = default_chain();
    const auto data = chain_transitions(m, {1, 1, 1, 1, 1});
    LearnConfig learn = tabular_eval_config();
    learn.ensemble_budget = 50;
    EnsembleOptions opts;
    opts.members = 2;
    opts.bootstrap = false;
    opts.shared_member_seed = true;
    const auto ens = train_ensemble(data, NetShape{ApproxKind::tabular, 5, 0, 0, 2}, learn, opts, 3);
    EXPECT_EQ(ens.members[0], ens.members[1]);
    for (int s = 0; s < 5; ++s)
        for (int a = 0; a < 2; ++a) EXPECT_EQ(ensemble_stats(ens, detail::one_hot(s, 5), a).variance, 0.0);
}

TEST(TrainEnsemble, BootstrapOfSingleTransitionRepeatsIt) {
    LearnConfig learn;
    learn.gamma = 0.9;
    learn.learning_rate = 1.0;
    learn.target_sync = 1;
    learn.ensemble_budget = 200;
    const std::vector<LearnTransition> one{{detail::one_hot(0, 2), 1, 1.0, detail::one_hot(0, 2), 1, false}};
    EnsembleOptions opts;
    opts.members = 3;
    const auto ens = train_ensemble(one, NetShape{ApproxKind::tabular, 2, 0, 0, 2}, learn, opts, 4);
    // Every resample is the same self-loop, so each member converges to 1/(1-gamma).
    for (const auto& m : ens.members) EXPECT_NEAR(m.value(detail::one_hot(0, 2), 1), 10.0, 1e-6);
}

TEST(TrainEnsemble, TabularEvaluationMatchesValueIteration) {
    const auto m = default_chain();
    const TabularPolicy behavior{1, 1, 1, 0, 1};
    const auto data = chain_transitions(m, behavior);
    EnsembleOptions opts;
    opts.members = 3;
    opts.bootstrap = false;
    const auto ens = train_ensemble(data, NetShape{ApproxKind::tabular, 5, 0, 0, 2}, tabular_eval_config(), opts, 8);
    const auto oracle = chain_value_iteration(m, behavior, 1e-12);
    for (const auto& member : ens.members)
        for (int s = 0; s < 5; ++s)
            for (int a = 0; a < 2; ++a) EXPECT_NEAR(member.value(detail::one_hot(s, 5), a), oracle.Q[s][a], 1e-3);
}

TEST(TrainEnsemble, OfflineTrainingNeverStepsTheSimulator) {
    EnvConfig env;
    const auto trajs = collect(PolicyHandle::human(), env, 5, 17);
    std::vector<LearnTransition> data;
    for (const auto& t : trajs) append_transitions(t, data);
    LearnConfig learn;
    learn.ensemble_budget = 50;
    const auto before = step_call_count();
    train_ensemble(data, mlp_shape(env, learn), learn, EnsembleOptions{}, 5);
    EXPECT_EQ(step_call_count(), before);
}

TEST(TrainEnsemble, SameSeedReproducesOutputs) {
    EnvConfig env;
    const auto trajs = collect(PolicyHandle::human(), env, 4, 23);
    std::vector<LearnTransition> data;
    for (const auto& t : trajs) append_transitions(t, data);
    LearnConfig learn;
    learn.ensemble_budget = 100;
    EnsembleOptions opts;
    opts.members = 3;
    const auto a = train_ensemble(data, mlp_shape(env, learn), learn, opts, 77);
    opts.jobs = 3;
    const auto b = train_ensemble(data, mlp_shape(env, learn), learn, opts, 77);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto x = featurize(reset(env, seed), env);
        for (std::size_t m = 0; m < a.size(); ++m) EXPECT_EQ(a.members[m].predict(x), b.members[m].predict(x));
    }
}

TEST(FlawedAgent, DegenerateActionInFlawLane) {
    auto q = std::make_shared<const QApprox>(NetShape{}, 1);
    const auto flawed = make_flawed_agent(q, Action::slower, 0);
    const auto greedy = PolicyHandle::greedy(q);
    EnvConfig cfg;
    EXPECT_EQ(flawed.act(lane_state(0, 3), cfg), Action::slower);
    const auto s2 = lane_state(2, 3, {{2, 12, 1}});
    EXPECT_EQ(flawed.act(s2, cfg), greedy.act(s2, cfg));

    int slower = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        EnvState s = reset(cfg, seed);
        s.ego_lane = 0;
        s.ego_speed = 1 + static_cast<int>(seed % 5);
        slower += flawed.act(s, cfg) == Action::slower;
    }
    EXPECT_EQ(slower, 100);
}

TEST(FlawedAgent, RejectsNonSpeedDegenerateActions) {
    auto q = std::make_shared<const QApprox>(NetShape{}, 1);
    EXPECT_THROW(make_flawed_agent(q, Action::idle, 0), ContractError);
    EXPECT_THROW(make_flawed_agent(q, Action::lane_left, 0), ContractError);
    EXPECT_NO_THROW(make_flawed_agent(q, Action::faster, 0));
}

TEST(HumanPolicy, Rules) {
    EnvConfig cfg;
    EXPECT_EQ(human_policy(lane_state(1, 3), cfg), Action::faster);
    EXPECT_EQ(human_policy(lane_state(1, 5), cfg), Action::idle);
    // Car one cell ahead, both neighbours blocked.
    EXPECT_EQ(human_policy(lane_state(1, 3, {{1, 1, 1}, {0, 2, 1}, {2, 2, 1}}), cfg), Action::slower);
    // Gap 4 < 2*3; right lane clear (gap >= 9), left lane clear too: right wins.
    EXPECT_EQ(human_policy(lane_state(1, 3, {{1, 4, 2}}), cfg), Action::lane_right);
    // Only the left lane qualifies.
    EXPECT_EQ(human_policy(lane_state(1, 3, {{1, 4, 2}, {2, 5, 1}}), cfg), Action::lane_left);
    // Gap between 2*speed and 4*speed: hold.
    EXPECT_EQ(human_policy(lane_state(1, 3, {{1, 8, 3}}), cfg), Action::idle);
}

TEST(TrainAgent, BeatsRandomPolicyOnDefaultHighway) {
    EnvConfig env;
    LearnConfig learn;
    const auto result = train_agent(env, learn, 2024);
    EXPECT_FALSE(result.log.empty());
    const auto agent = PolicyHandle::greedy(std::make_shared<const QApprox>(result.model));

    double agent_total = 0.0, random_total = 0.0;
    for (std::uint64_t ep = 0; ep < 200; ++ep) {
        const auto seed = derive_seed(555, "eval", ep);
        for (const auto& st : run_episode(agent, env, seed, 0).steps) agent_total += st.reward;
        SplitMix64 rng(seed);
        EnvState s = reset(env, seed);
        while (!s.done) {
            auto out = step(env, s, static_cast<Action>(rng.between(0, 4)));
            random_total += out.reward;
            s = out.state;
        }
    }
    RecordProperty("agent_mean", std::to_string(agent_total / 200));
    RecordProperty("random_mean", std::to_string(random_total / 200));
    EXPECT_GE(agent_total / 200, 1.5 * random_total / 200);
}
