#include <gtest/gtest.h>

#include "termsum/chain.hpp"

using namespace termsum;

namespace {

ChainMDP single_state(double r, double gamma) {
    ChainMDP m;
    m.n_states = 1;
    m.n_actions = 1;
    m.gamma = gamma;
    m.reward = {{r}};
    m.transition = {{{1.0}}};
    m.initial = {1.0};
    return m;
}

double bellman_residual(const ChainMDP& m, const ChainValues& v, const std::optional<TabularPolicy>& pi) {
    double worst = 0.0;
    for (int s = 0; s < m.n_states; ++s) {
        double best = -1e300;
        for (int a = 0; a < m.n_actions; ++a) {
            double q = m.reward[s][a];
            for (int t = 0; t < m.n_states; ++t) q += m.gamma * m.transition[s][a][t] * v.V[t];
            if (pi ? a == (*pi)[s] : true) best = std::max(best, q);
        }
        worst = std::max(worst, std::abs(best - v.V[s]));
    }
    return worst;
}

}  // namespace

TEST(ChainValueIteration, GeometricSeries) {
    const auto v = chain_value_iteration(single_state(1.0, 0.9), std::nullopt, 1e-12);
    EXPECT_NEAR(v.V[0], 10.0, 1e-10);
}

TEST(ChainValueIteration, ZeroRewardGivesZeroValue) {
    ChainMDP m;
    m.n_states = 2;
    m.n_actions = 2;
    m.gamma = 0.9;
    m.reward = {{0, 0}, {0, 0}};
    m.transition = {{{0, 1}, {1, 0}}, {{1, 0}, {0, 1}}};
    m.initial = {0.5, 0.5};
    const auto v = chain_value_iteration(m, std::nullopt, 1e-12);
    EXPECT_EQ(v.V, (std::vector<double>{0.0, 0.0}));
}

// Frozen from an independent numpy policy-iteration solve (exact linear
// system) of the default chain.
TEST(ChainValueIteration, DefaultChainOptimalValues) {
    const auto m = default_chain();
    const auto v = chain_value_iteration(m, std::nullopt, 1e-12);
    const std::vector<double> expected{5.171492777012274, 5.611977884930645, 6.515924340771919, 7.6033515839704,
                                       8.864745487143876};
    for (int s = 0; s < 5; ++s) EXPECT_NEAR(v.V[s], expected[s], 1e-10) << "state " << s;
    EXPECT_EQ(greedy_policy(v.Q), (TabularPolicy{1, 1, 1, 1, 1}));
    EXPECT_NEAR(v.Q[3][0], 6.123594261756067, 1e-10);
}

TEST(ChainValueIteration, PolicyEvaluationOfFlawedPolicy) {
    const auto m = default_chain();
    const auto v = chain_value_iteration(m, TabularPolicy{1, 1, 1, 0, 1}, 1e-12);
    const std::vector<double> expected{1.183831348346237, 1.070474591172103, 1.2744264675214616, 1.546368572554223,
                                       5.995648271209897};
    for (int s = 0; s < 5; ++s) EXPECT_NEAR(v.V[s], expected[s], 1e-10);
}

TEST(ChainValueIteration, SatisfiesBellmanFixedPoint) {
    const auto m = default_chain();
    for (const double tol : {1e-4, 1e-8, 1e-12}) {
        const auto opt = chain_value_iteration(m, std::nullopt, tol);
        EXPECT_LE(bellman_residual(m, opt, std::nullopt), tol);
        const TabularPolicy pi{0, 1, 0, 1, 0};
        const auto ev = chain_value_iteration(m, pi, tol);
        EXPECT_LE(bellman_residual(m, ev, pi), tol);
    }
}

TEST(ChainValueIteration, RejectsUndiscountedProblems) {
    EXPECT_THROW(chain_value_iteration(single_state(1.0, 1.0), std::nullopt, 1e-9), ContractError);
}

TEST(ChainMDP, ValidateCatchesBadRows) {
    auto m = default_chain();
    m.transition[2][1][0] += 0.01;
    EXPECT_THROW(m.validate(), ContractError);
}

TEST(ChainEnv, SamplesFollowTransitionTable) {
    const ChainEnv env{default_chain(), 400};
    int counts[5] = {};
    for (std::uint64_t seed = 0; seed < 20000; ++seed) ++counts[env.step(env.reset_at(2, seed), 1).state.s];
    EXPECT_NEAR(counts[3] / 20000.0, 0.8, 0.015);
    EXPECT_NEAR(counts[2] / 20000.0, 0.1, 0.01);
    EXPECT_NEAR(counts[1] / 20000.0, 0.1, 0.01);
}
