#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "termsum/highway.hpp"

using namespace termsum;

namespace {

EnvState empty_road_state(const EnvConfig& cfg, int lane, int speed) {
    EnvConfig c = cfg;
    c.spawn_density = 0.0;
    EnvState s = reset(c, 1);
    s.ego_lane = lane;
    s.ego_speed = speed;
    return s;
}

}  // namespace

TEST(HighwayReset, EmptyRoadPlacesEgoOnly) {
    EnvConfig cfg;
    cfg.spawn_density = 0.0;
    const EnvState s = reset(cfg, 3);
    EXPECT_TRUE(s.others.empty());
    EXPECT_EQ(s.ego_lane, cfg.lanes - 2);
    EXPECT_EQ(s.ego_pos, 0);
    EXPECT_EQ(s.ego_speed, cfg.min_speed + 1);
    EXPECT_EQ(s.step_index, 0);
    EXPECT_FALSE(s.done);
}

TEST(HighwayReset, SameSeedSameTraffic) {
    EnvConfig cfg;
    EXPECT_EQ(reset(cfg, 7).others, reset(cfg, 7).others);
}

TEST(HighwayReset, SeedsGiveDistinctSpawnSets) {
    EnvConfig cfg;
    EXPECT_NE(reset(cfg, 7).others, reset(cfg, 8).others);
    std::set<std::vector<std::tuple<int, long, int>>> distinct;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::vector<std::tuple<int, long, int>> key;
        for (const auto& v : reset(cfg, seed).others) key.emplace_back(v.lane, v.pos, v.speed);
        distinct.insert(key);
    }
    EXPECT_GE(distinct.size(), 95u);
}

TEST(HighwayReset, SpawnedTrafficRespectsBounds) {
    EnvConfig cfg;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto s = reset(cfg, seed);
        std::set<std::pair<int, long>> cells{{s.ego_lane, s.ego_pos}};
        for (const auto& v : s.others) {
            EXPECT_GT(v.pos, 0);
            EXPECT_LE(v.pos, cfg.view_window);
            EXPECT_GE(v.speed, cfg.min_speed);
            EXPECT_LE(v.speed, cfg.max_speed - 1);
            EXPECT_TRUE(cells.insert({v.lane, v.pos}).second);
        }
    }
}

TEST(HighwayConfig, RejectsInvalidValues) {
    EnvConfig cfg;
    cfg.lanes = 1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.min_speed = 4;
    cfg.max_speed = 3;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.spawn_density = 1.5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.episode_len = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(HighwayStep, EmptyRoadIdleReward) {
    EnvConfig cfg;
    const auto out = step(cfg, empty_road_state(cfg, 2, 3), Action::idle);
    EXPECT_NEAR(out.reward, 0.4 * (2.0 / 4.0) + 0.1 * (2.0 / 3.0), 1e-12);
    EXPECT_NEAR(out.reward, 0.2667, 1e-4);
    EXPECT_FALSE(out.state.crashed);
    EXPECT_EQ(out.state.ego_pos, 3);
}

TEST(HighwayStep, LaneChangeClampsAtEdges) {
    EnvConfig cfg;
    EXPECT_EQ(step(cfg, empty_road_state(cfg, 0, 2), Action::lane_left).state.ego_lane, 0);
    EXPECT_EQ(step(cfg, empty_road_state(cfg, 3, 2), Action::lane_right).state.ego_lane, 3);
    EXPECT_EQ(step(cfg, empty_road_state(cfg, 1, 2), Action::lane_right).state.ego_lane, 2);
}

TEST(HighwayStep, SpeedChangeClamps) {
    EnvConfig cfg;
    EXPECT_EQ(step(cfg, empty_road_state(cfg, 1, cfg.max_speed), Action::faster).state.ego_speed, cfg.max_speed);
    EXPECT_EQ(step(cfg, empty_road_state(cfg, 1, cfg.min_speed), Action::slower).state.ego_speed, cfg.min_speed);
}

// Hand execution: ego (lane 2, pos 3, speed 3) and a car at (lane 2, pos 5,
// speed 1). After moving both sit at cell 6 -> crash.
TEST(HighwayStep, SweepCollisionEndsEpisode) {
    EnvConfig cfg;
    EnvState s = empty_road_state(cfg, 2, 3);
    s.ego_pos = 3;
    s.others = {{2, 5, 1}};
    const auto out = step(cfg, s, Action::idle);
    EXPECT_TRUE(out.state.crashed);
    EXPECT_TRUE(out.state.done);
    EXPECT_NEAR(out.reward, 0.4 * 0.5 + 0.1 * (2.0 / 3.0) - 1.0, 1e-12);
}

TEST(HighwayStep, FastEgoCannotTunnelThroughSlowCar) {
    EnvConfig cfg;
    EnvState s = empty_road_state(cfg, 1, 5);
    s.others = {{1, 2, 1}};  // ego 0->5, other 2->3: ordering flips
    EXPECT_TRUE(step(cfg, s, Action::idle).state.crashed);
}

TEST(HighwayStep, AdjacentLaneTrafficDoesNotCrash) {
    EnvConfig cfg;
    EnvState s = empty_road_state(cfg, 1, 5);
    s.others = {{2, 2, 1}};
    EXPECT_FALSE(step(cfg, s, Action::idle).state.crashed);
}

TEST(HighwayStep, SteppingFinishedEpisodeIsContractViolation) {
    EnvConfig cfg;
    EnvState s = empty_road_state(cfg, 1, 2);
    s.done = true;
    EXPECT_THROW(step(cfg, s, Action::idle), ContractError);
}

TEST(HighwayStep, EpisodeEndsAtLength) {
    EnvConfig cfg;
    cfg.spawn_density = 0.0;
    cfg.episode_len = 3;
    EnvState s = reset(cfg, 0);
    for (int i = 0; i < 3; ++i) s = step(cfg, s, Action::idle).state;
    EXPECT_TRUE(s.done);
    EXPECT_FALSE(s.crashed);
    EXPECT_EQ(s.step_index, 3);
}

TEST(HighwayStep, CrashIsIndependentOfVehicleOrder) {
    EnvConfig cfg;
    SplitMix64 rng(99);
    for (int trial = 0; trial < 300; ++trial) {
        EnvState s = empty_road_state(cfg, rng.between(0, 3), rng.between(1, 5));
        std::set<std::pair<int, long>> used{{s.ego_lane, 0}};
        for (int k = 0; k < 8; ++k) {
            Vehicle v{rng.between(0, 3), rng.between(-10, 12), rng.between(1, 4)};
            if (used.insert({v.lane, v.pos}).second) s.others.push_back(v);
        }
        const Action a = static_cast<Action>(rng.between(0, 4));
        const bool crashed = step(cfg, s, a).state.crashed;
        std::reverse(s.others.begin(), s.others.end());
        EXPECT_EQ(step(cfg, s, a).state.crashed, crashed);
        std::rotate(s.others.begin(), s.others.begin() + 3, s.others.end());
        EXPECT_EQ(step(cfg, s, a).state.crashed, crashed);
    }
}

TEST(HighwayProperties, ReplayIsDeterministicAndBounded) {
    EnvConfig cfg;
    const std::size_t slot_bound = static_cast<std::size_t>(cfg.lanes) * 2 * cfg.view_window;
    for (std::uint64_t ep = 0; ep < 100; ++ep) {
        SplitMix64 actions(ep * 31 + 5);
        std::vector<Action> script;
        for (int t = 0; t < cfg.episode_len; ++t) script.push_back(static_cast<Action>(actions.between(0, 4)));

        auto run = [&] {
            std::vector<std::pair<EnvState, double>> trace;
            EnvState s = reset(cfg, ep);
            for (const Action a : script) {
                if (s.done) break;
                auto out = step(cfg, s, a);
                trace.emplace_back(out.state, out.reward);
                s = out.state;
            }
            return trace;
        };
        const auto first = run();
        EXPECT_EQ(first, run());
        for (const auto& [s, r] : first) {
            EXPECT_GE(r, cfg.min_reward() - 1e-12);
            EXPECT_LE(r, cfg.max_reward() + 1e-12);
            EXPECT_LE(s.others.size(), slot_bound);
            EXPECT_GE(s.ego_lane, 0);
            EXPECT_LT(s.ego_lane, cfg.lanes);
            std::set<std::pair<int, long>> cells;
            for (const auto& v : s.others) EXPECT_TRUE(cells.insert({v.lane, v.pos}).second);
            if (!s.crashed) EXPECT_FALSE(cells.contains({s.ego_lane, s.ego_pos}));
            if (s.crashed) EXPECT_TRUE(s.done);
        }
    }
}

TEST(Featurize, EmptyRoad) {
    EnvConfig cfg;
    const auto f = featurize(empty_road_state(cfg, 1, 3), cfg);
    ASSERT_EQ(f.size(), static_cast<std::size_t>(cfg.feature_dim()));
    EXPECT_EQ(std::vector<double>(f.begin(), f.begin() + 4), (std::vector<double>{0, 1, 0, 0}));
    EXPECT_DOUBLE_EQ(f[4], 0.5);
    for (int lane = 0; lane < cfg.lanes; ++lane) {
        EXPECT_EQ(f[5 + 2 * lane], 1.0);
        EXPECT_EQ(f[6 + 2 * lane], 0.0);
    }
}

TEST(Featurize, GapAheadIsNormalizedByViewWindow) {
    EnvConfig cfg;
    EnvState s = empty_road_state(cfg, 2, 3);
    s.others = {{2, 10, 2}};
    const auto f = featurize(s, cfg);
    EXPECT_NEAR(f[5 + 2 * 2], 10.0 / 30.0, 1e-12);
    EXPECT_NEAR(f[6 + 2 * 2], (2.0 - 3.0) / 4.0, 1e-12);
}

TEST(Featurize, ComponentsStayInUnitBox) {
    EnvConfig cfg;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        EnvState s = reset(cfg, seed);
        SplitMix64 rng(seed);
        while (!s.done) {
            for (const double v : featurize(s, cfg)) {
                EXPECT_GE(v, -1.0);
                EXPECT_LE(v, 1.0);
            }
            s = step(cfg, s, static_cast<Action>(rng.between(0, 4))).state;
        }
    }
}
