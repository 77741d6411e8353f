#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "termsum/cli.hpp"

using namespace termsum;

TEST(KeyValueConfig, ParsesCommentsAndWhitespace) {
    const auto cfg = KeyValueConfig::parse("# header\n  env.lanes = 3  # trailing\n\nlearn.gamma=0.9\n");
    EXPECT_EQ(cfg.at("env.lanes"), "3");
    EXPECT_EQ(cfg.at("learn.gamma"), "0.9");
    EXPECT_EQ(cfg.keys().size(), 2u);
    EXPECT_EQ(cfg.to_string(), "env.lanes = 3\nlearn.gamma = 0.9\n");
}

TEST(KeyValueConfig, RejectsMalformedLines) {
    EXPECT_THROW(KeyValueConfig::parse("env.lanes 3"), ConfigError);
    EXPECT_THROW(KeyValueConfig::parse("= 3"), ConfigError);
    EXPECT_THROW(KeyValueConfig::parse("a = 1\na = 2"), ConfigError);
    EXPECT_THROW(KeyValueConfig::load("/nonexistent/termsum.cfg"), ConfigError);
}

TEST(ConfigSections, ReadWriteRoundTrip) {
    KeyValueConfig cfg;
    EnvConfig env;
    env.lanes = 3;
    env.spawn_density = 0.125;
    write_section(cfg, "env", env);
    std::set<std::string> consumed;
    const auto back = read_section<EnvConfig>(cfg, "env", &consumed);
    EXPECT_EQ(back.lanes, 3);
    EXPECT_EQ(back.spawn_density, 0.125);
    EXPECT_NO_THROW(reject_unknown_keys(cfg, consumed));
    cfg.set("env.lanse", "2");
    EXPECT_THROW(reject_unknown_keys(cfg, consumed), ConfigError);
}

TEST(ConfigSections, TypedValuesAreChecked) {
    auto cfg = KeyValueConfig::parse("env.lanes = three\n");
    EXPECT_THROW(read_section<EnvConfig>(cfg, "env"), ConfigError);
    cfg = KeyValueConfig::parse("learn.bootstrap = maybe\n");
    EXPECT_THROW(read_section<LearnConfig>(cfg, "learn"), ConfigError);
    cfg = KeyValueConfig::parse("learn.gamma = 0.9x\n");
    EXPECT_THROW(read_section<LearnConfig>(cfg, "learn"), ConfigError);
    cfg = KeyValueConfig::parse("agent.degenerate = faster\nlearn.bootstrap = false\n");
    EXPECT_EQ(read_section<AgentSpec>(cfg, "agent").degenerate, "faster");
    EXPECT_FALSE(read_section<LearnConfig>(cfg, "learn").bootstrap);
}

TEST(ConfigSections, ShippedDefaultsMatchBuiltInDefaults) {
    const auto rc = cli::load_config(std::string(TERMSUM_SOURCE_DIR) + "/configs/default.cfg", {});
    const EnvConfig env;
    const LearnConfig learn;
    const GAConfig ga;
    const TermConfig term;
    EXPECT_EQ(rc.env.lanes, env.lanes);
    EXPECT_EQ(rc.env.spawn_density, env.spawn_density);
    EXPECT_EQ(rc.env.reward_collision_weight, env.reward_collision_weight);
    EXPECT_EQ(rc.learn.budget, learn.budget);
    EXPECT_EQ(rc.learn.learning_rate, learn.learning_rate);
    EXPECT_EQ(rc.learn.ensemble_size, learn.ensemble_size);
    EXPECT_EQ(rc.ga.population, ga.population);
    EXPECT_EQ(rc.ga.generations, ga.generations);
    EXPECT_EQ(rc.ga.k, ga.k);
    EXPECT_EQ(rc.term.c, term.c);
    EXPECT_EQ(rc.term.h, term.h);
    EXPECT_EQ(rc.agent.flaw_lane, AgentSpec{}.flaw_lane);
    EXPECT_EQ(rc.agent.degenerate, AgentSpec{}.degenerate);
    EXPECT_EQ(rc.score.eps_p, 1e-3);
}

TEST(ConfigSections, FlagOverridesWinOverFileKeys) {
    const auto dir = std::filesystem::temp_directory_path() / "termsum_config_test";
    std::filesystem::create_directories(dir);
    write_file((dir / "a.cfg").string(), "ga.k = 3\nterm.c = 0.5\n");
    const auto rc = cli::load_config((dir / "a.cfg").string(), {{"ga.k", "7"}});
    EXPECT_EQ(rc.ga.k, 7);
    EXPECT_EQ(rc.term.c, 0.5);
}

TEST(Rng, DerivedStreamsAreStableAndDistinct) {
    EXPECT_EQ(derive_seed(1, "episode", 0), derive_seed(1, "episode", 0));
    EXPECT_NE(derive_seed(1, "episode", 0), derive_seed(1, "episode", 1));
    EXPECT_NE(derive_seed(1, "episode", 0), derive_seed(2, "episode", 0));
    EXPECT_NE(derive_seed(1, "episode", 0), derive_seed(1, "split", 0));
    auto a = make_stream(5, "x");
    auto b = make_stream(5, "x");
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(Rng, BoundedDrawsStayInRangeAndCoverIt) {
    SplitMix64 rng(9);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const auto v = rng.below(7);
        ASSERT_LT(v, 7u);
        seen.insert(v);
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
    EXPECT_EQ(seen.size(), 7u);
}

TEST(Errors, HierarchyAndPayloads) {
    const VersionError v(3, 1);
    EXPECT_EQ(v.found(), 3);
    EXPECT_EQ(v.supported(), 1);
    EXPECT_NE(dynamic_cast<const FormatError*>(&v), nullptr);
    const TruncationError t("cut");
    EXPECT_NE(dynamic_cast<const FormatError*>(&t), nullptr);
    const BudgetError b("out of episodes", 2);
    EXPECT_EQ(b.found(), 2);
    EXPECT_NE(dynamic_cast<const Error*>(&b), nullptr);
}
