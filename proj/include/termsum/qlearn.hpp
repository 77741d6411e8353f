#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "termsum/chain.hpp"
#include "termsum/config.hpp"
#include "termsum/highway.hpp"
#include "termsum/parallel.hpp"
#include "termsum/qnet.hpp"

namespace termsum {

struct LearnConfig {
    double gamma = 0.95;
    double learning_rate = 1e-3;
    int replay_capacity = 20'000;
    int batch_size = 64;
    int target_sync = 250;
    double eps_start = 1.0;
    double eps_end = 0.05;
    double eps_fraction = 0.6;
    int budget = 30'000;           // online agent, gradient updates
    int ensemble_budget = 2'000;   // per offline ensemble member
    int ensemble_size = 5;
    bool bootstrap = true;
    int hidden = 32;

    void validate() const {
        if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("learn.gamma must lie in (0, 1)");
        if (budget < 0 || ensemble_budget < 0) throw ConfigError("learn budgets must be non-negative");
        if (batch_size < 1 || replay_capacity < 1 || target_sync < 1 || hidden < 1)
            throw ConfigError("learn sizes must be positive");
        if (!(eps_fraction >= 0.0 && eps_fraction <= 1.0)) throw ConfigError("learn.eps_fraction must lie in [0, 1]");
    }

    template <class Binder>
    void bind(Binder& b) {
        b.field("gamma", gamma)
            .field("learning_rate", learning_rate)
            .field("replay_capacity", replay_capacity)
            .field("batch_size", batch_size)
            .field("target_sync", target_sync)
            .field("eps_start", eps_start)
            .field("eps_end", eps_end)
            .field("eps_fraction", eps_fraction)
            .field("budget", budget)
            .field("ensemble_budget", ensemble_budget)
            .field("ensemble_size", ensemble_size)
            .field("bootstrap", bootstrap)
            .field("hidden", hidden);
    }
};

/// Linear epsilon-greedy schedule: eps_start at update 0, eps_end from
/// floor(eps_fraction * budget) onward.
inline double exploration_rate(const LearnConfig& cfg, long update, long budget) {
    const auto anneal = static_cast<long>(std::floor(cfg.eps_fraction * static_cast<double>(budget)));
    if (update >= anneal) return cfg.eps_end;
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * static_cast<double>(update) / static_cast<double>(anneal);
}

/// One learning sample. `next_action` is the action actually taken at the
/// next step, used by offline policy evaluation.
struct LearnTransition {
    FeatureVector features;
    int action = 0;
    double reward = 0.0;
    FeatureVector next_features;
    int next_action = 0;
    bool done = false;
    friend bool operator==(const LearnTransition&, const LearnTransition&) = default;
};

struct TrainLogEntry {
    long update = 0;
    double mean_return = 0.0;
    int episodes = 0;
};

struct TrainResult {
    QApprox model;
    std::vector<TrainLogEntry> log;
};

inline NetShape mlp_shape(const EnvConfig& env, const LearnConfig& learn) {
    return NetShape{ApproxKind::mlp, env.feature_dim(), learn.hidden, learn.hidden, kNumActions};
}

namespace detail {

inline void check_divergence(const QApprox& net, std::span<const double> x, long update) {
    for (const double v : net.predict(x)) {
        if (!std::isfinite(v) || std::abs(v) > 1e6) {
            std::ostringstream msg;
            msg << "Q-learning diverged at update " << update << ": |Q| = " << v << " exceeds 1e6";
            throw DivergenceError(msg.str());
        }
    }
}

/// Online Q-learning with replay and a target network. Env must expose
/// reset(seed) / step(state, action) / done(state); `features` maps a state
/// to the model input and `actions` is the number of legal actions.
template <class Env, class Featurizer>
TrainResult train_online(const Env& env, Featurizer&& features, int actions, NetShape shape, const LearnConfig& learn,
                         std::uint64_t seed) {
    learn.validate();
    TrainResult result{QApprox(shape, seed), {}};
    if (learn.budget == 0) return result;

    QApprox target = result.model;
    auto explore = make_stream(seed, "explore");
    auto sampler = make_stream(seed, "replay");
    std::vector<LearnTransition> replay;
    replay.reserve(static_cast<std::size_t>(std::min(learn.replay_capacity, learn.budget + learn.batch_size)));
    std::size_t write_pos = 0;

    std::uint64_t episode = 0;
    auto state = env.reset(derive_seed(seed, "episode", episode));
    double episode_return = 0.0;
    double window_return = 0.0;
    int window_episodes = 0;
    long updates = 0;
    std::vector<QTarget> batch(static_cast<std::size_t>(learn.batch_size));

    while (updates < learn.budget) {
        const FeatureVector x = features(state);
        int a;
        if (explore.uniform() < exploration_rate(learn, updates, learn.budget))
            a = static_cast<int>(explore.below(static_cast<std::uint64_t>(actions)));
        else
            a = result.model.greedy_action(x, actions);
        auto next = env.step(state, Env::action_of(a));
        episode_return += next.reward;
        LearnTransition tr{x, a, next.reward, features(next.state), 0, Env::done(next.state)};
        if (replay.size() < static_cast<std::size_t>(learn.replay_capacity)) {
            replay.push_back(std::move(tr));
        } else {
            replay[write_pos] = std::move(tr);
            write_pos = (write_pos + 1) % replay.size();
        }
        if (Env::done(next.state)) {
            window_return += episode_return;
            ++window_episodes;
            episode_return = 0.0;
            state = env.reset(derive_seed(seed, "episode", ++episode));
        } else {
            state = std::move(next.state);
        }

        if (replay.size() < static_cast<std::size_t>(learn.batch_size)) continue;
        for (auto& sample : batch) {
            const auto& t = replay[sampler.below(replay.size())];
            double y = t.reward;
            if (!t.done) {
                const auto q = target.predict(t.next_features);
                y += learn.gamma * *std::max_element(q.begin(), q.begin() + actions);
            }
            sample = QTarget{t.features, t.action, y};
        }
        result.model.train(batch, learn.learning_rate);
        ++updates;
        if (updates % learn.target_sync == 0) target.copy_parameters_from(result.model);
        if (updates % 1000 == 0 || updates == learn.budget) {
            detail::check_divergence(result.model, batch.front().input, updates);
            result.log.push_back({updates, window_episodes ? window_return / window_episodes : 0.0, window_episodes});
            window_return = 0.0;
            window_episodes = 0;
        }
    }
    return result;
}

struct HighwayLearnEnv : HighwayEnv {
    static Action action_of(int a) { return static_cast<Action>(a); }
};

struct ChainLearnEnv : ChainEnv {
    static int action_of(int a) { return a; }
};

inline FeatureVector one_hot(int index, int size) {
    FeatureVector f(static_cast<std::size_t>(size), 0.0);
    f[static_cast<std::size_t>(index)] = 1.0;
    return f;
}

}  // namespace detail

/// Train the main agent online against the highway simulator.
inline TrainResult train_agent(const EnvConfig& env, const LearnConfig& learn, std::uint64_t seed) {
    env.validate();
    detail::HighwayLearnEnv adapter{HighwayEnv{env}};
    return detail::train_online(
        adapter, [&](const EnvState& s) { return featurize(s, env); }, kNumActions, mlp_shape(env, learn), learn, seed);
}

/// Tabular Q-learning on a chain MDP (one-hot state inputs).
inline TrainResult train_agent(const ChainMDP& mdp, const LearnConfig& learn, std::uint64_t seed, int horizon = 50) {
    mdp.validate();
    LearnConfig cfg = learn;
    cfg.gamma = mdp.gamma;
    detail::ChainLearnEnv adapter{ChainEnv{mdp, horizon}};
    const NetShape shape{ApproxKind::tabular, mdp.n_states, 0, 0, mdp.n_actions};
    return detail::train_online(
        adapter, [&](const ChainState& s) { return detail::one_hot(s.s, mdp.n_states); }, mdp.n_actions, shape, cfg,
        seed);
}

/// E independently trained approximators over one training source.
struct QEnsemble {
    std::vector<QApprox> members;
    bool bootstrap = true;
    std::string source;

    std::size_t size() const noexcept { return members.size(); }
};

struct EnsembleOptions {
    int members = 5;
    bool bootstrap = true;
    /// Every member starts from the same initialization seed.
    bool shared_member_seed = false;
    int jobs = 1;
    std::string source;
};

/// Offline fitted Q-evaluation: each member is trained only on (a bootstrap
/// resample of) the given transitions, regressing onto
/// r + gamma * Q_target(s', a') where a' is the logged next action.
/// When batch_size covers the whole replay every update uses all of it.
inline QEnsemble train_ensemble(std::span<const LearnTransition> transitions, NetShape shape, const LearnConfig& learn,
                                const EnsembleOptions& opts, std::uint64_t seed) {
    learn.validate();
    if (transitions.empty()) throw ScoreError("cannot train an ensemble on an empty transition set");
    if (opts.members < 2) throw ContractError("an ensemble needs at least two members");

    QEnsemble ens;
    ens.bootstrap = opts.bootstrap;
    ens.source = opts.source;
    ens.members.resize(static_cast<std::size_t>(opts.members));

    parallel_for(ens.members.size(), opts.jobs, [&](std::size_t m) {
        const std::uint64_t member_index = opts.shared_member_seed ? 0 : m;
        const std::uint64_t member_seed = derive_seed(seed, "member", member_index);
        QApprox model(shape, member_seed);
        if (learn.ensemble_budget == 0) {
            ens.members[m] = std::move(model);
            return;
        }

        std::vector<const LearnTransition*> replay;
        replay.reserve(transitions.size());
        if (opts.bootstrap) {
            auto rng = make_stream(member_seed, "bootstrap");
            for (std::size_t i = 0; i < transitions.size(); ++i) replay.push_back(&transitions[rng.below(transitions.size())]);
        } else {
            for (const auto& t : transitions) replay.push_back(&t);
        }

        QApprox target = model;
        auto sampler = make_stream(member_seed, "replay");
        const bool full_batch = static_cast<std::size_t>(learn.batch_size) >= replay.size();
        std::vector<QTarget> batch(full_batch ? replay.size() : static_cast<std::size_t>(learn.batch_size));
        for (long u = 1; u <= learn.ensemble_budget; ++u) {
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const LearnTransition& t = *replay[full_batch ? i : sampler.below(replay.size())];
                double y = t.reward;
                if (!t.done) y += learn.gamma * target.value(t.next_features, t.next_action);
                batch[i] = QTarget{t.features, t.action, y};
            }
            model.train(batch, learn.learning_rate);
            if (u % learn.target_sync == 0) target.copy_parameters_from(model);
            if (u % 500 == 0 || u == learn.ensemble_budget) detail::check_divergence(model, batch.front().input, u);
        }
        ens.members[m] = std::move(model);
    });
    return ens;
}

struct MeanVariance {
    double mean = 0.0;
    double variance = 0.0;
};

/// Mean and population variance (divide by n).
inline MeanVariance mean_variance(std::span<const double> values) {
    MeanVariance mv;
    if (values.empty()) return mv;
    const double n = static_cast<double>(values.size());
    mv.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (const double v : values) ss += (v - mv.mean) * (v - mv.mean);
    mv.variance = ss / n;
    return mv;
}

inline MeanVariance ensemble_stats(const QEnsemble& ens, std::span<const double> features, int action) {
    std::vector<double> values;
    values.reserve(ens.size());
    for (const auto& m : ens.members) values.push_back(m.value(features, action));
    return mean_variance(values);
}

}  // namespace termsum
