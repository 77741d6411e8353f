#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "termsum/error.hpp"
#include "termsum/rng.hpp"

namespace termsum {

/// Small tabular MDP with known dynamics, used as an analytic oracle.
struct ChainMDP {
    int n_states = 5;
    int n_actions = 2;
    std::vector<std::vector<double>> reward;                    // [s][a]
    std::vector<std::vector<std::vector<double>>> transition;   // [s][a][s']
    double gamma = 0.9;
    std::vector<double> initial;                                // rho

    void validate() const {
        if (n_states < 1 || n_actions < 1) throw ContractError("chain MDP needs at least one state and action");
        if (reward.size() != static_cast<std::size_t>(n_states) ||
            transition.size() != static_cast<std::size_t>(n_states) ||
            initial.size() != static_cast<std::size_t>(n_states))
            throw ContractError("chain MDP table sizes disagree with n_states");
        for (int s = 0; s < n_states; ++s) {
            if (reward[s].size() != static_cast<std::size_t>(n_actions) ||
                transition[s].size() != static_cast<std::size_t>(n_actions))
                throw ContractError("chain MDP table sizes disagree with n_actions");
            for (int a = 0; a < n_actions; ++a) {
                if (!std::isfinite(reward[s][a])) throw ContractError("chain MDP reward must be finite");
                double total = 0.0;
                for (const double p : transition[s][a]) {
                    if (p < 0.0) throw ContractError("negative transition probability");
                    total += p;
                }
                if (std::abs(total - 1.0) > 1e-12) throw ContractError("transition row does not sum to 1");
            }
        }
    }

    double reward_min() const {
        double m = reward[0][0];
        for (const auto& row : reward) m = std::min(m, *std::min_element(row.begin(), row.end()));
        return m;
    }
    double reward_max() const {
        double m = reward[0][0];
        for (const auto& row : reward) m = std::max(m, *std::max_element(row.begin(), row.end()));
        return m;
    }
};

using TabularPolicy = std::vector<int>;

struct ChainValues {
    std::vector<double> V;
    std::vector<std::vector<double>> Q;  // [s][a]
    int iterations = 0;
};

namespace detail {
inline double chain_backup(const ChainMDP& m, const std::vector<double>& V, int s, int a) {
    double q = m.reward[s][a];
    for (int t = 0; t < m.n_states; ++t) q += m.gamma * m.transition[s][a][t] * V[t];
    return q;
}
}  // namespace detail

/// Value iteration. With `policy` evaluates V^pi/Q^pi, otherwise V*/Q*.
/// Stops once the sup-norm Bellman residual of the returned V is <= tol.
inline ChainValues chain_value_iteration(const ChainMDP& mdp, const std::optional<TabularPolicy>& policy,
                                         double tol) {
    mdp.validate();
    if (!(mdp.gamma < 1.0) || mdp.gamma < 0.0) throw ContractError("value iteration needs 0 <= gamma < 1");
    if (policy && policy->size() != static_cast<std::size_t>(mdp.n_states))
        throw ContractError("policy size does not match the MDP");

    ChainValues out;
    out.V.assign(static_cast<std::size_t>(mdp.n_states), 0.0);
    std::vector<double> next(out.V.size());
    for (;;) {
        double residual = 0.0;
        for (int s = 0; s < mdp.n_states; ++s) {
            double v;
            if (policy) {
                v = detail::chain_backup(mdp, out.V, s, (*policy)[s]);
            } else {
                v = detail::chain_backup(mdp, out.V, s, 0);
                for (int a = 1; a < mdp.n_actions; ++a) v = std::max(v, detail::chain_backup(mdp, out.V, s, a));
            }
            next[s] = v;
            residual = std::max(residual, std::abs(v - out.V[s]));
        }
        out.V.swap(next);
        ++out.iterations;
        if (residual <= tol) break;
    }
    out.Q.assign(out.V.size(), std::vector<double>(static_cast<std::size_t>(mdp.n_actions)));
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) out.Q[s][a] = detail::chain_backup(mdp, out.V, s, a);
    return out;
}

/// Greedy policy from a Q table; lowest action index wins ties.
inline TabularPolicy greedy_policy(const std::vector<std::vector<double>>& Q) {
    TabularPolicy pi(Q.size());
    for (std::size_t s = 0; s < Q.size(); ++s)
        pi[s] = static_cast<int>(std::max_element(Q[s].begin(), Q[s].end()) - Q[s].begin());
    return pi;
}

/// Five-state slippery chain: action 0 drifts left, 1 drifts right (0.8
/// intended, 0.1 stay, 0.1 opposite). State 4 pays 1 per step, state 0
/// pays a 0.2 lure, every other step costs 0.05. gamma = 0.9, start in 0.
inline ChainMDP default_chain() {
    ChainMDP m;
    m.n_states = 5;
    m.n_actions = 2;
    m.gamma = 0.9;
    m.reward.assign(5, std::vector<double>(2, -0.05));
    m.reward[0] = {0.2, 0.2};
    m.reward[4] = {1.0, 1.0};
    m.transition.assign(5, std::vector<std::vector<double>>(2, std::vector<double>(5, 0.0)));
    for (int s = 0; s < 5; ++s) {
        for (int a = 0; a < 2; ++a) {
            const int forward = a == 0 ? std::max(0, s - 1) : std::min(4, s + 1);
            const int backward = a == 0 ? std::min(4, s + 1) : std::max(0, s - 1);
            m.transition[s][a][forward] += 0.8;
            m.transition[s][a][s] += 0.1;
            m.transition[s][a][backward] += 0.1;
        }
    }
    m.initial = {1.0, 0.0, 0.0, 0.0, 0.0};
    return m;
}

struct ChainState {
    int s = 0;
    int t = 0;
    bool done = false;
    SplitMix64 rng;
    friend bool operator==(const ChainState&, const ChainState&) = default;
};

struct ChainStep {
    ChainState state;
    double reward = 0.0;
};

/// Sampling adapter for Monte-Carlo runs on a ChainMDP. Episodes are cut
/// after `horizon` steps; choose it so gamma^horizon is negligible.
struct ChainEnv {
    using State = ChainState;
    ChainMDP mdp;
    int horizon = 400;

    State reset(std::uint64_t seed) const {
        State st;
        st.rng = make_stream(seed, "chain");
        const double u = st.rng.uniform();
        double acc = 0.0;
        st.s = mdp.n_states - 1;
        for (int s = 0; s < mdp.n_states; ++s) {
            acc += mdp.initial[s];
            if (u < acc) {
                st.s = s;
                break;
            }
        }
        return st;
    }

    State reset_at(int s, std::uint64_t seed) const {
        State st;
        st.rng = make_stream(seed, "chain");
        st.s = s;
        return st;
    }

    ChainStep step(const State& state, int action) const {
        if (state.done) throw ContractError("step called on a finished chain episode");
        ChainStep out{state, mdp.reward[state.s][action]};
        const auto& row = mdp.transition[state.s][action];
        const double u = out.state.rng.uniform();
        double acc = 0.0;
        int next = mdp.n_states - 1;
        for (int t = 0; t < mdp.n_states; ++t) {
            acc += row[t];
            if (u < acc) {
                next = t;
                break;
            }
        }
        out.state.s = next;
        out.state.t += 1;
        out.state.done = out.state.t >= horizon;
        return out;
    }

    static bool done(const State& s) noexcept { return s.done; }
};

}  // namespace termsum
