#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "termsum/chain.hpp"
#include "termsum/json_io.hpp"
#include "termsum/parallel.hpp"
#include "termsum/policy.hpp"
#include "termsum/rollout.hpp"

namespace termsum {

enum class Controller { agent, human };

inline const char* controller_name(Controller c) noexcept { return c == Controller::agent ? "agent" : "human"; }

inline Controller parse_controller(std::string_view s) {
    if (s == "agent") return Controller::agent;
    if (s == "human") return Controller::human;
    throw FormatError("unknown controller `" + std::string(s) + "`");
}

/// Termination cost c, takeover horizon h and the two highway policies.
struct TermConfig {
    double c = 0.05;
    int h = 5;
    double gamma = 0.95;
    PolicyHandle agent;
    PolicyHandle human;

    void validate() const {
        if (!(c >= 0.0) || !std::isfinite(c)) throw ConfigError("term.c must be a finite value >= 0");
        if (h < 1) throw ConfigError("term.h must be >= 1");
        if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("term.gamma must lie in (0, 1)");
    }

    template <class Binder>
    void bind(Binder& b) {
        b.field("c", c).field("h", h).field("gamma", gamma);
    }
};

/// Tabular counterpart of TermConfig; gamma comes from the MDP.
struct ChainTermConfig {
    double c = 0.0;
    int h = 1;
    TabularPolicy agent;
    TabularPolicy human;

    void validate(const ChainMDP& mdp) const {
        if (!(c >= 0.0) || !std::isfinite(c)) throw ConfigError("termination cost must be a finite value >= 0");
        if (h < 1) throw ConfigError("takeover horizon must be >= 1");
        for (const auto* pi : {&agent, &human}) {
            if (pi->size() != static_cast<std::size_t>(mdp.n_states))
                throw ContractError("tabular policy size does not match the MDP");
            for (const int a : *pi)
                if (a < 0 || a >= mdp.n_actions) throw ContractError("tabular policy action out of range");
        }
    }
};

/// Decision rule consulted while the agent is in control.
struct OperatorModel {
    enum class Kind { never, always, lane_trigger, oracle_table, scripted };
    Kind kind = Kind::never;
    std::set<int> lanes;           // lane_trigger
    std::vector<bool> table;       // oracle_table, indexed by tabular state
    std::set<int> steps;           // scripted, indexed by step

    static OperatorModel never() { return {}; }
    static OperatorModel always() { return {Kind::always, {}, {}, {}}; }
    static OperatorModel lane_trigger(std::set<int> lanes) { return {Kind::lane_trigger, std::move(lanes), {}, {}}; }
    static OperatorModel oracle_table(std::vector<bool> table) { return {Kind::oracle_table, {}, std::move(table), {}}; }
    static OperatorModel scripted(std::set<int> steps) { return {Kind::scripted, {}, {}, std::move(steps)}; }

    bool terminate(const EnvState& s) const {
        switch (kind) {
            case Kind::never: return false;
            case Kind::always: return true;
            case Kind::lane_trigger: return lanes.contains(s.ego_lane);
            case Kind::scripted: return steps.contains(s.step_index);
            case Kind::oracle_table: break;
        }
        throw ContractError("oracle_table operators apply to tabular MDPs only");
    }

    bool terminate(const ChainState& s) const {
        switch (kind) {
            case Kind::never: return false;
            case Kind::always: return true;
            case Kind::scripted: return steps.contains(s.t);
            case Kind::oracle_table:
                if (s.s < 0 || static_cast<std::size_t>(s.s) >= table.size())
                    throw ContractError("oracle table does not cover the state");
                return table[s.s];
            case Kind::lane_trigger: break;
        }
        throw ContractError("lane_trigger operators apply to the highway only");
    }

    std::string describe() const {
        switch (kind) {
            case Kind::never: return "never";
            case Kind::always: return "always";
            case Kind::lane_trigger: {
                std::string out = "lane_trigger{";
                for (const int l : lanes) out += (out.back() == '{' ? "" : ",") + std::to_string(l);
                return out + "}";
            }
            case Kind::oracle_table: return "oracle_table";
            case Kind::scripted: return "scripted";
        }
        return "?";
    }
};

/// Parses never | always | lane_trigger:0,2.
inline OperatorModel parse_operator(std::string_view text) {
    if (text == "never") return OperatorModel::never();
    if (text == "always") return OperatorModel::always();
    constexpr std::string_view prefix = "lane_trigger:";
    if (text.starts_with(prefix)) {
        std::set<int> lanes;
        std::string rest(text.substr(prefix.size()));
        std::size_t pos = 0;
        while (pos <= rest.size()) {
            const auto comma = rest.find(',', pos);
            const auto tok = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            try {
                std::size_t used = 0;
                const int lane = std::stoi(tok, &used);
                if (used != tok.size() || lane < 0) throw std::invalid_argument(tok);
                lanes.insert(lane);
            } catch (const std::exception&) {
                throw ConfigError("bad lane `" + tok + "` in operator `" + std::string(text) + "`");
            }
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        return OperatorModel::lane_trigger(std::move(lanes));
    }
    throw ConfigError("unknown operator `" + std::string(text) + "` (never, always, lane_trigger:<lanes>)");
}

template <class State>
struct TakeoverStep {
    State state;
    int action = 0;
    double reward = 0.0;
    Controller controller = Controller::agent;
    bool event = false;
};

template <class State>
struct BasicTakeoverTrace {
    std::uint64_t seed = 0;
    double gamma = 0.0;
    double c = 0.0;
    int h = 1;
    std::vector<TakeoverStep<State>> steps;
    std::vector<int> events;  // step indices
    State final_state;
    double discounted_return = 0.0;

    int human_steps() const {
        int n = 0;
        for (const auto& st : steps) n += st.controller == Controller::human;
        return n;
    }

    /// Sum of gamma^t r_t minus gamma^t_e c per event, from the raw lists.
    double recompute_return() const {
        double ret = 0.0;
        for (std::size_t t = 0; t < steps.size(); ++t) ret += std::pow(gamma, static_cast<double>(t)) * steps[t].reward;
        for (const int e : events) ret -= std::pow(gamma, static_cast<double>(e)) * c;
        return ret;
    }

    friend bool operator==(const BasicTakeoverTrace& a, const BasicTakeoverTrace& b) {
        if (a.seed != b.seed || a.gamma != b.gamma || a.c != b.c || a.h != b.h || a.events != b.events ||
            !(a.final_state == b.final_state) || a.discounted_return != b.discounted_return ||
            a.steps.size() != b.steps.size())
            return false;
        for (std::size_t i = 0; i < a.steps.size(); ++i) {
            const auto& x = a.steps[i];
            const auto& y = b.steps[i];
            if (!(x.state == y.state) || x.action != y.action || x.reward != y.reward ||
                x.controller != y.controller || x.event != y.event)
                return false;
        }
        return true;
    }
};

using TakeoverTrace = BasicTakeoverTrace<EnvState>;
using ChainTakeoverTrace = BasicTakeoverTrace<ChainState>;

inline int action_index(Action a) noexcept { return action_code(a); }
inline int action_index(int a) noexcept { return a; }

/// Generic TerMDP episode: the operator is queried only while the agent is
/// in control; a termination charges c and hands min(h, remaining) steps to
/// the human, after which the agent resumes.
template <class Env, class AgentFn, class HumanFn, class Operator>
BasicTakeoverTrace<typename Env::State> run_takeover(const Env& env, typename Env::State s, double gamma, double c,
                                                     int h, AgentFn&& agent, HumanFn&& human, const Operator& op) {
    BasicTakeoverTrace<typename Env::State> trace;
    trace.gamma = gamma;
    trace.c = c;
    trace.h = h;
    int human_left = 0;
    double discount = 1.0;
    while (!Env::done(s)) {
        const int t = static_cast<int>(trace.steps.size());
        bool event = false;
        if (human_left == 0 && op.terminate(s)) {
            event = true;
            human_left = h;
            trace.events.push_back(t);
            trace.discounted_return -= discount * c;
        }
        const Controller who = human_left > 0 ? Controller::human : Controller::agent;
        const auto a = who == Controller::human ? human(s) : agent(s);
        if (human_left > 0) --human_left;
        auto out = env.step(s, a);
        trace.discounted_return += discount * out.reward;
        discount *= gamma;
        trace.steps.push_back({std::move(s), action_index(a), out.reward, who, event});
        s = std::move(out.state);
    }
    trace.final_state = std::move(s);
    return trace;
}

/// One highway TerMDP episode from reset(env, seed).
inline TakeoverTrace run_termdp(const EnvConfig& env, const TermConfig& term, const OperatorModel& op,
                                std::uint64_t seed) {
    env.validate();
    term.validate();
    const HighwayEnv hw{env};
    auto trace = run_takeover(
        hw, hw.reset(seed), term.gamma, term.c, term.h, [&](const EnvState& s) { return term.agent.act(s, env); },
        [&](const EnvState& s) { return term.human.act(s, env); }, op);
    trace.seed = seed;
    return trace;
}

/// One chain TerMDP episode started in `start`.
inline ChainTakeoverTrace run_chain_termdp(const ChainEnv& env, const ChainTermConfig& term, const OperatorModel& op,
                                           int start, std::uint64_t seed) {
    term.validate(env.mdp);
    auto trace = run_takeover(
        env, env.reset_at(start, seed), env.mdp.gamma, term.c, term.h,
        [&](const ChainState& s) { return term.agent[s.s]; }, [&](const ChainState& s) { return term.human[s.s]; },
        op);
    trace.seed = seed;
    return trace;
}

struct ReturnStats {
    double mean = 0.0;
    double std = 0.0;   // sample standard deviation
    double ci95 = 0.0;  // half-width, 1.96 std / sqrt(n)
    std::size_t n = 0;
};

inline ReturnStats summarize_returns(std::span<const double> values) {
    if (values.size() < 2) throw ContractError("return statistics need at least two episodes");
    ReturnStats r;
    r.n = values.size();
    for (const double v : values) r.mean += v;
    r.mean /= static_cast<double>(r.n);
    double ss = 0.0;
    for (const double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(r.n - 1));
    r.ci95 = 1.96 * r.std / std::sqrt(static_cast<double>(r.n));
    return r;
}

/// Half-width of the 95% interval for the difference of two means.
inline double difference_ci95(const ReturnStats& a, const ReturnStats& b) {
    return 1.96 * std::sqrt(a.std * a.std / static_cast<double>(a.n) + b.std * b.std / static_cast<double>(b.n));
}

/// Discounted returns of n episodes, episode i seeded as in `collect`.
inline std::vector<double> operator_returns(const EnvConfig& env, const TermConfig& term, const OperatorModel& op,
                                            int n_episodes, std::uint64_t seed, int jobs = 1) {
    if (n_episodes < 2) throw ContractError("operator evaluation needs at least two episodes");
    std::vector<double> out(static_cast<std::size_t>(n_episodes));
    parallel_for(out.size(), jobs, [&](std::size_t i) {
        out[i] = run_termdp(env, term, op, derive_seed(seed, "episode", i)).discounted_return;
    });
    return out;
}

inline ReturnStats evaluate_operator(const EnvConfig& env, const TermConfig& term, const OperatorModel& op,
                                     int n_episodes, std::uint64_t seed, int jobs = 1) {
    const auto r = operator_returns(env, term, op, n_episodes, seed, jobs);
    return summarize_returns(r);
}

/// Plain discounted policy evaluation through `run_episode`.
inline ReturnStats evaluate_policy(const EnvConfig& env, const PolicyHandle& policy, double gamma, int n_episodes,
                                   std::uint64_t seed, int jobs = 1) {
    if (n_episodes < 2) throw ContractError("policy evaluation needs at least two episodes");
    std::vector<double> out(static_cast<std::size_t>(n_episodes));
    parallel_for(out.size(), jobs, [&](std::size_t i) {
        const auto traj = run_episode(policy, env, derive_seed(seed, "episode", i), static_cast<int>(i));
        double ret = 0.0;
        double discount = 1.0;
        for (const auto& st : traj.steps) {
            ret += discount * st.reward;
            discount *= gamma;
        }
        out[i] = ret;
    });
    return summarize_returns(out);
}

struct TerminationSolution {
    std::vector<double> V;
    std::vector<double> q_continue;
    std::vector<double> q_takeover;  // before the cost
    std::vector<bool> terminate;
    std::set<int> terminate_set;
    int iterations = 0;
};

/// Gain below which taking over is treated as a tie and the agent continues.
inline constexpr double kTerminationTieTolerance = 1e-9;

/// Optimal termination on a tabular MDP: V(s) = max(Q_cont(s), Q_take(s) - c)
/// where Q_take is the expected h-step human return plus gamma^h E V(s_h).
inline TerminationSolution optimal_termination_dp(const ChainMDP& mdp, const ChainTermConfig& term,
                                                  double tol = 1e-12) {
    mdp.validate();
    term.validate(mdp);
    if (!(mdp.gamma > 0.0 && mdp.gamma < 1.0)) throw ContractError("termination DP needs 0 < gamma < 1");
    const auto n = static_cast<std::size_t>(mdp.n_states);
    const double g = mdp.gamma;

    // h-step human reward R_h and transition D_h.
    std::vector<double> reward_h(n, 0.0);
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t s = 0; s < n; ++s) dist[s][s] = 1.0;
    double discount = 1.0;
    for (int k = 0; k < term.h; ++k) {
        std::vector<std::vector<double>> next(n, std::vector<double>(n, 0.0));
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t x = 0; x < n; ++x) {
                const double p = dist[s][x];
                if (p == 0.0) continue;
                const int a = term.human[x];
                reward_h[s] += discount * p * mdp.reward[x][a];
                for (std::size_t y = 0; y < n; ++y) next[s][y] += p * mdp.transition[x][a][y];
            }
        dist = std::move(next);
        discount *= g;
    }
    const double g_h = discount;

    TerminationSolution sol;
    sol.V.assign(n, 0.0);
    sol.q_continue.assign(n, 0.0);
    sol.q_takeover.assign(n, 0.0);
    sol.terminate.assign(n, false);
    auto backup = [&](const std::vector<double>& V) {
        for (std::size_t s = 0; s < n; ++s) {
            const int a = term.agent[s];
            double qc = mdp.reward[s][a];
            double qt = reward_h[s];
            for (std::size_t y = 0; y < n; ++y) {
                qc += g * mdp.transition[s][a][y] * V[y];
                qt += g_h * dist[s][y] * V[y];
            }
            sol.q_continue[s] = qc;
            sol.q_takeover[s] = qt;
            sol.terminate[s] = qt - term.c - qc > kTerminationTieTolerance;
        }
    };
    for (;;) {
        backup(sol.V);
        ++sol.iterations;
        double residual = 0.0;
        std::vector<double> next(n);
        for (std::size_t s = 0; s < n; ++s) {
            next[s] = std::max(sol.q_continue[s], sol.q_takeover[s] - term.c);
            residual = std::max(residual, std::abs(next[s] - sol.V[s]));
        }
        sol.V = std::move(next);
        if (residual <= tol) break;
        if (sol.iterations > 1'000'000) throw DivergenceError("termination DP did not converge");
    }
    backup(sol.V);
    for (std::size_t s = 0; s < n; ++s)
        if (sol.terminate[s]) sol.terminate_set.insert(static_cast<int>(s));
    return sol;
}

// --- trace files -----------------------------------------------------------

inline constexpr int kTraceVersion = 1;

inline std::string serialize_trace(const TakeoverTrace& tr, const EnvConfig& env, const std::string& manifest = {}) {
    Json header{{"format", "termsum-takeover"},
                {"version", kTraceVersion},
                {"env", env},
                {"seed", tr.seed},
                {"gamma", tr.gamma},
                {"c", tr.c},
                {"h", tr.h},
                {"events", tr.events},
                {"return", tr.discounted_return},
                {"manifest", manifest}};
    std::string payload = dump_line(header) + "\n";
    for (const auto& st : tr.steps)
        payload += dump_line(Json{{"state", st.state},
                                  {"action", st.action},
                                  {"reward", st.reward},
                                  {"controller", controller_name(st.controller)},
                                  {"event", st.event}}) +
                   "\n";
    payload += dump_line(Json{{"final_state", tr.final_state}}) + "\n";
    return seal_lines(payload, tr.steps.size() + 2);
}

struct LoadedTrace {
    TakeoverTrace trace;
    EnvConfig env;
    std::string manifest;
};

inline LoadedTrace parse_trace(const std::string& text) {
    const auto lines = unseal_lines(text, "takeover trace", kTraceVersion);
    try {
        LoadedTrace out;
        const Json header = Json::parse(lines.front());
        if (header.at("format") != "termsum-takeover") throw FormatError("not a takeover trace");
        out.env = header.at("env").get<EnvConfig>();
        out.manifest = header.value("manifest", "");
        auto& tr = out.trace;
        tr.seed = header.at("seed").get<std::uint64_t>();
        tr.gamma = header.at("gamma").get<double>();
        tr.c = header.at("c").get<double>();
        tr.h = header.at("h").get<int>();
        tr.events = header.at("events").get<std::vector<int>>();
        tr.discounted_return = header.at("return").get<double>();
        if (lines.size() < 2) throw TruncationError("takeover trace has no final state");
        for (std::size_t i = 1; i + 1 < lines.size(); ++i) {
            const Json j = Json::parse(lines[i]);
            tr.steps.push_back({j.at("state").get<EnvState>(), j.at("action").get<int>(), j.at("reward").get<double>(),
                                parse_controller(j.at("controller").get<std::string>()), j.at("event").get<bool>()});
        }
        tr.final_state = Json::parse(lines.back()).at("final_state").get<EnvState>();
        return out;
    } catch (const Json::exception& e) {
        throw FormatError(std::string("malformed takeover trace: ") + e.what());
    }
}

}  // namespace termsum
