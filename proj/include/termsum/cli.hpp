#pragma once

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "termsum/evolve.hpp"
#include "termsum/scenario.hpp"
#include "termsum/server.hpp"
#include "termsum/study.hpp"

#ifndef TERMSUM_GIT_DESCRIBE
#define TERMSUM_GIT_DESCRIBE "unknown"
#endif

namespace termsum::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Score-related keys of the shared config file.
struct ScoreFileConfig {
    double eps_var = 1e-8;
    double eps_p = 1e-3;
    bool all_transitions = false;
    int classifier_iterations = 300;
    double classifier_l2 = 1e-3;
    double classifier_step = 0.3;

    template <class Binder>
    void bind(Binder& b) {
        b.field("eps_var", eps_var)
            .field("eps_p", eps_p)
            .field("all_transitions", all_transitions)
            .field("classifier_iterations", classifier_iterations)
            .field("classifier_l2", classifier_l2)
            .field("classifier_step", classifier_step);
    }

    ScoreSettings settings(int jobs) const {
        ScoreSettings s;
        s.eps_var = eps_var;
        s.eps_p = eps_p;
        s.all_transitions = all_transitions;
        s.jobs = jobs;
        s.classifier.prob_floor = eps_p;
        s.classifier.iterations = classifier_iterations;
        s.classifier.l2 = classifier_l2;
        s.classifier.step_size = classifier_step;
        return s;
    }
};

/// Every section of the shared config file, after flag overrides.
struct RunConfig {
    EnvConfig env;
    LearnConfig learn;
    GAConfig ga;
    TermConfig term;
    AgentSpec agent;
    ScoreFileConfig score;
    KeyValueConfig raw;
};

/// Config file keys plus `--flag` overrides; unknown keys are rejected.
inline RunConfig load_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig rc;
    if (!path.empty()) rc.raw = KeyValueConfig::load(path);
    for (const auto& [k, v] : overrides) rc.raw.set(k, v);
    std::set<std::string> consumed;
    rc.env = read_section<EnvConfig>(rc.raw, "env", &consumed);
    rc.learn = read_section<LearnConfig>(rc.raw, "learn", &consumed);
    rc.ga = read_section<GAConfig>(rc.raw, "ga", &consumed);
    rc.term = read_section<TermConfig>(rc.raw, "term", &consumed);
    rc.agent = read_section<AgentSpec>(rc.raw, "agent", &consumed);
    rc.score = read_section<ScoreFileConfig>(rc.raw, "score", &consumed);
    reject_unknown_keys(rc.raw, consumed);
    rc.env.validate();
    rc.learn.validate();
    return rc;
}

/// Relative paths resolve under $TERMSUM_ARTIFACT_ROOT when it is set.
inline fs::path resolve(const std::string& path) {
    fs::path p(path);
    if (p.is_relative()) {
        if (const char* root = std::getenv("TERMSUM_ARTIFACT_ROOT"); root && *root) return fs::path(root) / p;
    }
    return p;
}

inline std::string artifact_id(const std::string& content) { return hex64(fnv1a(content)); }

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

/// Provenance of one command run. The id depends only on the command, the
/// effective config, the seed and the input contents, so reruns embed the
/// same id; timestamps live only in the manifest file.
class RunManifest {
public:
    RunManifest(std::string command, const KeyValueConfig& cfg, std::optional<std::uint64_t> seed)
        : command_(std::move(command)), config_(cfg.to_string()), seed_(seed), started_(utc_now()) {}

    void add_input(const std::string& path, const std::string& content) {
        inputs_.push_back({path, artifact_id(content)});
    }
    void add_parameter(const std::string& key, const std::string& value) { params_.push_back({key, value}); }

    std::string id() const {
        std::string key = command_ + "\n" + config_ + "\n" + (seed_ ? std::to_string(*seed_) : "-");
        for (const auto& [k, v] : params_) key += "\n" + k + "=" + v;
        for (const auto& in : inputs_) key += "\n" + in.second;
        return "run-" + hex64(fnv1a(key));
    }

    /// Writes `content` and records it as an output.
    void write_output(const fs::path& path, const std::string& content) {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        write_file(path.string(), content);
        outputs_.push_back({path.string(), artifact_id(content)});
    }
    void record_output(const fs::path& path, const std::string& id) { outputs_.push_back({path.string(), id}); }

    void save(const fs::path& path) const {
        Json j{{"format", "termsum-manifest"},
               {"version", 1},
               {"id", id()},
               {"command", command_},
               {"config", config_},
               {"seed", seed_ ? Json(*seed_) : Json(nullptr)},
               {"git", TERMSUM_GIT_DESCRIBE},
               {"started", started_},
               {"finished", utc_now()}};
        Json params = Json::object();
        for (const auto& [k, v] : params_) params[k] = v;
        j["parameters"] = params;
        for (const auto* list : {&inputs_, &outputs_}) {
            Json arr = Json::array();
            for (const auto& [p, id] : *list) arr.push_back(Json{{"path", p}, {"id", id}});
            j[list == &inputs_ ? "inputs" : "outputs"] = arr;
        }
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        write_file(path.string(), j.dump(2) + "\n");
    }

private:
    std::string command_;
    std::string config_;
    std::optional<std::uint64_t> seed_;
    std::string started_;
    std::vector<std::pair<std::string, std::string>> params_;
    std::vector<std::pair<std::string, std::string>> inputs_;
    std::vector<std::pair<std::string, std::string>> outputs_;
};

inline fs::path manifest_path(const fs::path& primary) {
    return primary.string() + ".manifest.json";
}

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<double> parse_number_list(const std::string& text) {
    std::vector<double> out;
    std::istringstream in(text);
    for (std::string tok; std::getline(in, tok, ',');) {
        std::size_t used = 0;
        try {
            out.push_back(std::stod(tok, &used));
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != tok.size()) throw ConfigError("bad number `" + tok + "` in list `" + text + "`");
    }
    if (out.empty()) throw ConfigError("empty number list");
    return out;
}

inline std::vector<int> parse_id_list(const std::string& text) {
    std::vector<int> out;
    for (const double v : parse_number_list(text)) {
        if (v != std::floor(v)) throw ConfigError("ids must be integers");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

/// Comma-separated operators; a comma followed by a digit continues a
/// lane list, so `never,lane_trigger:0,2` is two operators.
inline std::vector<OperatorModel> parse_operator_list(const std::string& text) {
    std::vector<OperatorModel> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        const bool cut = i == text.size() ||
                         (text[i] == ',' && (i + 1 == text.size() || !std::isdigit(static_cast<unsigned char>(text[i + 1]))));
        if (!cut) continue;
        if (i > start) out.push_back(parse_operator(text.substr(start, i - start)));
        start = i + 1;
    }
    return out;
}

/// Options shared by most subcommands.
struct Common {
    std::string config;
    std::uint64_t seed = 0;
    int jobs = default_jobs();
    std::string out;
    std::vector<std::pair<std::string, std::string>> overrides;
};

inline void add_common(CLI::App* sub, Common& c, bool stochastic, bool needs_out = true) {
    sub->add_option("--config", c.config, "key = value config file (env., learn., ga., term., agent., score. keys)");
    auto* seed = sub->add_option("--seed", c.seed, "master seed");
    if (stochastic) seed->required();
    sub->add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
    if (needs_out) sub->add_option("--out", c.out, "output path")->required();
}

/// Registers a flag that overrides one config key when given.
inline void add_override(CLI::App* sub, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(flag, [&c, key](const std::string& v) { c.overrides.push_back({key, v}); },
                                          help + " (overrides " + key + ")");
}

inline PolicyHandle load_agent(const RunConfig& rc, RunManifest& m) {
    const auto path = resolve(rc.agent.checkpoint);
    m.add_input(path.string(), read_file(path.string()));
    AgentSpec spec = rc.agent;
    spec.checkpoint = path.string();
    return spec.build(rc.env);
}

inline Dataset load_data(const std::string& path, RunManifest& m) {
    const auto p = resolve(path);
    const auto text = read_file(p.string());
    m.add_input(p.string(), text);
    return parse_dataset(text);
}

inline std::string train_log_table(const TrainResult& r, const std::string& manifest) {
    std::string out = "# manifest: " + manifest + "\nupdate\tepisodes\tmean_return\n";
    for (const auto& e : r.log) out += std::to_string(e.update) + "\t" + std::to_string(e.episodes) + "\t" + fmt(e.mean_return) + "\n";
    return out;
}

/// Builds the parser, runs the chosen subcommand and maps failures to exit
/// codes: 1 for invalid input, 2 for runtime failures.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"termsum: policy summaries and termination studies on a discrete highway"};
    app.name("termsum");
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(TERMSUM_GIT_DESCRIBE));

    Common c;
    std::string data, model, score_kind = "likelihood", ids, ops = "never,always,lane_trigger:0", trace_path, host = "127.0.0.1",
                      artifact_root, costs = "0,0.01,0.1,1,10", bundle_dir, low_bundle_dir;
    int episodes = 500, id = -1, port = 8080, mc = 0, budget = kQuizEpisodeBudget, horizon = 1, baseline = 0;
    double heldout = 0.2, tick_hz = 4.0;
    bool exhaustive = false, human_policy = false;

    auto* train = app.add_subcommand("train", "train the DQN driving agent and write a checkpoint");
    add_common(train, c, true);
    add_override(train, c, "--budget", "learn.budget", "gradient updates");

    auto* collect_cmd = app.add_subcommand("collect", "roll out the (flawed) agent and write a dataset");
    add_common(collect_cmd, c, true);
    collect_cmd->add_option("--model", model, "agent checkpoint (sets agent.checkpoint)");
    add_override(collect_cmd, c, "--flaw-lane", "agent.flaw_lane", "lane with the degenerate action, -1 for none");
    add_override(collect_cmd, c, "--degenerate", "agent.degenerate", "degenerate action (slower|faster)");
    collect_cmd->add_option("--episodes", episodes, "number of episodes")->check(CLI::PositiveNumber);
    collect_cmd->add_flag("--human", human_policy, "collect with the rule-based human driver instead");

    auto* split_cmd = app.add_subcommand("split", "partition a dataset into train and held-out trajectories");
    add_common(split_cmd, c, true);
    split_cmd->add_option("--data", data, "input dataset")->required();
    split_cmd->add_option("--heldout", heldout, "held-out fraction");

    auto* score_cmd = app.add_subcommand("score", "score one candidate summary or search all of them");
    add_common(score_cmd, c, true);
    score_cmd->add_option("--data", data, "split dataset")->required();
    score_cmd->add_option("--score", score_kind, "uncertainty | reconstruction | likelihood");
    add_override(score_cmd, c, "--k", "ga.k", "summary size");
    score_cmd->add_option("--ids", ids, "comma-separated trajectory ids to score");
    score_cmd->add_flag("--exhaustive", exhaustive, "score every K-subset and report the best");

    auto* evolve_cmd = app.add_subcommand("evolve", "genetic search for the best K-episode summary");
    add_common(evolve_cmd, c, true);
    evolve_cmd->add_option("--data", data, "split dataset")->required();
    evolve_cmd->add_option("--score", score_kind, "uncertainty | reconstruction | likelihood");
    add_override(evolve_cmd, c, "--k", "ga.k", "summary size");
    add_override(evolve_cmd, c, "--population", "ga.population", "population size");
    add_override(evolve_cmd, c, "--generations", "ga.generations", "generations");
    evolve_cmd->add_option("--baseline", baseline, "also score this many random K-subsets");
    evolve_cmd->add_option("--bundle", bundle_dir, "write the best summary as a bundle directory");
    evolve_cmd->add_option("--low-bundle", low_bundle_dir, "write the worst final-generation summary as a bundle");

    auto* quiz_cmd = app.add_subcommand("quiz", "generate the 10-item paired-scenario quiz");
    add_common(quiz_cmd, c, true);
    quiz_cmd->add_option("--model", model, "agent checkpoint (sets agent.checkpoint)");
    add_override(quiz_cmd, c, "--flaw-lane", "agent.flaw_lane", "lane with the degenerate action");
    quiz_cmd->add_option("--budget", budget, "rollout budget in episodes")->check(CLI::PositiveNumber);

    auto* eval_cmd = app.add_subcommand("eval-term", "compare simulated termination operators");
    add_common(eval_cmd, c, true);
    eval_cmd->add_option("--model", model, "agent checkpoint (sets agent.checkpoint)");
    add_override(eval_cmd, c, "--flaw-lane", "agent.flaw_lane", "lane with the degenerate action");
    add_override(eval_cmd, c, "--cost", "term.c", "termination cost");
    add_override(eval_cmd, c, "--horizon", "term.h", "takeover horizon");
    eval_cmd->add_option("--ops", ops, "operators: never, always, lane_trigger:<lanes>, comma-separated");
    eval_cmd->add_option("--op", ops, "single operator (alias of --ops)");
    eval_cmd->add_option("--episodes", episodes, "episodes per operator")->check(CLI::Range(2, 1'000'000));

    auto* dp_cmd = app.add_subcommand("dp-oracle", "optimal termination on the flawed 5-state chain");
    add_common(dp_cmd, c, false);
    dp_cmd->add_option("--costs", costs, "comma-separated termination costs");
    dp_cmd->add_option("--horizon", horizon, "takeover horizon")->check(CLI::PositiveNumber);
    dp_cmd->add_option("--mc", mc, "Monte-Carlo episodes per state and operator (needs --seed)");

    auto* export_cmd = app.add_subcommand("export-frames", "write frame records for a trace or a stored episode");
    add_common(export_cmd, c, false);
    export_cmd->add_option("--trace", trace_path, "takeover trace file");
    export_cmd->add_option("--data", data, "dataset file");
    export_cmd->add_option("--id", id, "trajectory id within --data");

    auto* serve_cmd = app.add_subcommand("serve", "serve summaries, live sessions and quizzes over HTTP");
    serve_cmd->add_option("--config", c.config, "key = value config file");
    serve_cmd->add_option("--port", port, "TCP port")->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--host", host, "bind address");
    serve_cmd->add_option("--artifact-root", artifact_root, "directory with summaries/, quizzes/, scenarios/");
    serve_cmd->add_option("--tick-hz", tick_hz, "frames per second on the stream endpoint")->check(CLI::PositiveNumber);

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitValidation;
    }

    auto* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();
    try {
        if (!model.empty()) c.overrides.push_back({"agent.checkpoint", model});
        const auto rc = load_config(c.config.empty() ? "" : resolve(c.config).string(), c.overrides);
        const auto* seed_opt = sub->get_option_no_throw("--seed");
        const bool seeded = seed_opt && seed_opt->count() > 0;
        RunManifest m(command, rc.raw, seeded ? std::optional<std::uint64_t>(c.seed) : std::nullopt);
        const fs::path out_path = c.out.empty() ? fs::path() : resolve(c.out);

        if (command == "train") {
            const auto result = train_agent(rc.env, rc.learn, c.seed);
            save_checkpoint(out_path.string(), result.model, rc.learn.gamma, m.id());
            m.record_output(out_path, artifact_id(read_file(out_path.string())));
            m.write_output(out_path.string() + ".log.tsv", train_log_table(result, m.id()));
            m.save(manifest_path(out_path));
            out << "trained " << result.model.shape().parameter_count() << " parameters; wrote " << out_path.string()
                << "\n";
        } else if (command == "collect") {
            const auto policy = human_policy ? PolicyHandle::human() : load_agent(rc, m);
            m.add_parameter("episodes", std::to_string(episodes));
            m.add_parameter("human", human_policy ? "1" : "0");
            Dataset ds;
            ds.env = rc.env;
            ds.policy = policy.describe();
            ds.trajectories = collect(policy, rc.env, episodes, c.seed, c.jobs);
            for (const auto& t : ds.trajectories) ds.train_ids.push_back(t.id);
            ds.seed = c.seed;
            ds.manifest = m.id();
            m.write_output(out_path, serialize_dataset(ds));
            m.save(manifest_path(out_path));
            out << "collected " << episodes << " episodes of " << ds.policy << "\n";
        } else if (command == "split") {
            const auto input = load_data(data, m);
            m.add_parameter("heldout", fmt(heldout));
            auto ds = split(input.trajectories, heldout, c.seed);
            ds.env = input.env;
            ds.policy = input.policy;
            ds.manifest = m.id();
            m.write_output(out_path, serialize_dataset(ds));
            m.save(manifest_path(out_path));
            out << "train " << ds.train_ids.size() << ", held-out " << ds.heldout_ids.size() << "\n";
        } else if (command == "score" || command == "evolve") {
            const auto ds = load_data(data, m);
            const auto kind = parse_score_kind(score_kind);
            m.add_parameter("score", score_kind);
            const auto settings = rc.score.settings(c.jobs);
            std::optional<QEnsemble> q_agent;
            if (needs_agent_ensemble(kind))
                q_agent = train_agent_ensemble(ds, rc.learn, settings, derive_seed(c.seed, "agent-ensemble", 0));
            const Scorer scorer(ds, kind, rc.learn, settings, c.seed, q_agent ? &*q_agent : nullptr);
            const auto k = static_cast<std::size_t>(rc.ga.k);

            if (command == "score") {
                m.add_parameter("ids", ids);
                m.add_parameter("exhaustive", exhaustive ? "1" : "0");
                Candidate cand;
                if (exhaustive) {
                    cand = exhaustive_search(scorer, k, c.jobs);
                } else {
                    if (ids.empty()) throw ConfigError("score needs --ids or --exhaustive");
                    cand = make_candidate(parse_id_list(ids), ds, parse_id_list(ids).size());
                }
                const auto report = scorer.report(cand);
                std::string table = "# manifest: " + m.id() + "\nscore\tvalue\tids\tterms\tskipped\n";
                table += std::string(score_name(kind)) + "\t" + fmt(report.value) + "\t" + detail::ids_text(cand.ids) +
                         "\t" + std::to_string(report.terms.size()) + "\t" + std::to_string(report.skipped) + "\n";
                m.write_output(out_path, table);
                m.save(manifest_path(out_path));
                out << table;
            } else {
                GAConfig ga = rc.ga;
                ga.seed = c.seed;
                ga.jobs = c.jobs;
                m.add_parameter("baseline", std::to_string(baseline));
                m.add_parameter("bundle", bundle_dir.empty() ? "" : "1");
                m.add_parameter("low_bundle", low_bundle_dir.empty() ? "" : "1");
                const auto trace = run_ga(scorer, ga);
                m.write_output(out_path, trace_table(trace, m.id()));
                const auto report = scorer.report(trace.best);
                Json best{{"manifest", m.id()}, {"ids", trace.best.ids}, {"report", report}};
                m.write_output(out_path.string() + ".best.json", best.dump(2) + "\n");
                if (baseline > 0) {
                    const auto rs = random_search_baseline(scorer, baseline, k, derive_seed(c.seed, "baseline", 0),
                                                           false, c.jobs);
                    std::string table = "# manifest: " + m.id() + "\nquantile\tscore\n";
                    for (std::size_t i = 0; i < kQuantileLevels.size(); ++i)
                        table += fmt(kQuantileLevels[i]) + "\t" + fmt(rs.quantiles[i]) + "\n";
                    m.write_output(out_path.string() + ".baseline.tsv", table);
                }
                const BundleProvenance prov{ds.manifest, m.id(), c.seed};
                if (!bundle_dir.empty()) {
                    const auto b = build_summary_bundle(trace.best, ds, kind, prov);
                    write_bundle(resolve(bundle_dir), b);
                    m.record_output(resolve(bundle_dir), b.id);
                }
                if (!low_bundle_dir.empty()) {
                    const auto b = build_summary_bundle(trace.populations.back().back(), ds, kind, prov);
                    write_bundle(resolve(low_bundle_dir), b);
                    m.record_output(resolve(low_bundle_dir), b.id);
                }
                m.save(manifest_path(out_path));
                const auto& g = trace.generations;
                out << "generation 0 best " << fmt(g.front().best) << ", final best " << fmt(g.back().best_so_far)
                    << " [" << detail::ids_text(trace.best.ids) << "], " << trace.evaluations << " evaluations\n";
            }
        } else if (command == "quiz") {
            const auto agent = load_agent(rc, m);
            m.add_parameter("budget", std::to_string(budget));
            const auto q = generate_quiz(agent, rc.env, c.seed, budget, c.jobs);
            write_quiz(out_path, q);
            m.record_output(out_path, q.id);
            m.save(manifest_path(out_path));
            out << "wrote quiz " << q.id << " to " << out_path.string() << "\n";
        } else if (command == "eval-term") {
            TermConfig term = rc.term;
            term.agent = load_agent(rc, m);
            term.human = PolicyHandle::human();
            term.validate();
            m.add_parameter("ops", ops);
            m.add_parameter("episodes", std::to_string(episodes));
            const auto operators = parse_operator_list(ops);
            if (operators.empty()) throw ConfigError("no operators given");
            const auto never = evaluate_operator(rc.env, term, OperatorModel::never(), episodes, c.seed, c.jobs);
            std::string table = "# manifest: " + m.id() + "\noperator\tmean\tstd\tci95\tn\tdiff_vs_never\tdiff_ci95\n";
            for (const auto& op : operators) {
                const auto s = evaluate_operator(rc.env, term, op, episodes, c.seed, c.jobs);
                table += op.describe() + "\t" + fmt(s.mean) + "\t" + fmt(s.std) + "\t" + fmt(s.ci95) + "\t" +
                         std::to_string(s.n) + "\t" + fmt(s.mean - never.mean) + "\t" + fmt(difference_ci95(s, never)) +
                         "\n";
            }
            m.write_output(out_path, table);
            m.save(manifest_path(out_path));
            out << table;
        } else if (command == "dp-oracle") {
            if (mc > 0 && !seeded) throw ConfigError("--mc needs --seed");
            m.add_parameter("costs", costs);
            m.add_parameter("horizon", std::to_string(horizon));
            m.add_parameter("mc", std::to_string(mc));
            const ChainEnv env{default_chain(), 300};
            const auto optimal = greedy_policy(chain_value_iteration(env.mdp, std::nullopt, 1e-12).Q);
            const TabularPolicy flawed{1, 1, 1, 0, 1};
            const auto agent_v = chain_value_iteration(env.mdp, flawed, 1e-12);
            std::string table = "# manifest: " + m.id() + "\nc\tstate\tv_term\tv_agent\tq_continue\tq_takeover\tterminate";
            table += mc > 0 ? "\tmc_mean\tmc_se\n" : "\n";
            for (const double cost : parse_number_list(costs)) {
                const ChainTermConfig term{cost, horizon, flawed, optimal};
                const auto sol = optimal_termination_dp(env.mdp, term);
                for (int s = 0; s < env.mdp.n_states; ++s) {
                    table += fmt(cost) + "\t" + std::to_string(s) + "\t" + fmt(sol.V[s]) + "\t" + fmt(agent_v.V[s]) +
                             "\t" + fmt(sol.q_continue[s]) + "\t" + fmt(sol.q_takeover[s]) + "\t" +
                             (sol.terminate[s] ? "1" : "0");
                    if (mc > 0) {
                        std::vector<double> r(static_cast<std::size_t>(mc));
                        const auto op = OperatorModel::oracle_table(sol.terminate);
                        parallel_for(r.size(), c.jobs, [&](std::size_t i) {
                            r[i] = run_chain_termdp(env, term, op, s, derive_seed(c.seed, "dp-mc", i)).discounted_return;
                        });
                        const auto st = summarize_returns(r);
                        table += "\t" + fmt(st.mean) + "\t" + fmt(st.std / std::sqrt(static_cast<double>(mc)));
                    }
                    table += "\n";
                }
            }
            m.write_output(out_path, table);
            m.save(manifest_path(out_path));
            out << table;
        } else if (command == "export-frames") {
            std::vector<FrameRecord> frames;
            Json meta{{"manifest", m.id()}};
            if (!trace_path.empty()) {
                const auto p = resolve(trace_path);
                const auto text = read_file(p.string());
                m.add_input(p.string(), text);
                frames = frames_of(parse_trace(text).trace);
            } else if (!data.empty() && id >= 0) {
                const auto ds = load_data(data, m);
                frames = replay_frames(ds.trajectory(id), ds.env);
                meta["episode"] = id;
            } else {
                throw ConfigError("export-frames needs --trace or --data with --id");
            }
            m.write_output(out_path, serialize_frames(frames, meta));
            m.save(manifest_path(out_path));
            out << "wrote " << frames.size() << " frames\n";
        } else if (command == "serve") {
            fs::path root = artifact_root.empty() ? resolve(".") : fs::path(artifact_root);
            StudyServer server(ServerOptions{root, tick_hz});
            server.load_artifacts();
            if (!server.bind(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
            out << "serving " << root.string() << " on http://" << host << ":" << port << "/api/v1/\n" << std::flush;
            server.listen_after_bind();
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "termsum " << command << ": invalid configuration: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ContractError& e) {
        err << "termsum " << command << ": invalid input: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "termsum " << command << ": " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace termsum::cli
