#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "termsum/classifier.hpp"
#include "termsum/json_io.hpp"
#include "termsum/qlearn.hpp"
#include "termsum/rollout.hpp"

namespace termsum {

/// Candidate-summary scoring schemes:
///  - uncertainty:    mean over held-out items of Var(Q_hat)/Var(Q_agent), minimized
///  - reconstruction: mean of (E[Q_agent] - E[Q_hat])^2, minimized
///  - likelihood:     mean held-out log P_f(a|s) of a policy classifier, maximized
enum class ScoreKind { uncertainty, reconstruction, likelihood };

enum class Direction { minimize, maximize };

constexpr Direction direction(ScoreKind k) noexcept {
    return k == ScoreKind::likelihood ? Direction::maximize : Direction::minimize;
}

/// True when `a` is strictly better than `b` for this kind.
constexpr bool is_better(ScoreKind k, double a, double b) noexcept {
    return direction(k) == Direction::maximize ? a > b : a < b;
}

constexpr std::string_view score_name(ScoreKind k) noexcept {
    switch (k) {
        case ScoreKind::uncertainty: return "uncertainty";
        case ScoreKind::reconstruction: return "reconstruction";
        case ScoreKind::likelihood: return "likelihood";
    }
    return "?";
}

inline ScoreKind parse_score_kind(std::string_view name) {
    for (const auto k : {ScoreKind::uncertainty, ScoreKind::reconstruction, ScoreKind::likelihood})
        if (score_name(k) == name) return k;
    throw ConfigError("unknown score kind `" + std::string(name) + "`");
}

constexpr bool needs_agent_ensemble(ScoreKind k) noexcept { return k != ScoreKind::likelihood; }

/// A K-subset of the training trajectories, ids kept sorted.
struct Candidate {
    std::vector<int> ids;
    std::optional<double> score;

    friend bool operator==(const Candidate& a, const Candidate& b) { return a.ids == b.ids; }
};

/// Sort and check a candidate: K distinct ids, all from D (never D~).
inline Candidate make_candidate(std::vector<int> ids, const Dataset& data, std::size_t k) {
    std::sort(ids.begin(), ids.end());
    if (ids.size() != k) throw ContractError("candidate must hold exactly K ids");
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ContractError("candidate ids must be distinct");
    for (const int id : ids)
        if (!std::binary_search(data.train_ids.begin(), data.train_ids.end(), id))
            throw ContractError("candidate id " + std::to_string(id) + " is not in the training split");
    return Candidate{std::move(ids), std::nullopt};
}

struct ScoreSettings {
    double eps_var = 1e-8;
    double eps_p = 1e-3;
    /// Score every held-out transition in the ensemble scores instead of
    /// only the first state-action pair of each held-out trajectory.
    bool all_transitions = false;
    /// Give every ensemble member one shared initialization seed.
    bool shared_member_seed = false;
    int jobs = 1;
    ClassifierConfig classifier{};
};

struct ScoreReport {
    ScoreKind kind = ScoreKind::likelihood;
    double value = 0.0;
    std::vector<double> terms;
    int skipped = 0;
    std::size_t heldout_trajectories = 0;
    std::size_t heldout_transitions = 0;
    std::string provenance;

    friend bool operator==(const ScoreReport&, const ScoreReport&) = default;
};

inline void to_json(Json& j, const ScoreReport& r) {
    j = Json{{"kind", score_name(r.kind)},
             {"value", r.value},
             {"terms", r.terms},
             {"skipped", r.skipped},
             {"heldout_trajectories", r.heldout_trajectories},
             {"heldout_transitions", r.heldout_transitions},
             {"provenance", r.provenance}};
}

inline void from_json(const Json& j, ScoreReport& r) {
    r.kind = parse_score_kind(j.at("kind").get<std::string>());
    j.at("value").get_to(r.value);
    j.at("terms").get_to(r.terms);
    j.at("skipped").get_to(r.skipped);
    j.at("heldout_trajectories").get_to(r.heldout_trajectories);
    j.at("heldout_transitions").get_to(r.heldout_transitions);
    j.at("provenance").get_to(r.provenance);
}

namespace detail {

struct HeldoutItem {
    const FeatureVector* features;
    int action;
};

inline std::vector<HeldoutItem> heldout_items(const Dataset& data, bool all_transitions) {
    std::vector<HeldoutItem> items;
    for (const int id : data.heldout_ids) {
        const auto& t = data.trajectory(id);
        if (t.steps.empty()) continue;
        const std::size_t n = all_transitions ? t.steps.size() : 1;
        for (std::size_t i = 0; i < n; ++i) items.push_back({&t.steps[i].features, action_code(t.steps[i].action)});
    }
    return items;
}

inline std::size_t heldout_transition_count(const Dataset& data) {
    std::size_t n = 0;
    for (const int id : data.heldout_ids) n += data.trajectory(id).size();
    return n;
}

inline std::string ids_text(std::span<const int> ids) {
    std::string s;
    for (const int id : ids) s += (s.empty() ? "" : ",") + std::to_string(id);
    return s;
}

inline void check_bounds(const ScoreReport& r, double eps_p) {
    bool ok = std::isfinite(r.value);
    if (r.kind != ScoreKind::likelihood) {
        ok = ok && r.value >= 0.0;
    } else {
        const double lo = std::log(eps_p / (1.0 + kNumActions * eps_p));
        const double hi = std::log((1.0 + eps_p) / (1.0 + kNumActions * eps_p));
        ok = ok && r.value >= lo - 1e-12 && r.value <= hi + 1e-12;
    }
    if (!ok) throw ScoreError(std::string(score_name(r.kind)) + " score out of bounds: " + std::to_string(r.value));
}

}  // namespace detail

/// Variance-ratio score from two trained ensembles. Items whose agent
/// variance is below eps_var are skipped and counted.
inline ScoreReport score_uncertainty(const QEnsemble& q_hat, const QEnsemble& q_agent, const Dataset& data,
                                     const ScoreSettings& settings = {}) {
    ScoreReport r;
    r.kind = ScoreKind::uncertainty;
    r.heldout_trajectories = data.heldout_ids.size();
    r.heldout_transitions = detail::heldout_transition_count(data);
    r.provenance = "q_hat=" + q_hat.source + ";q_agent=" + q_agent.source;
    double total = 0.0;
    for (const auto& item : detail::heldout_items(data, settings.all_transitions)) {
        const double den = ensemble_stats(q_agent, *item.features, item.action).variance;
        if (den < settings.eps_var) {
            ++r.skipped;
            continue;
        }
        const double ratio = ensemble_stats(q_hat, *item.features, item.action).variance / den;
        r.terms.push_back(ratio);
        total += ratio;
    }
    if (r.terms.empty()) throw ScoreError("degenerate agent-ensemble variance: every held-out item was skipped");
    r.value = total / static_cast<double>(r.terms.size());
    detail::check_bounds(r, settings.eps_p);
    return r;
}

/// Squared gap between ensemble means, averaged over held-out items.
inline ScoreReport score_reconstruction(const QEnsemble& q_hat, const QEnsemble& q_agent, const Dataset& data,
                                        const ScoreSettings& settings = {}) {
    ScoreReport r;
    r.kind = ScoreKind::reconstruction;
    r.heldout_trajectories = data.heldout_ids.size();
    r.heldout_transitions = detail::heldout_transition_count(data);
    r.provenance = "q_hat=" + q_hat.source + ";q_agent=" + q_agent.source;
    double total = 0.0;
    for (const auto& item : detail::heldout_items(data, settings.all_transitions)) {
        const double gap = ensemble_stats(q_agent, *item.features, item.action).mean -
                           ensemble_stats(q_hat, *item.features, item.action).mean;
        r.terms.push_back(gap * gap);
        total += gap * gap;
    }
    if (r.terms.empty()) throw ScoreError("reconstruction score needs a non-empty held-out set");
    r.value = total / static_cast<double>(r.terms.size());
    detail::check_bounds(r, settings.eps_p);
    return r;
}

/// Mean held-out log-likelihood of a classifier over every held-out
/// transition; the normalizer counts transitions.
inline ScoreReport score_likelihood(const PolicyClassifier& f, const Dataset& data,
                                    const ScoreSettings& settings = {}) {
    ScoreReport r;
    r.kind = ScoreKind::likelihood;
    r.heldout_trajectories = data.heldout_ids.size();
    r.provenance = "classifier=" + f.provenance();
    double total = 0.0;
    for (const auto& item : detail::heldout_items(data, true)) {
        const double ll = f.log_likelihood(*item.features, static_cast<Action>(item.action));
        r.terms.push_back(ll);
        total += ll;
    }
    r.heldout_transitions = r.terms.size();
    if (r.terms.empty()) throw ScoreError("likelihood score needs a non-empty held-out set");
    r.value = total / static_cast<double>(r.terms.size());
    detail::check_bounds(r, f.prob_floor());
    return r;
}

inline EnsembleOptions ensemble_options(const LearnConfig& learn, const ScoreSettings& settings, std::string source) {
    EnsembleOptions opts;
    opts.members = learn.ensemble_size;
    opts.bootstrap = learn.bootstrap;
    opts.shared_member_seed = settings.shared_member_seed;
    opts.jobs = settings.jobs;
    opts.source = std::move(source);
    return opts;
}

/// Q_agent: the ensemble fitted offline on every training trajectory.
inline QEnsemble train_agent_ensemble(const Dataset& data, const LearnConfig& learn, const ScoreSettings& settings,
                                      std::uint64_t seed) {
    const auto transitions = transitions_of(data, data.train_ids);
    return train_ensemble(transitions, mlp_shape(data.env, learn), learn, ensemble_options(learn, settings, "D"), seed);
}

/// Q_hat_j: the ensemble fitted only on the candidate's trajectories.
inline QEnsemble train_candidate_ensemble(const Candidate& cand, const Dataset& data, const LearnConfig& learn,
                                          const ScoreSettings& settings, std::uint64_t seed) {
    if (cand.ids.empty()) throw ScoreError("empty candidate summary");
    const auto transitions = transitions_of(data, cand.ids);
    return train_ensemble(transitions, mlp_shape(data.env, learn), learn,
                          ensemble_options(learn, settings, "S[" + detail::ids_text(cand.ids) + "]"), seed);
}

/// f_j: fitted on every (features, action) pair of the candidate. The
/// logistic fit is deterministic, so `seed` only enters provenance.
inline PolicyClassifier train_classifier(const Candidate& cand, const Dataset& data, const ScoreSettings& settings,
                                         std::uint64_t /*seed*/) {
    if (cand.ids.empty()) throw ScoreError("empty candidate summary");
    std::vector<LabeledSample> samples;
    for (const int id : cand.ids)
        for (const auto& st : data.trajectory(id).steps) samples.push_back({st.features, action_code(st.action)});
    ClassifierConfig cfg = settings.classifier;
    cfg.prob_floor = settings.eps_p;
    return PolicyClassifier::fit(samples, cfg);
}

inline ScoreReport score_uncertainty(const Candidate& cand, const QEnsemble& q_agent, const Dataset& data,
                                     const LearnConfig& learn, const ScoreSettings& settings, std::uint64_t seed) {
    return score_uncertainty(train_candidate_ensemble(cand, data, learn, settings, seed), q_agent, data, settings);
}

inline ScoreReport score_reconstruction(const Candidate& cand, const QEnsemble& q_agent, const Dataset& data,
                                        const LearnConfig& learn, const ScoreSettings& settings, std::uint64_t seed) {
    return score_reconstruction(train_candidate_ensemble(cand, data, learn, settings, seed), q_agent, data, settings);
}

inline ScoreReport score_likelihood(const Candidate& cand, const Dataset& data, const ScoreSettings& settings,
                                    std::uint64_t seed) {
    if (data.heldout_ids.empty()) throw ScoreError("likelihood score needs a non-empty held-out set");
    auto r = score_likelihood(train_classifier(cand, data, settings, seed), data, settings);
    r.provenance += ";S[" + detail::ids_text(cand.ids) + "]";
    return r;
}

/// Scores candidates of one dataset under one kind and one evaluation seed,
/// caching reports by sorted id tuple. Safe to call from several threads.
class Scorer {
public:
    Scorer(const Dataset& data, ScoreKind kind, LearnConfig learn, ScoreSettings settings, std::uint64_t seed,
           const QEnsemble* q_agent = nullptr)
        : data_(&data), kind_(kind), learn_(learn), settings_(settings), seed_(seed), q_agent_(q_agent) {
        if (needs_agent_ensemble(kind) && !q_agent)
            throw ContractError(std::string(score_name(kind)) + " score needs the agent ensemble");
        if (!needs_agent_ensemble(kind) && q_agent)
            throw ContractError("likelihood score does not take an agent ensemble");
    }

    ScoreKind kind() const noexcept { return kind_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const Dataset& data() const noexcept { return *data_; }

    ScoreReport report(const Candidate& cand) const {
        {
            std::lock_guard lock(mutex_);
            if (auto it = cache_.find(cand.ids); it != cache_.end()) return it->second;
        }
        ScoreReport r;
        switch (kind_) {
            case ScoreKind::uncertainty: r = score_uncertainty(cand, *q_agent_, *data_, learn_, settings_, seed_); break;
            case ScoreKind::reconstruction:
                r = score_reconstruction(cand, *q_agent_, *data_, learn_, settings_, seed_);
                break;
            case ScoreKind::likelihood: r = score_likelihood(cand, *data_, settings_, seed_); break;
        }
        std::lock_guard lock(mutex_);
        auto [it, inserted] = cache_.emplace(cand.ids, std::move(r));
        if (inserted) ++evaluations_;
        return it->second;
    }

    double score(const Candidate& cand) const { return report(cand).value; }

    bool cached(const std::vector<int>& ids) const {
        std::lock_guard lock(mutex_);
        return cache_.contains(ids);
    }

    /// Number of distinct candidates actually evaluated.
    std::size_t evaluations() const {
        std::lock_guard lock(mutex_);
        return evaluations_;
    }

private:
    const Dataset* data_;
    ScoreKind kind_;
    LearnConfig learn_;
    ScoreSettings settings_;
    std::uint64_t seed_;
    const QEnsemble* q_agent_;
    mutable std::mutex mutex_;
    mutable std::map<std::vector<int>, ScoreReport> cache_;
    mutable std::size_t evaluations_ = 0;
};

}  // namespace termsum
