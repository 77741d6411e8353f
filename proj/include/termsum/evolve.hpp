#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "termsum/parallel.hpp"
#include "termsum/summaries.hpp"

namespace termsum {

struct GAConfig {
    int population = 40;
    int generations = 60;
    int elite = 6;
    int immigrants = 6;
    int parent_pool = 12;
    int k = 5;
    std::uint64_t seed = 0;
    int jobs = 1;

    int offspring() const noexcept { return population - elite - immigrants; }

    void validate(std::size_t pool_size) const {
        if (population < 1 || generations < 1) throw ConfigError("ga.population and ga.generations must be >= 1");
        if (elite < 0 || immigrants < 0 || elite + immigrants > population)
            throw ConfigError("ga.elite + ga.immigrants must not exceed ga.population");
        if (parent_pool < 2 || parent_pool > population) throw ConfigError("ga.parent_pool must lie in [2, population]");
        if (k < 1 || static_cast<std::size_t>(k) > pool_size) throw ConfigError("ga.k must lie in [1, |D|]");
    }

    template <class Binder>
    void bind(Binder& b) {
        b.field("population", population)
            .field("generations", generations)
            .field("elite", elite)
            .field("immigrants", immigrants)
            .field("parent_pool", parent_pool)
            .field("k", k);
    }
};

struct GenerationRecord {
    int generation = 0;
    double best = 0.0;          // best member of this generation
    double mean = 0.0;
    double best_so_far = 0.0;
    std::vector<int> best_ids;
};

struct GATrace {
    ScoreKind kind = ScoreKind::likelihood;
    std::vector<GenerationRecord> generations;
    Candidate best;
    std::size_t evaluations = 0;
    /// Every population, kept for invariant checks.
    std::vector<std::vector<Candidate>> populations;
};

/// C(n, k), saturating at `cap` + 1.
inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k, std::uint64_t cap = ~0ULL >> 1) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    std::uint64_t r = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        r = r * (n - k + i) / i;
        if (r > cap) return cap + 1;
    }
    return r;
}

/// All k-subsets of `pool` (sorted) in lexicographic order.
inline std::vector<std::vector<int>> all_subsets(std::vector<int> pool, std::size_t k) {
    std::sort(pool.begin(), pool.end());
    std::vector<std::vector<int>> out;
    if (k > pool.size()) return out;
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), 0);
    for (;;) {
        std::vector<int> subset(k);
        for (std::size_t i = 0; i < k; ++i) subset[i] = pool[idx[i]];
        out.push_back(std::move(subset));
        std::size_t i = k;
        while (i > 0 && idx[i - 1] == pool.size() - k + (i - 1)) --i;
        if (i == 0) break;
        ++idx[i - 1];
        for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
    return out;
}

/// Uniform K-subset of `pool` (partial Fisher-Yates), sorted.
inline std::vector<int> random_subset(std::vector<int> pool, std::size_t k, SplitMix64& rng) {
    if (k > pool.size()) throw ContractError("K exceeds the pool size");
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

/// Child = K ids drawn uniformly without replacement from the union of the
/// parents; when the union is smaller than K the rest is drawn from
/// pool \ union.
inline Candidate crossover(const Candidate& a, const Candidate& b, std::size_t k, std::span<const int> pool,
                           SplitMix64& rng) {
    if (k > pool.size()) throw ContractError("K exceeds the pool size");
    std::vector<int> uni;
    std::set_union(a.ids.begin(), a.ids.end(), b.ids.begin(), b.ids.end(), std::back_inserter(uni));
    if (uni.size() >= k) return Candidate{random_subset(std::move(uni), k, rng), std::nullopt};
    std::vector<int> rest;
    for (const int id : pool)
        if (!std::binary_search(uni.begin(), uni.end(), id)) rest.push_back(id);
    auto fill = random_subset(std::move(rest), k - uni.size(), rng);
    uni.insert(uni.end(), fill.begin(), fill.end());
    std::sort(uni.begin(), uni.end());
    return Candidate{std::move(uni), std::nullopt};
}

namespace detail {

inline void score_all(const Scorer& scorer, std::vector<Candidate>& population, int jobs) {
    std::vector<std::size_t> todo;
    std::set<std::vector<int>> queued;
    for (std::size_t i = 0; i < population.size(); ++i)
        if (!scorer.cached(population[i].ids) && queued.insert(population[i].ids).second) todo.push_back(i);
    parallel_for(todo.size(), jobs, [&](std::size_t t) {
        const auto& cand = population[todo[t]];
        try {
            scorer.report(cand);
        } catch (const Error& e) {
            throw ScoreError("scoring candidate [" + ids_text(cand.ids) + "] failed: " + e.what());
        }
    });
    for (auto& c : population) c.score = scorer.score(c);
}

/// Best first under the kind's direction; ties broken by id tuple.
inline void rank(ScoreKind kind, std::vector<Candidate>& population) {
    std::stable_sort(population.begin(), population.end(), [&](const Candidate& x, const Candidate& y) {
        if (*x.score != *y.score) return is_better(kind, *x.score, *y.score);
        return x.ids < y.ids;
    });
}

/// Draws candidates the run has not seen yet when it can: a few random
/// attempts, then (for small search spaces) a uniform pick among the
/// unseen subsets, otherwise the last attempt is accepted as is.
class NoveltySource {
public:
    NoveltySource(const Scorer& scorer, std::span<const int> pool, std::size_t k)
        : scorer_(&scorer), pool_(pool.begin(), pool.end()), k_(k),
          small_space_(binomial(pool.size(), k, 10'000) <= 10'000) {}

    bool fresh(const std::vector<int>& ids, const std::set<std::vector<int>>& taken) const {
        return !taken.contains(ids) && !scorer_->cached(ids);
    }

    template <class Draw>
    Candidate next(Draw&& draw, const std::set<std::vector<int>>& taken, SplitMix64& rng) {
        Candidate c;
        for (int attempt = 0; attempt < 20; ++attempt) {
            c = draw();
            if (fresh(c.ids, taken)) return c;
        }
        if (small_space_) {
            if (space_.empty()) space_ = all_subsets(pool_, k_);
            std::vector<const std::vector<int>*> unseen;
            for (const auto& s : space_)
                if (fresh(s, taken)) unseen.push_back(&s);
            if (!unseen.empty()) return Candidate{*unseen[rng.below(unseen.size())], std::nullopt};
        }
        return c;
    }

private:
    const Scorer* scorer_;
    std::vector<int> pool_;
    std::size_t k_;
    bool small_space_;
    std::vector<std::vector<int>> space_;
};

}  // namespace detail

/// Genetic search over K-subsets of the training split. Generation 0 is P
/// random subsets; each later generation keeps the elite, adds fresh
/// immigrants and fills the rest with crossover children of parents drawn
/// uniformly from the top `parent_pool`. Immigrants and children avoid
/// subsets already scored in this run whenever possible.
inline GATrace run_ga(const Scorer& scorer, const GAConfig& ga) {
    const Dataset& data = scorer.data();
    ga.validate(data.train_ids.size());
    const auto k = static_cast<std::size_t>(ga.k);
    const std::span<const int> pool(data.train_ids);
    auto rng = make_stream(ga.seed, "ga");
    detail::NoveltySource novelty(scorer, pool, k);

    GATrace trace;
    trace.kind = scorer.kind();
    const auto evaluations_before = scorer.evaluations();

    std::vector<Candidate> population;
    std::set<std::vector<int>> taken;
    for (int i = 0; i < ga.population; ++i) {
        auto c = novelty.next([&] { return Candidate{random_subset({pool.begin(), pool.end()}, k, rng), std::nullopt}; },
                              taken, rng);
        taken.insert(c.ids);
        population.push_back(std::move(c));
    }

    for (int g = 0; g < ga.generations; ++g) {
        detail::score_all(scorer, population, ga.jobs);
        detail::rank(scorer.kind(), population);

        GenerationRecord rec;
        rec.generation = g;
        rec.best = *population.front().score;
        rec.best_ids = population.front().ids;
        double total = 0.0;
        for (const auto& c : population) total += *c.score;
        rec.mean = total / static_cast<double>(population.size());
        rec.best_so_far = rec.best;
        if (!trace.generations.empty() && !is_better(scorer.kind(), rec.best, trace.generations.back().best_so_far))
            rec.best_so_far = trace.generations.back().best_so_far;
        if (trace.generations.empty() || is_better(scorer.kind(), rec.best, trace.best.score.value_or(rec.best)) ||
            !trace.best.score)
            trace.best = population.front();
        trace.generations.push_back(rec);
        trace.populations.push_back(population);

        if (g + 1 == ga.generations) break;

        std::vector<Candidate> next(population.begin(), population.begin() + ga.elite);
        taken.clear();
        for (const auto& c : next) taken.insert(c.ids);
        for (int i = 0; i < ga.immigrants; ++i) {
            auto c = novelty.next(
                [&] { return Candidate{random_subset({pool.begin(), pool.end()}, k, rng), std::nullopt}; }, taken, rng);
            taken.insert(c.ids);
            next.push_back(std::move(c));
        }
        const auto parents = static_cast<std::size_t>(std::min(ga.parent_pool, static_cast<int>(population.size())));
        for (int i = 0; i < ga.offspring(); ++i) {
            auto c = novelty.next(
                [&] {
                    const auto& a = population[rng.below(parents)];
                    const auto& b = population[rng.below(parents)];
                    return crossover(a, b, k, pool, rng);
                },
                taken, rng);
            taken.insert(c.ids);
            next.push_back(std::move(c));
        }
        population = std::move(next);
    }
    trace.evaluations = scorer.evaluations() - evaluations_before;
    return trace;
}

/// Score every K-subset and return the best; ties go to the
/// lexicographically smallest id tuple.
inline Candidate exhaustive_search(const Scorer& scorer, std::size_t k, int jobs = 1) {
    const Dataset& data = scorer.data();
    if (k < 1 || k > data.train_ids.size()) throw ContractError("K must lie in [1, |D|]");
    if (binomial(data.train_ids.size(), k, 10'000) > 10'000)
        throw ContractError("exhaustive search is limited to 10000 subsets; use run_ga for this instance");
    std::vector<Candidate> all;
    for (auto& ids : all_subsets(data.train_ids, k)) all.push_back(Candidate{std::move(ids), std::nullopt});
    detail::score_all(scorer, all, jobs);
    std::size_t best = 0;
    for (std::size_t i = 1; i < all.size(); ++i)
        if (is_better(scorer.kind(), *all[i].score, *all[best].score)) best = i;
    return all[best];
}

struct RandomSearchResult {
    Candidate best;
    std::vector<double> scores;     // in sampling order
    std::vector<double> quantiles;  // at kQuantileLevels
};

inline constexpr std::array<double, 7> kQuantileLevels{0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0};

/// Linear-interpolated empirical quantile.
inline double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw ContractError("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Score n uniform K-subsets. With `dedup` the samples are distinct and
/// n >= C(|D|, K) enumerates the whole space.
inline RandomSearchResult random_search_baseline(const Scorer& scorer, int n_samples, std::size_t k, std::uint64_t seed,
                                                 bool dedup = false, int jobs = 1) {
    if (n_samples < 1) throw ContractError("random search needs at least one sample");
    const Dataset& data = scorer.data();
    auto rng = make_stream(seed, "random-search");
    std::vector<Candidate> samples;
    if (dedup && binomial(data.train_ids.size(), k, 10'000) <= static_cast<std::uint64_t>(n_samples)) {
        for (auto& ids : all_subsets(data.train_ids, k)) samples.push_back(Candidate{std::move(ids), std::nullopt});
    } else {
        std::set<std::vector<int>> seen;
        while (samples.size() < static_cast<std::size_t>(n_samples)) {
            auto ids = random_subset(data.train_ids, k, rng);
            if (dedup && !seen.insert(ids).second) continue;
            samples.push_back(Candidate{std::move(ids), std::nullopt});
        }
    }
    detail::score_all(scorer, samples, jobs);
    RandomSearchResult out;
    std::size_t best = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out.scores.push_back(*samples[i].score);
        if (is_better(scorer.kind(), *samples[i].score, *samples[best].score)) best = i;
    }
    out.best = samples[best];
    for (const double q : kQuantileLevels) out.quantiles.push_back(quantile(out.scores, q));
    return out;
}

/// Tab-separated convergence table, one row per generation.
inline std::string trace_table(const GATrace& trace, const std::string& manifest = {}) {
    std::ostringstream out;
    out.precision(17);
    if (!manifest.empty()) out << "# manifest: " << manifest << "\n";
    out << "# score: " << score_name(trace.kind) << "\n";
    out << "generation\tbest\tmean\tbest_so_far\tbest_ids\n";
    for (const auto& g : trace.generations)
        out << g.generation << '\t' << g.best << '\t' << g.mean << '\t' << g.best_so_far << '\t'
            << detail::ids_text(g.best_ids) << '\n';
    return out.str();
}

/// Inverse of trace_table (the populations are not stored).
inline GATrace parse_trace_table(const std::string& text) {
    GATrace trace;
    std::istringstream in(text);
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("# score: ", 0) == 0) {
            trace.kind = parse_score_kind(line.substr(9));
            continue;
        }
        if (line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        std::istringstream row(line);
        GenerationRecord g;
        std::string ids;
        if (!(row >> g.generation >> g.best >> g.mean >> g.best_so_far)) throw FormatError("malformed trace row");
        row >> ids;
        std::istringstream is(ids);
        for (std::string tok; std::getline(is, tok, ',');) g.best_ids.push_back(std::stoi(tok));
        trace.generations.push_back(std::move(g));
    }
    if (!trace.generations.empty()) {
        const auto& last = trace.generations.back();
        for (const auto& g : trace.generations)
            if (g.best == last.best_so_far) {
                trace.best = Candidate{g.best_ids, g.best};
                break;
            }
    }
    return trace;
}

}  // namespace termsum
