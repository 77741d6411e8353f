#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "termsum/error.hpp"
#include "termsum/highway.hpp"

namespace termsum {

struct ClassifierConfig {
    double prob_floor = 1e-3;  // epsilon_p
    double l2 = 1e-3;
    double step_size = 0.3;
    int iterations = 300;
};

struct LabeledSample {
    std::span<const double> features;
    int action = 0;
};

/// Probabilistic state -> action model. The default family is multinomial
/// logistic regression fitted by full-batch gradient descent over the
/// classes that actually occur in the training data; absent classes get
/// raw probability 0 before flooring.
class PolicyClassifier {
public:
    using Probabilities = std::array<double, kNumActions>;

    enum class Family { logistic, uniform };

    static PolicyClassifier uniform(double prob_floor = 1e-3) {
        PolicyClassifier c;
        c.family_ = Family::uniform;
        c.floor_ = prob_floor;
        c.present_.fill(true);
        return c;
    }

    static PolicyClassifier fit(std::span<const LabeledSample> data, const ClassifierConfig& cfg) {
        if (data.empty()) throw ScoreError("cannot train a classifier on an empty candidate");
        PolicyClassifier c;
        c.floor_ = cfg.prob_floor;
        c.dim_ = data.front().features.size();
        c.weights_.assign(kNumActions * (c.dim_ + 1), 0.0);
        for (const auto& s : data) c.present_[static_cast<std::size_t>(s.action)] = true;

        int n_present = 0;
        for (const bool p : c.present_) n_present += p;
        if (n_present <= 1) return c;

        const std::size_t stride = c.dim_ + 1;
        std::vector<double> grad(c.weights_.size());
        const double inv_n = 1.0 / static_cast<double>(data.size());
        for (int it = 0; it < cfg.iterations; ++it) {
            std::fill(grad.begin(), grad.end(), 0.0);
            for (const auto& s : data) {
                const auto p = c.raw(s.features);
                for (int k = 0; k < kNumActions; ++k) {
                    if (!c.present_[k]) continue;
                    const double g = (p[k] - (s.action == k ? 1.0 : 0.0)) * inv_n;
                    double* row = grad.data() + k * stride;
                    for (std::size_t d = 0; d < c.dim_; ++d) row[d] += g * s.features[d];
                    row[c.dim_] += g;
                }
            }
            for (std::size_t i = 0; i < c.weights_.size(); ++i)
                c.weights_[i] -= cfg.step_size * (grad[i] + cfg.l2 * c.weights_[i]);
        }
        return c;
    }

    /// Floored probabilities p' = (p + eps) / (1 + 5 eps); they sum to 1.
    Probabilities predict(std::span<const double> features) const {
        auto p = raw(features);
        for (auto& v : p) v = (v + floor_) / (1.0 + kNumActions * floor_);
        return p;
    }

    double log_likelihood(std::span<const double> features, Action a) const {
        return std::log(predict(features)[static_cast<std::size_t>(action_code(a))]);
    }

    double prob_floor() const noexcept { return floor_; }
    Family family() const noexcept { return family_; }

    std::string provenance() const {
        return family_ == Family::uniform ? "uniform" : "multinomial_logistic_regression";
    }

private:
    Probabilities raw(std::span<const double> x) const {
        Probabilities p{};
        if (family_ == Family::uniform) {
            p.fill(1.0 / kNumActions);
            return p;
        }
        const std::size_t stride = dim_ + 1;
        double best = -1e300;
        std::array<double, kNumActions> z{};
        for (int k = 0; k < kNumActions; ++k) {
            if (!present_[k]) continue;
            const double* w = weights_.data() + k * stride;
            double acc = w[dim_];
            for (std::size_t d = 0; d < dim_; ++d) acc += w[d] * x[d];
            z[k] = acc;
            best = std::max(best, acc);
        }
        double total = 0.0;
        for (int k = 0; k < kNumActions; ++k) {
            if (!present_[k]) continue;
            p[k] = std::exp(z[k] - best);
            total += p[k];
        }
        for (auto& v : p) v /= total;
        return p;
    }

    Family family_ = Family::logistic;
    double floor_ = 1e-3;
    std::size_t dim_ = 0;
    std::vector<double> weights_;
    std::array<bool, kNumActions> present_{};
};

}  // namespace termsum
