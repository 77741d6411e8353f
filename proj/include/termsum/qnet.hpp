#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "termsum/error.hpp"
#include "termsum/rng.hpp"

namespace termsum {

enum class ApproxKind : int { mlp = 0, tabular = 1 };

/// Architecture of a QApprox. For the tabular kind `inputs` is the number
/// of states (inputs are one-hot) and the hidden widths are unused.
struct NetShape {
    ApproxKind kind = ApproxKind::mlp;
    int inputs = 13;
    int hidden1 = 32;
    int hidden2 = 32;
    int outputs = 5;

    std::size_t parameter_count() const noexcept {
        if (kind == ApproxKind::tabular) return static_cast<std::size_t>(inputs) * outputs;
        return static_cast<std::size_t>(hidden1) * inputs + hidden1 + static_cast<std::size_t>(hidden2) * hidden1 +
               hidden2 + static_cast<std::size_t>(outputs) * hidden2 + outputs;
    }
    friend bool operator==(const NetShape&, const NetShape&) = default;
};

/// One sample of a regression batch: input, chosen output, target value.
struct QTarget {
    std::span<const double> input;
    int action = 0;
    double target = 0.0;
};

/// Action-value approximator: 2-hidden-layer ReLU network trained with Adam
/// on a Huber loss, or a lookup table over one-hot states.
class QApprox {
public:
    QApprox() = default;

    QApprox(NetShape shape, std::uint64_t seed) : shape_(shape), seed_(seed) {
        params_.assign(shape_.parameter_count(), 0.0);
        if (shape_.kind == ApproxKind::mlp) {
            auto rng = make_stream(seed, "learner-init");
            std::size_t off = 0;
            auto init_layer = [&](int fan_out, int fan_in) {
                const double bound = std::sqrt(6.0 / fan_in);
                for (int i = 0; i < fan_out * fan_in; ++i) params_[off++] = (2.0 * rng.uniform() - 1.0) * bound;
                off += static_cast<std::size_t>(fan_out);  // zero biases
            };
            init_layer(shape_.hidden1, shape_.inputs);
            init_layer(shape_.hidden2, shape_.hidden1);
            // Small output layer keeps early targets near zero.
            const double bound = std::sqrt(6.0 / shape_.hidden2) * 0.1;
            for (int i = 0; i < shape_.outputs * shape_.hidden2; ++i)
                params_[off++] = (2.0 * rng.uniform() - 1.0) * bound;
        }
        adam_m_.assign(params_.size(), 0.0);
        adam_v_.assign(params_.size(), 0.0);
    }

    const NetShape& shape() const noexcept { return shape_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::span<const double> parameters() const noexcept { return params_; }
    int outputs() const noexcept { return shape_.outputs; }

    /// All action values for one input.
    std::vector<double> predict(std::span<const double> x) const {
        std::vector<double> out(static_cast<std::size_t>(shape_.outputs));
        if (shape_.kind == ApproxKind::tabular) {
            const auto row = static_cast<std::size_t>(state_index(x)) * shape_.outputs;
            std::copy_n(params_.begin() + static_cast<std::ptrdiff_t>(row), shape_.outputs, out.begin());
            return out;
        }
        Scratch sc(shape_);
        forward(x, sc);
        return sc.out;
    }

    double value(std::span<const double> x, int action) const { return predict(x)[static_cast<std::size_t>(action)]; }

    double max_value(std::span<const double> x) const {
        const auto q = predict(x);
        return *std::max_element(q.begin(), q.end());
    }

    /// Index of the largest value among the first `n_actions` outputs;
    /// lowest index wins ties.
    int greedy_action(std::span<const double> x, int n_actions = -1) const {
        const auto q = predict(x);
        const auto n = n_actions < 0 ? q.size() : static_cast<std::size_t>(n_actions);
        return static_cast<int>(std::max_element(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(n)) - q.begin());
    }

    /// One optimizer step on the batch. MLP: Adam on the mean Huber loss.
    /// Tabular: each touched entry moves `lr` of the way toward the mean
    /// target of the samples that hit it. Returns the mean squared error.
    double train(std::span<const QTarget> batch, double lr) {
        if (batch.empty()) return 0.0;
        if (shape_.kind == ApproxKind::tabular) return train_tabular(batch, lr);

        std::vector<double> grad(params_.size(), 0.0);
        Scratch sc(shape_);
        double sq = 0.0;
        const int in = shape_.inputs, h1 = shape_.hidden1, h2 = shape_.hidden2, no = shape_.outputs;
        const std::size_t w1 = 0, b1 = w1 + static_cast<std::size_t>(h1) * in, w2 = b1 + h1,
                          b2 = w2 + static_cast<std::size_t>(h2) * h1, w3 = b2 + h2,
                          b3 = w3 + static_cast<std::size_t>(no) * h2;
        std::vector<double> d2(static_cast<std::size_t>(h2)), d1(static_cast<std::size_t>(h1));
        for (const auto& sample : batch) {
            forward(sample.input, sc);
            const double err = sc.out[static_cast<std::size_t>(sample.action)] - sample.target;
            sq += err * err;
            const double g = std::clamp(err, -1.0, 1.0) / static_cast<double>(batch.size());
            const auto a = static_cast<std::size_t>(sample.action);
            grad[b3 + a] += g;
            for (int j = 0; j < h2; ++j) {
                grad[w3 + a * h2 + j] += g * sc.a2[j];
                d2[j] = sc.a2[j] > 0.0 ? g * params_[w3 + a * h2 + j] : 0.0;
            }
            std::fill(d1.begin(), d1.end(), 0.0);
            for (int j = 0; j < h2; ++j) {
                if (d2[j] == 0.0) continue;
                grad[b2 + j] += d2[j];
                const std::size_t row = w2 + static_cast<std::size_t>(j) * h1;
                for (int i = 0; i < h1; ++i) {
                    grad[row + i] += d2[j] * sc.a1[i];
                    d1[i] += d2[j] * params_[row + i];
                }
            }
            for (int i = 0; i < h1; ++i) {
                if (sc.a1[i] <= 0.0 || d1[i] == 0.0) continue;
                grad[b1 + i] += d1[i];
                const std::size_t row = w1 + static_cast<std::size_t>(i) * in;
                for (int k = 0; k < in; ++k) grad[row + k] += d1[i] * sample.input[k];
            }
        }
        adam_step(grad, lr);
        return sq / static_cast<double>(batch.size());
    }

    void copy_parameters_from(const QApprox& other) {
        if (!(other.shape_ == shape_)) throw ContractError("parameter copy between different architectures");
        params_ = other.params_;
    }

    void set_parameters(std::vector<double> p) {
        if (p.size() != shape_.parameter_count()) throw ContractError("parameter count mismatch");
        params_ = std::move(p);
    }

    friend bool operator==(const QApprox& a, const QApprox& b) {
        return a.shape_ == b.shape_ && a.params_ == b.params_;
    }

private:
    struct Scratch {
        explicit Scratch(const NetShape& s)
            : a1(static_cast<std::size_t>(s.hidden1)), a2(static_cast<std::size_t>(s.hidden2)),
              out(static_cast<std::size_t>(s.outputs)) {}
        std::vector<double> a1, a2, out;
    };

    int state_index(std::span<const double> x) const {
        if (static_cast<int>(x.size()) != shape_.inputs) throw ContractError("tabular input has the wrong size");
        return static_cast<int>(std::max_element(x.begin(), x.end()) - x.begin());
    }

    void forward(std::span<const double> x, Scratch& sc) const {
        if (static_cast<int>(x.size()) != shape_.inputs) throw ContractError("network input has the wrong size");
        const int in = shape_.inputs, h1 = shape_.hidden1, h2 = shape_.hidden2, no = shape_.outputs;
        const double* p = params_.data();
        const double* b = p + static_cast<std::size_t>(h1) * in;
        for (int i = 0; i < h1; ++i) {
            double acc = b[i];
            const double* row = p + static_cast<std::size_t>(i) * in;
            for (int k = 0; k < in; ++k) acc += row[k] * x[k];
            sc.a1[i] = acc > 0.0 ? acc : 0.0;
        }
        p = b + h1;
        b = p + static_cast<std::size_t>(h2) * h1;
        for (int j = 0; j < h2; ++j) {
            double acc = b[j];
            const double* row = p + static_cast<std::size_t>(j) * h1;
            for (int i = 0; i < h1; ++i) acc += row[i] * sc.a1[i];
            sc.a2[j] = acc > 0.0 ? acc : 0.0;
        }
        p = b + h2;
        b = p + static_cast<std::size_t>(no) * h2;
        for (int a = 0; a < no; ++a) {
            double acc = b[a];
            const double* row = p + static_cast<std::size_t>(a) * h2;
            for (int j = 0; j < h2; ++j) acc += row[j] * sc.a2[j];
            sc.out[a] = acc;
        }
    }

    double train_tabular(std::span<const QTarget> batch, double lr) {
        std::vector<double> sum(params_.size(), 0.0);
        std::vector<int> hits(params_.size(), 0);
        double sq = 0.0;
        for (const auto& sample : batch) {
            const auto idx = static_cast<std::size_t>(state_index(sample.input)) * shape_.outputs +
                             static_cast<std::size_t>(sample.action);
            const double err = params_[idx] - sample.target;
            sq += err * err;
            sum[idx] += sample.target;
            hits[idx] += 1;
        }
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (hits[i] > 0) params_[i] += lr * (sum[i] / hits[i] - params_[i]);
        return sq / static_cast<double>(batch.size());
    }

    void adam_step(const std::vector<double>& grad, double lr) {
        constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
        ++adam_t_;
        const double c1 = 1.0 - std::pow(beta1, adam_t_);
        const double c2 = 1.0 - std::pow(beta2, adam_t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            adam_m_[i] = beta1 * adam_m_[i] + (1.0 - beta1) * grad[i];
            adam_v_[i] = beta2 * adam_v_[i] + (1.0 - beta2) * grad[i] * grad[i];
            params_[i] -= lr * (adam_m_[i] / c1) / (std::sqrt(adam_v_[i] / c2) + eps);
        }
    }

    NetShape shape_{};
    std::uint64_t seed_ = 0;
    std::vector<double> params_;
    std::vector<double> adam_m_, adam_v_;
    long adam_t_ = 0;
};

inline constexpr int kCheckpointVersion = 1;

/// Checkpoint layout: one text header line
///   `TERMSUM-QAPPROX <version> <kind> <inputs> <h1> <h2> <outputs> <gamma> <seed> <count> [manifest=<id>]`
/// followed by `count` little-endian IEEE-754 doubles.
inline void save_checkpoint(const std::string& path, const QApprox& q, double gamma, const std::string& manifest = {}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint `" + path + "`");
    const auto& s = q.shape();
    char gbuf[64];
    std::snprintf(gbuf, sizeof gbuf, "%.17g", gamma);
    out << "TERMSUM-QAPPROX " << kCheckpointVersion << ' ' << static_cast<int>(s.kind) << ' ' << s.inputs << ' '
        << s.hidden1 << ' ' << s.hidden2 << ' ' << s.outputs << ' ' << gbuf << ' ' << q.seed() << ' '
        << q.parameters().size();
    if (!manifest.empty()) out << " manifest=" << manifest;
    out << '\n';
    for (const double v : q.parameters()) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        char bytes[8];
        for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
        out.write(bytes, 8);
    }
}

struct Checkpoint {
    QApprox model;
    double gamma = 0.0;
    std::string manifest;
};

/// Load a checkpoint; when `expected` is given, its dims must match.
inline Checkpoint load_checkpoint(const std::string& path, const NetShape* expected = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint `" + path + "`");
    std::string header;
    std::getline(in, header);
    std::istringstream hs(header);
    std::string magic;
    int version = 0, kind = 0;
    NetShape shape;
    double gamma = 0.0;
    std::uint64_t seed = 0;
    std::size_t count = 0;
    hs >> magic >> version >> kind >> shape.inputs >> shape.hidden1 >> shape.hidden2 >> shape.outputs >> gamma >>
        seed >> count;
    if (!hs || magic != "TERMSUM-QAPPROX") throw FormatError("`" + path + "` is not a checkpoint");
    if (version > kCheckpointVersion) throw VersionError(version, kCheckpointVersion);
    shape.kind = static_cast<ApproxKind>(kind);
    if (expected && !(*expected == shape))
        throw FormatError("checkpoint dims " + std::to_string(shape.inputs) + "x" + std::to_string(shape.hidden1) + "x" +
                          std::to_string(shape.hidden2) + "x" + std::to_string(shape.outputs) +
                          " do not match the expected architecture");
    if (count != shape.parameter_count()) throw FormatError("checkpoint parameter count disagrees with its dims");
    std::string manifest;
    for (std::string tok; hs >> tok;)
        if (tok.starts_with("manifest=")) manifest = tok.substr(9);
    std::vector<double> params(count);
    for (auto& v : params) {
        unsigned char bytes[8];
        if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw TruncationError("checkpoint `" + path + "` is truncated");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
        v = std::bit_cast<double>(bits);
    }
    Checkpoint cp{QApprox(shape, seed), gamma, std::move(manifest)};
    cp.model.set_parameters(std::move(params));
    return cp;
}

}  // namespace termsum
