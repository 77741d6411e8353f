#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace termsum {

/// SplitMix64. Eight bytes of state, so it can live inside value types
/// such as EnvState and be copied freely.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    constexpr SplitMix64() noexcept = default;
    constexpr explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) from the top 53 bits.
    constexpr double uniform() noexcept {
        return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
    constexpr std::uint64_t below(std::uint64_t n) noexcept {
        if (n <= 1) return 0;
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t x = (*this)();
            const unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
            if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
        }
    }

    /// Uniform integer in [lo, hi].
    constexpr int between(int lo, int hi) noexcept {
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    constexpr bool bernoulli(double p) noexcept { return uniform() < p; }

    constexpr std::uint64_t state() const noexcept { return state_; }

    friend constexpr bool operator==(const SplitMix64&, const SplitMix64&) = default;

private:
    std::uint64_t state_ = 0;
};

constexpr std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    for (const char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ULL;
    x ^= x >> 33;
    return x;
}

/// Seed-splitting contract: one master seed yields independent named
/// substreams ("spawn", "learner-init", "bootstrap", "ga", ...), each
/// further indexed (episode number, ensemble member, ...).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                                    std::uint64_t index = 0) noexcept {
    return mix64(mix64(master ^ fnv1a(stream)) + 0x9e3779b97f4a7c15ULL * (index + 1));
}

inline SplitMix64 make_stream(std::uint64_t master, std::string_view stream, std::uint64_t index = 0) {
    return SplitMix64(derive_seed(master, stream, index));
}

}  // namespace termsum
