#pragma once

#include <cmath>
#include <cstdint>

namespace opidyn::rng {

// Stream tags keep the Brownian driver W, the regularizing driver V and
// auxiliary consumers (bootstrap resampling) on disjoint streams derived
// from one base seed.
inline constexpr std::uint64_t kStreamW = 0;
inline constexpr std::uint64_t kStreamV = 1;
inline constexpr std::uint64_t kStreamBootstrap = 2;

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Counter-based seed derivation: the stream for trajectory `index` under
// `tag` is a pure function of (base, index, tag), independent of scheduling.
inline std::uint64_t derive_stream_seed(std::uint64_t base, std::uint64_t index,
                                        std::uint64_t tag) {
    std::uint64_t s = base;
    (void)splitmix64(s);
    s ^= 0x9E3779B97F4A7C15ULL * (index + 1);
    (void)splitmix64(s);
    s ^= 0xC2B2AE3D27D4EB4FULL * (tag + 1);
    return splitmix64(s);
}

// xoshiro256++ (Blackman & Vigna), seeded through splitmix64 expansion.
class Xoshiro256pp {
public:
    explicit Xoshiro256pp(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on (0, 1]; never returns 0 so it is safe under log().
    double uniform_oc() {
        return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    }

    // Uniform on [0, 1).
    double uniform_co() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // 64-bit multiply-shift; bias is O(n / 2^64), negligible here.
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next()) * n) >> 64);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t s_[4];
};

// Standard normal variates via Box-Muller with a cached spare.
// Fully deterministic given the seed, across platforms and thread counts.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : gen_(seed) {}

    double next() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = gen_.uniform_oc();
        const double u2 = gen_.uniform_co();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    Xoshiro256pp gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace opidyn::rng
