#pragma once
#include <cmath>
#include <cstdint>
#include <vector>

namespace bprl {

// xoshiro256** with splitmix64 seeding. All randomness in the project flows
// through this generator so runs are bit-reproducible across platforms;
// std:: distributions are implementation-defined and must not be used.
struct Rng {
    std::uint64_t state[4] = {1, 2, 3, 4};
    bool has_spare = false;
    double spare = 0.0;

    static Rng seeded(std::uint64_t seed) {
        Rng r;
        std::uint64_t x = seed;
        for (auto& s : r.state) {
            // splitmix64
            x += 0x9E3779B97F4A7C15ULL;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
            z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
            s = z ^ (z >> 31);
        }
        return r;
    }

    static std::uint64_t rotl(std::uint64_t v, int k) {
        return (v << k) | (v >> (64 - k));
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(state[1] * 5, 7) * 9;
        const std::uint64_t t = state[1] << 17;
        state[2] ^= state[0];
        state[3] ^= state[1];
        state[1] ^= state[2];
        state[0] ^= state[3];
        state[2] ^= t;
        state[3] = rotl(state[3], 45);
        return result;
    }

    // [0,1) with 53 significant bits
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // [0,1) with 24 significant bits
    float next_float() { return static_cast<float>(next() >> 40) * 0x1.0p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

    // Box-Muller; keeps the second draw as a spare.
    float normal(float mean, float sigma) {
        if (has_spare) {
            has_spare = false;
            return mean + sigma * static_cast<float>(spare);
        }
        double u1 = 0.0;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        spare = r * std::sin(two_pi * u2);
        has_spare = true;
        return mean + sigma * static_cast<float>(r * std::cos(two_pi * u2));
    }

    // Unbiased integer in [0, n). Lemire multiply-shift with rejection.
    std::uint64_t below(std::uint64_t n) {
        unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (lo < threshold) {
                m = static_cast<unsigned __int128>(next()) * n;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    // Fisher-Yates, high index down
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }
};

// Derives an independent stream from a master seed. Stages of the pipeline
// (dataset draw, init, shuffle, poisoning, ...) each get their own tag so
// adding draws to one stage never perturbs another.
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t tag) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace bprl
