#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace flowkd {

// All randomness in a run derives from one master seed. Component streams
// (init, shuffle, augment, data synthesis) are independent substreams keyed
// by a tag and up to two integers, so their draws never interleave and the
// same (seed, tag, a, b) always yields the same sequence.
//
// The samplers below are spelled out explicitly instead of using
// std::*_distribution so that every draw is reproducible bit-for-bit and can
// be re-enumerated independently in tests:
//   uniform_u64_below(n): rejection sampling on the top range, then x % n
//   uniform_real01():     (x >> 11) * 2^-53
//   normal():             Box-Muller, two u64 draws per sample, cos branch

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Unbiased integer in [0, n).
    uint64_t uniform_u64_below(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
        uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return x % n;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform_real01() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform_real(double lo, double hi) {
        return lo + (hi - lo) * uniform_real01();
    }

    // Standard normal via Box-Muller; consumes exactly two u64 draws.
    double normal() {
        double u1 = uniform_real01();
        double u2 = uniform_real01();
        if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_u64_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

class SplitRng {
public:
    explicit SplitRng(uint64_t master_seed) : master_(master_seed) {}

    uint64_t substream_seed(const std::string& tag, uint64_t a = 0, uint64_t b = 0) const {
        uint64_t x = splitmix64(master_ ^ fnv1a64(tag));
        x = splitmix64(x ^ a);
        x = splitmix64(x ^ b);
        return x;
    }

    Rng substream(const std::string& tag, uint64_t a = 0, uint64_t b = 0) const {
        return Rng(substream_seed(tag, a, b));
    }

    uint64_t master() const { return master_; }

private:
    uint64_t master_;
};

}  // namespace flowkd
