#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace vton {

// Deterministic, self-contained RNG (xoshiro256++ seeded via splitmix64).
// We avoid std:: distributions on purpose: their output is implementation
// defined, and dataset/checkpoint reproducibility is part of the contract.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& si : s_) si = splitmix64(x);
        have_spare_ = false;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = uint64_t(hi - lo) + 1;
        return lo + int64_t(next_u64() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Derive an independent child stream. Used to key data generation,
    // noise draws, dropout, and init off one run seed without coupling.
    Rng split(std::string_view tag) const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (char c : tag) {
            h ^= uint64_t(uint8_t(c));
            h *= 0x100000001b3ull;
        }
        for (auto si : s_) {
            h ^= si;
            h *= 0x100000001b3ull;
        }
        return Rng(h);
    }

    static uint64_t hash_combine(uint64_t seed, uint64_t v) {
        uint64_t x = seed + 0x9e3779b97f4a7c15ull + (v << 6) + (v >> 2);
        return splitmix64(x);
    }

private:
    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace vton
