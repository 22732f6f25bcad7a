#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace vlpt {

// Seeded deterministic generator. Sub-streams are derived from (seed, tag)
// via splitmix so that per-example / per-step draws do not depend on
// evaluation order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : base_seed_(seed), engine_(seed) {}

    static std::uint64_t mix(std::uint64_t seed, std::uint64_t tag) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    Rng derive(std::uint64_t tag) const { return Rng(mix(base_seed_, tag)); }

    std::uint64_t seed() const { return base_seed_; }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        return static_cast<int>(std::uniform_int_distribution<std::uint64_t>(
            0, static_cast<std::uint64_t>(n) - 1)(engine_));
    }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }

    // Fisher-Yates; deterministic for a fixed state.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            const int j = uniform_int(i + 1);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

    // k distinct values from [0, n), ascending.
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> pool(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
        shuffle(pool);
        pool.resize(static_cast<std::size_t>(k));
        std::sort(pool.begin(), pool.end());
        return pool;
    }

private:
    std::uint64_t base_seed_;
    std::mt19937_64 engine_;
};

}   // namespace vlpt
