#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace foley {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seeded PRNG passed explicitly to every stochastic operation. There is no
// global generator anywhere in the library. The normal() transform is written
// out so the byte stream does not depend on the standard library vendor.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    int uniform_int(int n) { return static_cast<int>(uniform() * n); }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller, pair-cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Independent child stream. Depends only on (seed, salt), not on how many
    // draws were made from this generator, so fan-out order is reproducible.
    Rng fork(uint64_t salt) const { return Rng(splitmix64(seed_ ^ splitmix64(salt ^ 0xa5a5a5a5a5a5a5a5ULL))); }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace foley
