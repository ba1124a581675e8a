#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace partswap {

// Deterministic RNG used everywhere instead of std::normal_distribution,
// whose output differs across standard library implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0,1)
    double uniform() {
        return double(eng_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        uint64_t span = uint64_t(hi - lo) + 1;
        return lo + int(eng_() % span);
    }

    // Box-Muller with the usual cached second variate.
    double normal() {
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cache_ = r * std::sin(a);
        has_cache_ = true;
        return r * std::cos(a);
    }

  private:
    std::mt19937_64 eng_;
    double cache_ = 0.0;
    bool has_cache_ = false;
};

// FNV-1a, used to derive independent stream seeds from (seed, name) or
// (seed, indices) without coupling draws across call sites.
inline uint64_t hash_combine(uint64_t seed, const std::string& s) {
    uint64_t h = 14695981039346656037ull ^ seed;
    h *= 1099511628211ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t hash_combine(uint64_t seed, uint64_t v) {
    uint64_t h = 14695981039346656037ull ^ seed;
    h *= 1099511628211ull;
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace partswap
