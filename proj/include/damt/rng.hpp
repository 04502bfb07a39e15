#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace damt {

// Deterministic random source. mt19937_64 output is fully specified by the
// standard; the derived uniforms below avoid std::uniform_*_distribution,
// whose algorithms are implementation-defined, so streams are reproducible
// across compilers and platforms.
class Rng {
  public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    uint64_t seed() const { return seed_; }

    uint64_t next() { return gen_(); }

    // uniform in [0, 1) with 53-bit resolution
    double uniform() { return double(next() >> 11) * (1.0 / 9007199254740992.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // uniform in [0, n), unbiased via rejection
    size_t index(size_t n) {
        if (n == 0) return 0;
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return size_t(x % n);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream; splitmix64 over (seed, tag) so sibling
    // streams stay decorrelated.
    Rng derive(uint64_t tag) const {
        uint64_t z = seed_ + tag * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return Rng(z ^ (z >> 31));
    }

    Rng derive(const std::string& tag) const { return derive(hash_tag(tag)); }

    static uint64_t hash_tag(const std::string& s) {
        uint64_t h = 1469598103934665603ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    }

  private:
    uint64_t seed_;
    std::mt19937_64 gen_;
};

}  // namespace damt
