#pragma once

#include <cstdint>
#include <cmath>
#include <initializer_list>
#include <random>
#include <string_view>

namespace scaler {

// All randomness in the project flows from one root seed through named
// derivations: stream(root, "aug", stage, epoch, sample). mt19937_64 is fully
// specified by the standard and the distributions below avoid
// std::*_distribution (whose outputs are implementation-defined), so runs are
// bit-reproducible across platforms. Derivation also means resume never has
// to serialize engine state: counters are enough.

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline uint64_t hash_tag(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ull; // FNV-1a
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

inline uint64_t mix_seed(uint64_t root, std::initializer_list<uint64_t> tags) {
    uint64_t s = root;
    uint64_t out = splitmix64(s);
    for (uint64_t t : tags) {
        s ^= t;
        out = splitmix64(s);
    }
    return out;
}

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive on both ends.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        // Debiased modulo; span is tiny everywhere we use this.
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t v = gen_();
        while (v >= limit) v = gen_();
        return lo + static_cast<int64_t>(v % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller, no cached second value (kept stateless for resume clarity).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::mt19937_64 gen_;
};

// Named sub-stream: stream_rng(root, "shuffle", {stage, epoch}).
inline Rng stream_rng(uint64_t root, std::string_view purpose,
                      std::initializer_list<uint64_t> counters = {}) {
    uint64_t s = root;
    s ^= hash_tag(purpose);
    uint64_t out = splitmix64(s);
    for (uint64_t c : counters) {
        s ^= c * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull;
        out = splitmix64(s);
    }
    return Rng(out);
}

} // namespace scaler
