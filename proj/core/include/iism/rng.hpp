#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace iism {

// Counter-based deterministic generator (SplitMix64 core). Unlike
// std::normal_distribution, every draw here is fully specified by this file,
// so streams are reproducible across standard libraries and platforms.
// Independent streams are derived by mixing a seed with domain labels, e.g.
// Rng(seed).fork(hash64(patient_id)).fork(slice_index).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection-free modulo is fine here: n is tiny relative to 2^64, and
        // the bias (< n / 2^64) is far below anything our tests can resolve.
        return next_u64() % n;
    }

    // Standard normal via Box-Muller (one value per call; the partner draw is
    // discarded to keep the stream layout independent of call parity).
    double normal() {
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Child stream decorrelated from this one by `label`.
    Rng fork(std::uint64_t label) const {
        Rng child(state_ ^ (0xa0761d6478bd642full + label));
        child.next_u64();
        return child;
    }

  private:
    std::uint64_t state_;
};

// FNV-1a, used to fold string identifiers (patient ids) into stream labels.
inline std::uint64_t hash64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace iism
