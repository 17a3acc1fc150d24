#pragma once

#include <cstdint>
#include <random>

namespace protosolo {

/// Portable deterministic generator. The engine is std::mt19937_64 (fully specified by
/// the standard); the distributions are implemented here because the standard library
/// ones are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream for (seed, stream, counter), e.g. one per sample or epoch.
    static Rng derive(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0);

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

} // namespace protosolo
