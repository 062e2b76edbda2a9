#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace fairsinkhorn {

// Deterministic xoshiro256** generator with a splitmix64-seeded state.
// The standard <random> engines are portable but the standard
// distributions are not; every draw here is specified bit-for-bit so that
// seeded runs reproduce byte-identical artifacts on any platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    // Independent stream derived from (seed, stream). Streams with
    // different ids never share state.
    static Rng stream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t next_u64();

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform();
    // Uniform on [lo, hi).
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller; the spare value is cached in state.
    double normal();
    double normal(double mean, double stddev);

    // Unbiased integer in [0, n). n must be > 0.
    std::size_t uniform_index(std::size_t n);

    // k distinct indices from [0, n), in draw order (partial Fisher-Yates).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);
    // k indices from [0, n), independently uniform.
    std::vector<std::size_t> sample_with_replacement(std::size_t n, std::size_t k);

    // Full state, for checkpointing. Layout: 4 state words, has_spare flag,
    // spare normal bits.
    std::array<std::uint64_t, 6> serialize() const;
    static Rng deserialize(const std::array<std::uint64_t, 6>& words);

    bool operator==(const Rng&) const = default;

private:
    Rng() = default;

    std::array<std::uint64_t, 4> state_{};
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

} // namespace fairsinkhorn
