#include "fairsinkhorn/rng.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

namespace fairsinkhorn {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace

Rng::Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) {
        word = splitmix64(s);
    }
}

Rng Rng::stream(std::uint64_t seed, std::uint64_t stream_id) {
    // Mix the stream id through splitmix before combining so that
    // consecutive ids give unrelated seeds.
    std::uint64_t s = stream_id + 0xD1B54A32D192ED03ull;
    return Rng(seed ^ splitmix64(s));
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = std::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = std::rotl(state_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() {
    if (has_spare_normal_) {
        has_spare_normal_ = false;
        return spare_normal_;
    }
    // u1 in (0, 1] so the log is finite.
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_normal_ = radius * std::sin(angle);
    has_spare_normal_ = true;
    return radius * std::cos(angle);
}

double Rng::normal(double mean, double stddev) {
    return mean + stddev * normal();
}

std::size_t Rng::uniform_index(std::size_t n) {
    if (n == 0) {
        throw std::invalid_argument("Rng::uniform_index: n must be positive");
    }
    if (n == 1) return 0;
    const std::uint64_t bound = n;
    // Rejecting the low remainder keeps the draw exactly uniform.
    const std::uint64_t threshold = (0 - bound) % bound;
    std::uint64_t x = next_u64();
    while (x < threshold) {
        x = next_u64();
    }
    return static_cast<std::size_t>(x % bound);
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
    if (k > n) {
        throw std::invalid_argument("Rng::sample_without_replacement: k exceeds n");
    }
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + uniform_index(n - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

std::vector<std::size_t> Rng::sample_with_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i) {
        out[i] = uniform_index(n);
    }
    return out;
}

std::array<std::uint64_t, 6> Rng::serialize() const {
    std::uint64_t spare_bits = 0;
    std::memcpy(&spare_bits, &spare_normal_, sizeof spare_bits);
    return {state_[0], state_[1], state_[2], state_[3],
            has_spare_normal_ ? std::uint64_t{1} : std::uint64_t{0}, spare_bits};
}

Rng Rng::deserialize(const std::array<std::uint64_t, 6>& words) {
    Rng rng;
    rng.state_ = {words[0], words[1], words[2], words[3]};
    rng.has_spare_normal_ = words[4] != 0;
    std::memcpy(&rng.spare_normal_, &words[5], sizeof rng.spare_normal_);
    return rng;
}

} // namespace fairsinkhorn
