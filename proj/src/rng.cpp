#include "lcsd/rng.hpp"

#include <cmath>
#include <numbers>

#include "lcsd/error.hpp"

namespace lcsd {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Rng::Rng(std::uint64_t seed) : state_{mix64(seed + kGolden), 0} {}

Rng Rng::from_state(State s) {
    Rng r;
    r.state_ = s;
    return r;
}

Rng Rng::split(std::string_view name) const { return split(fnv1a64(name)); }

Rng Rng::split(std::uint64_t index) const {
    Rng r;
    r.state_ = {mix64(state_.key ^ mix64(index + 0x632BE59BD9B4E019ULL)), 0};
    return r;
}

std::uint64_t Rng::next_u64() {
    ++state_.counter;
    return mix64(state_.key + state_.counter * kGolden);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    // Box-Muller without caching the second variate.
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
    require(n > 0, "Rng::below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

}  // namespace lcsd
