#pragma once

#include <cstdint>
#include <string_view>

namespace lcsd {

std::uint64_t fnv1a64(std::string_view bytes);

// Counter-based generator: output n is a keyed hash of n, so the state is just
// (key, counter) and named sub-streams are derived without touching the parent.
// All distributions are implemented here so sequences are identical across
// standard library implementations.
class Rng {
   public:
    struct State {
        std::uint64_t key = 0;
        std::uint64_t counter = 0;
        bool operator==(const State&) const = default;
    };

    explicit Rng(std::uint64_t seed = 0);
    static Rng from_state(State s);

    // Independent child stream; does not advance this generator.
    [[nodiscard]] Rng split(std::string_view name) const;
    [[nodiscard]] Rng split(std::uint64_t index) const;

    std::uint64_t next_u64();
    double uniform();  // [0, 1)
    double uniform(double lo, double hi);
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    [[nodiscard]] State state() const { return state_; }

   private:
    State state_;
};

}  // namespace lcsd
