#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace bitsift {

// xoshiro256** seeded through splitmix64. Self-contained so that streams are
// bitwise reproducible across standard libraries and round-trip through
// checkpoints (std::normal_distribution is implementation-defined; this is not).
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    explicit Rng(const std::array<std::uint64_t, 4>& state) : state_(state) {}

    std::uint64_t next_u64();

    // Uniform in [0,1), 53-bit mantissa.
    double uniform();
    double uniform(double lo, double hi);

    // Unbiased integer in [0, bound). bound must be > 0.
    std::uint64_t uniform_int(std::uint64_t bound);

    // Standard normal via Box-Muller. Draws two uniforms per call and keeps no
    // spare, so the state stays four words and serializes trivially.
    double normal();

    // Derive an independent stream for a named purpose without disturbing this one.
    Rng fork(std::uint64_t stream_id) const;

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    const std::array<std::uint64_t, 4>& state() const { return state_; }

private:
    std::array<std::uint64_t, 4> state_{};
};

}  // namespace bitsift
