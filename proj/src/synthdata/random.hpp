#pragma once

#include <cstdint>
#include <random>

namespace unmask::synth::detail {

// std::uniform_real_distribution is implementation-defined; generated data
// must not depend on the standard library build, so draws are derived from
// the raw 64-bit engine output.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

}  // namespace unmask::synth::detail
