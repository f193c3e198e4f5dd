// SPDX-License-Identifier: Apache-2.0
//
// Counter-based random numbers: Philox4x32-10 (Salmon et al., Random123).
// Each (seed, counter) pair maps to one 128-bit block. The 64-bit seed is the
// Philox key, the 64-bit counter fills the low two words of the Philox
// counter (high words are zero). Every draw consumes exactly one block and
// increments the counter, so a pair is never reused within one state.
//
//   uniform01   : first 64-bit word >> 11, scaled by 2^-53, in [0, 1)
//   normal pair : Box-Muller over both 64-bit words of one block
#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "mssm/grad/value.hpp"

namespace mssm::grad {

struct RngState {
    static constexpr std::string_view kAlgorithm = "philox4x32-10";

    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    RngState() = default;
    RngState(std::uint64_t s, std::uint64_t c = 0) : seed(s), counter(c) {}

    std::array<std::uint32_t, 4> next_block();
    double uniform01();
    /// Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n);
    std::array<double, 2> normal_pair();

    /// Independent stream keyed by (seed, stream); counter restarts at zero.
    RngState derive(std::uint64_t stream) const;

    bool operator==(const RngState&) const = default;
};

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);
std::uint64_t splitmix64(std::uint64_t x);

/// i.i.d. N(0, 1) draws; returned Value has requires-grad off.
Value sample_normal(RngState& rng, const Shape& shape);
Value sample_uniform(RngState& rng, const Shape& shape, double lo, double hi);

}  // namespace mssm::grad
