// SPDX-License-Identifier: Apache-2.0
#include "mssm/grad/rng.hpp"

#include <cmath>
#include <numbers>

namespace mssm::grad {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

inline std::uint64_t join(std::uint32_t lo, std::uint32_t hi) { return (static_cast<std::uint64_t>(hi) << 32) | lo; }

inline double to_unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> c, std::array<std::uint32_t, 2> k) {
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            k[0] += kWeyl0;
            k[1] += kWeyl1;
        }
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMul0, c[0], hi0, lo0);
        mulhilo(kMul1, c[2], hi1, lo1);
        c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
    return c;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::array<std::uint32_t, 4> RngState::next_block() {
    std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32), 0u,
                                     0u};
    std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    ++counter;
    return philox4x32_10(ctr, key);
}

double RngState::uniform01() {
    auto b = next_block();
    return to_unit(join(b[0], b[1]));
}

std::uint64_t RngState::uniform_index(std::uint64_t n) {
    auto b = next_block();
    // 128-bit multiply-high keeps the result unbiased to within 2^-64.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(join(b[0], b[1])) * n) >> 64);
}

std::array<double, 2> RngState::normal_pair() {
    auto b = next_block();
    double u1 = 1.0 - to_unit(join(b[0], b[1]));  // (0, 1]
    double u2 = to_unit(join(b[2], b[3]));
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(t), r * std::sin(t)};
}

RngState RngState::derive(std::uint64_t stream) const {
    return RngState(splitmix64(seed ^ splitmix64(stream + 0x5851F42D4C957F2Dull)), 0);
}

Value sample_normal(RngState& rng, const Shape& shape) {
    std::size_t n = shape_size(shape);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; i += 2) {
        auto z = rng.normal_pair();
        out[i] = z[0];
        if (i + 1 < n) out[i + 1] = z[1];
    }
    return Value::from(shape, std::move(out), false);
}

Value sample_uniform(RngState& rng, const Shape& shape, double lo, double hi) {
    std::size_t n = shape_size(shape);
    std::vector<double> out(n);
    for (auto& v : out) v = lo + (hi - lo) * rng.uniform01();
    return Value::from(shape, std::move(out), false);
}

}  // namespace mssm::grad
