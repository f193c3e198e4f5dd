// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mssm::world {

inline constexpr std::uint32_t kClassCount = 3;
inline constexpr std::uint8_t kFree = 0;
inline constexpr std::uint8_t kStatic = 1;
inline constexpr std::uint8_t kDynamic = 2;
/// Observation value for voxels hidden from the ego vehicle.
inline constexpr std::uint8_t kUnknown = 255;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct WorldConfig {
    std::uint32_t H = 32;  // crop rows (forward axis)
    std::uint32_t W = 32;  // crop columns (lateral axis)
    std::uint32_t Z = 4;   // height slabs
    std::uint32_t C = kClassCount;
    std::uint32_t n_agents = 16;
    std::uint32_t n_obstacles = 8;
    double ego_speed_min = 1.0;  // cells per step
    double ego_speed_max = 2.0;
    double steer_max = 1.0;      // lateral cells per step
    double turn_prob = 0.1;      // per agent and step
    double occlusion_radius = 14.0;  // cells; 0 disables occlusion
    double noise = 0.01;             // per-voxel class flip probability
    std::uint32_t T = 4;
    std::uint32_t L = 4;
    std::uint64_t seed = 0;

    std::uint32_t steps() const { return T + L; }
    std::size_t voxels() const { return static_cast<std::size_t>(Z) * H * W; }

    /// Throws ConfigError naming the first violated constraint.
    void validate() const;
    /// Canonical `key=value` lines for every field except the seed.
    std::string canonical() const;
    std::string fingerprint() const;
};

}  // namespace mssm::world
