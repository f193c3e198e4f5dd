// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mssm/grad/value.hpp"
#include "mssm/world/config.hpp"

namespace mssm::world {

/// Ego command applied between step t and t+1.
struct Action {
    float velocity = 0.0f;  // forward cells per step
    float steering = 0.0f;  // lateral cells per step
    bool operator==(const Action&) const = default;
};

/// Ego motion over one step: forward and lateral velocity, elapsed steps.
struct Motion {
    float v_forward = 0.0f;
    float v_lateral = 0.0f;
    float dt = 1.0f;
    bool operator==(const Motion&) const = default;
};

/// One simulated drive of T + L steps. Grids are stored as class indices in
/// [step][slab][row][col] order; observations use kUnknown for hidden voxels.
struct Episode {
    std::uint32_t H = 0, W = 0, Z = 0, C = kClassCount, T = 0, L = 0, n_agents = 0;
    std::vector<std::uint8_t> labels;
    std::vector<std::uint8_t> observations;
    std::vector<Action> actions;
    std::vector<Motion> motion;

    std::uint32_t steps() const { return T + L; }
    std::size_t voxels() const { return static_cast<std::size_t>(Z) * H * W; }
    std::span<const std::uint8_t> label(std::size_t t) const;
    std::span<const std::uint8_t> observation(std::size_t t) const;

    /// Copy restricted to the first `steps` steps (T is clamped, L adjusted).
    Episode truncated(std::uint32_t steps) const;

    bool operator==(const Episode&) const = default;
};

/// (Z*C, H, W) one-hot field, channel z*C + class. kUnknown voxels are all zero.
grad::Value one_hot(std::span<const std::uint8_t> classes, std::uint32_t Z, std::uint32_t C, std::uint32_t H,
                    std::uint32_t W);

}  // namespace mssm::world
