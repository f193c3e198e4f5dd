// SPDX-License-Identifier: Apache-2.0
//
// Toroidal driving world. The map is 4H rows long along the forward axis and
// W columns wide. A road corridor occupies the middle half of the columns;
// everything outside it is wall of random height 1..Z, and a few 2x2 static
// obstacles sit on the road. Agents are single cells two slabs tall.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mssm/grad/rng.hpp"
#include "mssm/world/episode.hpp"

namespace mssm::world {

class PlacementError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Agent {
    int row = 0;
    int col = 0;
    int v_row = 0;
    int v_col = 0;
};

/// Static layout plus dynamic agents on a map that wraps along rows.
class Scene {
public:
    Scene(int rows, int cols, int corridor_begin, int corridor_end);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    int corridor_begin() const { return corridor_begin_; }
    int corridor_end() const { return corridor_end_; }
    int wrap_row(int r) const;

    /// Number of static slabs at (row, col), counted from the ground.
    int static_height(int row, int col) const;
    void set_static_height(int row, int col, int h);
    bool agent_at(int row, int col) const;
    /// True when an agent may stand on the cell.
    bool drivable(int row, int col) const;

    std::vector<Agent>& agents() { return agents_; }
    const std::vector<Agent>& agents() const { return agents_; }

    /// Moves every agent once, in index order. With probability `turn_prob`
    /// an agent draws a new lateral velocity in {-1, 0, 1}. A blocked move
    /// falls back to the forward-only move, then to staying put.
    void step_agents(grad::RngState& rng, double turn_prob);

private:
    int rows_, cols_, corridor_begin_, corridor_end_;
    std::vector<int> height_;
    std::vector<Agent> agents_;
};

/// Random layout and agents for one episode. Throws PlacementError when the
/// agents do not fit after bounded retries.
Scene build_scene(const WorldConfig& cfg, grad::RngState& rng, int ego_row, int ego_col);

Episode simulate_episode(const WorldConfig& cfg, std::uint64_t seed);

/// Re-runs the episode for `seed` with the ego driven by `actions` instead
/// of the scripted policy.
Episode replay_episode(const WorldConfig& cfg, std::uint64_t seed, std::span<const Action> actions);

}  // namespace mssm::world
