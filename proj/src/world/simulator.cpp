// SPDX-License-Identifier: Apache-2.0
#include "mssm/world/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mssm::world {

namespace {

constexpr int kAgentSlabs = 2;
constexpr int kObstacleSlabs = 2;
constexpr int kLookahead = 6;
constexpr int kPlacementTries = 256;

enum Stream : std::uint64_t { kLayout = 1, kAgents = 2, kEgo = 3, kNoise = 4 };

int round_to_int(double x) { return static_cast<int>(std::floor(x + 0.5)); }

}  // namespace

Scene::Scene(int rows, int cols, int corridor_begin, int corridor_end)
    : rows_(rows), cols_(cols), corridor_begin_(corridor_begin), corridor_end_(corridor_end),
      height_(static_cast<std::size_t>(rows) * cols, 0) {}

int Scene::wrap_row(int r) const { return ((r % rows_) + rows_) % rows_; }

int Scene::static_height(int row, int col) const {
    if (col < 0 || col >= cols_) return -1;
    return height_[static_cast<std::size_t>(wrap_row(row)) * cols_ + col];
}

void Scene::set_static_height(int row, int col, int h) { height_[static_cast<std::size_t>(wrap_row(row)) * cols_ + col] = h; }

bool Scene::agent_at(int row, int col) const {
    int r = wrap_row(row);
    return std::any_of(agents_.begin(), agents_.end(), [&](const Agent& a) { return a.row == r && a.col == col; });
}

bool Scene::drivable(int row, int col) const {
    return col >= corridor_begin_ && col < corridor_end_ && static_height(row, col) == 0;
}

void Scene::step_agents(grad::RngState& rng, double turn_prob) {
    for (auto& a : agents_) {
        // Draws are unconditional so the stream position is layout independent.
        double u = rng.uniform01();
        auto turn = static_cast<int>(rng.uniform_index(3)) - 1;
        if (u < turn_prob) a.v_col = turn;

        auto free_cell = [&](int r, int c) {
            if (!drivable(r, c)) return false;
            int wr = wrap_row(r);
            for (const auto& o : agents_) {
                if (&o != &a && o.row == wr && o.col == c) return false;
            }
            return true;
        };
        int nr = a.row + a.v_row, nc = a.col + a.v_col;
        if (free_cell(nr, nc)) {
            a.row = wrap_row(nr);
            a.col = nc;
        } else if (free_cell(nr, a.col)) {
            a.row = wrap_row(nr);
            a.v_col = -a.v_col;
        } else {
            a.v_col = -a.v_col;
        }
    }
}

Scene build_scene(const WorldConfig& cfg, grad::RngState& rng, int ego_row, int ego_col) {
    int rows = 4 * static_cast<int>(cfg.H);
    int cols = static_cast<int>(cfg.W);
    int cb = cols / 4, ce = cols - cols / 4;
    Scene scene(rows, cols, cb, ce);
    int z = static_cast<int>(cfg.Z);

    for (int r0 = 0; r0 < rows; r0 += 4) {
        for (int c = 0; c < cols; ++c) {
            if (c >= cb && c < ce) continue;
            int h = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(z)));
            for (int r = r0; r < std::min(rows, r0 + 4); ++r) scene.set_static_height(r, c, h);
        }
    }

    int obstacle_h = std::min(kObstacleSlabs, z);
    for (std::uint32_t i = 0; i < cfg.n_obstacles; ++i) {
        for (int attempt = 0; attempt < kPlacementTries; ++attempt) {
            int r = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(rows)));
            int c = cb + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(ce - cb - 1)));
            // Keep the ego's starting neighborhood clear.
            int dr = std::abs(scene.wrap_row(r - ego_row + rows / 2) - rows / 2);
            if (dr <= 3 && std::abs(c - ego_col) <= 3) continue;
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) scene.set_static_height(r + a, c + b, obstacle_h);
            break;
        }
    }

    for (std::uint32_t i = 0; i < cfg.n_agents; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementTries && !placed; ++attempt) {
            int r = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(rows)));
            int c = cb + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(ce - cb)));
            if (!scene.drivable(r, c) || scene.agent_at(r, c)) continue;
            Agent a;
            a.row = r;
            a.col = c;
            a.v_row = static_cast<int>(rng.uniform_index(3));
            scene.agents().push_back(a);
            placed = true;
        }
        if (!placed) {
            throw PlacementError("could not place agent " + std::to_string(i) + " of " + std::to_string(cfg.n_agents) +
                                 " after " + std::to_string(kPlacementTries) + " tries");
        }
    }
    return scene;
}

namespace {

struct Ego {
    double row = 0.0;
    double col = 0.0;
    double speed = 0.0;
    int lane = 0;
};

class Simulation {
public:
    Simulation(const WorldConfig& cfg, std::uint64_t seed)
        : cfg_(cfg), root_(seed), layout_(root_.derive(kLayout)), agents_rng_(root_.derive(kAgents)),
          ego_rng_(root_.derive(kEgo)), noise_rng_(root_.derive(kNoise)),
          scene_(1, 1, 0, 1) {
        cfg_.validate();
        int cols = static_cast<int>(cfg.W);
        int cb = cols / 4, ce = cols - cols / 4;
        lanes_[0] = cb + (ce - cb) / 4;
        lanes_[1] = cb + 3 * (ce - cb) / 4;
        ego_.lane = static_cast<int>(ego_rng_.uniform_index(2));
        ego_.col = lanes_[ego_.lane];
        ego_.row = static_cast<double>(ego_rng_.uniform_index(4u * cfg.H));
        ego_.speed = cfg.ego_speed_min + (cfg.ego_speed_max - cfg.ego_speed_min) * ego_rng_.uniform01();
        scene_ = build_scene(cfg_, layout_, round_to_int(ego_.row), round_to_int(ego_.col));
    }

    Episode run(std::span<const Action> forced) {
        Episode ep;
        ep.H = cfg_.H;
        ep.W = cfg_.W;
        ep.Z = cfg_.Z;
        ep.C = cfg_.C;
        ep.T = cfg_.T;
        ep.L = cfg_.L;
        ep.n_agents = cfg_.n_agents;
        std::uint32_t steps = cfg_.steps();
        ep.labels.reserve(steps * cfg_.voxels());
        ep.observations.reserve(steps * cfg_.voxels());
        for (std::uint32_t t = 0; t < steps; ++t) {
            auto label = render();
            auto obs = observe(label);
            ep.labels.insert(ep.labels.end(), label.begin(), label.end());
            ep.observations.insert(ep.observations.end(), obs.begin(), obs.end());

            Action a = forced.empty() ? policy() : forced[t];
            ep.actions.push_back(a);
            ep.motion.push_back({a.velocity, a.steering, 1.0f});
            ego_.row = std::fmod(ego_.row + static_cast<double>(a.velocity), static_cast<double>(scene_.rows()));
            ego_.col += static_cast<double>(a.steering);
            scene_.step_agents(agents_rng_, cfg_.turn_prob);
        }
        return ep;
    }

private:
    int ego_cell_row() const { return round_to_int(ego_.row); }
    int ego_cell_col() const { return round_to_int(ego_.col); }
    int crop_ego_row() const { return static_cast<int>(cfg_.H) / 4; }
    int crop_ego_col() const { return static_cast<int>(cfg_.W) / 2; }

    bool lane_blocked(int lane) const {
        int c = lanes_[lane];
        for (int dr = 1; dr <= kLookahead; ++dr)
            for (int dc = -1; dc <= 1; ++dc)
                if (scene_.static_height(ego_cell_row() + dr, c + dc) != 0) return true;
        return false;
    }

    Action policy() {
        double jitter = ego_rng_.uniform01() - 0.5;
        ego_.speed = std::clamp(ego_.speed + 0.5 * jitter, cfg_.ego_speed_min, cfg_.ego_speed_max);
        if (lane_blocked(ego_.lane) && !lane_blocked(1 - ego_.lane)) ego_.lane = 1 - ego_.lane;
        double steer = std::clamp(static_cast<double>(lanes_[ego_.lane]) - ego_.col, -cfg_.steer_max, cfg_.steer_max);
        return {static_cast<float>(ego_.speed), static_cast<float>(steer)};
    }

    std::vector<std::uint8_t> render() const {
        const int H = static_cast<int>(cfg_.H), W = static_cast<int>(cfg_.W), Z = static_cast<int>(cfg_.Z);
        std::vector<std::uint8_t> out(cfg_.voxels(), kFree);
        int agent_h = std::min(kAgentSlabs, Z);
        for (int i = 0; i < H; ++i) {
            int wr = ego_cell_row() - crop_ego_row() + i;
            for (int j = 0; j < W; ++j) {
                int wc = ego_cell_col() - crop_ego_col() + j;
                int h = scene_.static_height(wr, wc);
                if (h < 0) h = Z;  // outside the map laterally
                bool agent = h == 0 && scene_.agent_at(wr, wc);
                for (int z = 0; z < Z; ++z) {
                    std::uint8_t v = kFree;
                    if (z < h) v = kStatic;
                    else if (agent && z < agent_h) v = kDynamic;
                    out[(static_cast<std::size_t>(z) * H + i) * W + j] = v;
                }
            }
        }
        return out;
    }

    std::vector<std::uint8_t> observe(const std::vector<std::uint8_t>& label) {
        const int H = static_cast<int>(cfg_.H), W = static_cast<int>(cfg_.W), Z = static_cast<int>(cfg_.Z);
        std::vector<std::uint8_t> out = label;
        if (cfg_.occlusion_radius > 0.0) {
            auto blocks = [&](int i, int j) { return label[static_cast<std::size_t>(i) * W + j] == kStatic; };
            const int ei = crop_ego_row(), ej = crop_ego_col();
            const double r2 = cfg_.occlusion_radius * cfg_.occlusion_radius;
            for (int i = 0; i < H; ++i) {
                for (int j = 0; j < W; ++j) {
                    int di = i - ei, dj = j - ej;
                    bool visible = static_cast<double>(di * di + dj * dj) <= r2;
                    int n = std::max(std::abs(di), std::abs(dj));
                    for (int k = 1; visible && k < n; ++k) {
                        int si = ei + round_to_int(static_cast<double>(di) * k / n);
                        int sj = ej + round_to_int(static_cast<double>(dj) * k / n);
                        if (blocks(si, sj)) visible = false;
                    }
                    if (visible) continue;
                    for (int z = 0; z < Z; ++z) out[(static_cast<std::size_t>(z) * H + i) * W + j] = kUnknown;
                }
            }
        }
        for (auto& v : out) {
            double u = noise_rng_.uniform01();
            auto shift = static_cast<std::uint8_t>(1 + noise_rng_.uniform_index(cfg_.C - 1));
            if (v != kUnknown && u < cfg_.noise) v = static_cast<std::uint8_t>((v + shift) % cfg_.C);
        }
        return out;
    }

    WorldConfig cfg_;
    grad::RngState root_, layout_, agents_rng_, ego_rng_, noise_rng_;
    Scene scene_;
    Ego ego_;
    int lanes_[2] = {0, 0};
};

}  // namespace

Episode simulate_episode(const WorldConfig& cfg, std::uint64_t seed) {
    Simulation sim(cfg, seed);
    return sim.run({});
}

Episode replay_episode(const WorldConfig& cfg, std::uint64_t seed, std::span<const Action> actions) {
    if (actions.size() != cfg.steps()) {
        throw std::invalid_argument("replay_episode: expected " + std::to_string(cfg.steps()) + " actions, got " +
                                    std::to_string(actions.size()));
    }
    Simulation sim(cfg, seed);
    return sim.run(actions);
}

}  // namespace mssm::world
