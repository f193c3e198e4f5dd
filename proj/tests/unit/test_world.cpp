// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "mssm/common/binary_io.hpp"
#include "mssm/world/dataset.hpp"
#include "mssm/world/episode_io.hpp"
#include "mssm/world/simulator.hpp"

using namespace mssm;
using namespace mssm::world;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("mssm_test_world_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

WorldConfig small_config() {
    WorldConfig cfg;
    cfg.H = 16;
    cfg.W = 16;
    cfg.n_agents = 5;
    cfg.n_obstacles = 3;
    return cfg;
}

}  // namespace

TEST_CASE("config validation") {
    WorldConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    auto bad = cfg;
    bad.H = 4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.T = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.noise = 0.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.C = 4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    auto reseeded = cfg;
    reseeded.seed = 99;
    CHECK(reseeded.fingerprint() == cfg.fingerprint());
    bad = cfg;
    bad.L = 2;
    CHECK(bad.fingerprint() != cfg.fingerprint());
}

TEST_CASE("uncorrupted observations equal labels") {
    auto cfg = small_config();
    cfg.n_agents = 0;
    cfg.noise = 0.0;
    cfg.occlusion_radius = 0.0;
    auto ep = simulate_episode(cfg, 5);
    CHECK(ep.observations == ep.labels);
}

TEST_CASE("constant-velocity agent update") {
    Scene scene(16, 8, 0, 8);
    scene.agents().push_back({2, 3, 1, 0});
    grad::RngState rng(1);
    scene.step_agents(rng, 0.0);
    CHECK(scene.agents()[0].row == 3);
    CHECK(scene.agents()[0].col == 3);
    CHECK(scene.agent_at(3, 3));
    CHECK_FALSE(scene.agent_at(2, 3));
}

TEST_CASE("blocked agents never enter static or occupied cells") {
    Scene scene(16, 8, 0, 8);
    scene.set_static_height(3, 3, 2);
    scene.agents().push_back({2, 3, 1, 0});
    scene.agents().push_back({5, 4, 0, 0});
    scene.agents().push_back({4, 4, 1, 0});
    grad::RngState rng(1);
    scene.step_agents(rng, 0.0);
    CHECK(scene.agents()[0].row == 2);
    CHECK(scene.agents()[2].row == 4);
}

TEST_CASE("simulation is deterministic per seed") {
    auto cfg = small_config();
    auto a = simulate_episode(cfg, 17);
    auto b = simulate_episode(cfg, 17);
    CHECK(encode_episode(a) == encode_episode(b));
    auto c = simulate_episode(cfg, 18);
    CHECK(encode_episode(a) != encode_episode(c));
}

TEST_CASE("agent census is constant across steps") {
    WorldConfig cfg;
    cfg.turn_prob = 0.5;
    grad::RngState layout(3), motion(4);
    auto scene = build_scene(cfg, layout, 0, 12);
    for (int step = 0; step < 50; ++step) {
        std::size_t count = 0;
        for (int r = 0; r < scene.rows(); ++r)
            for (int c = 0; c < scene.cols(); ++c) {
                if (!scene.agent_at(r, c)) continue;
                ++count;
                CHECK(scene.static_height(r, c) == 0);
            }
        CHECK(count == cfg.n_agents);
        scene.step_agents(motion, cfg.turn_prob);
    }
}

TEST_CASE("episode invariants") {
    WorldConfig cfg;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto ep = simulate_episode(cfg, seed);
        REQUIRE(ep.labels.size() == cfg.steps() * cfg.voxels());
        for (auto v : ep.labels) REQUIRE(v < kClassCount);
        for (const auto& a : ep.actions) {
            CHECK(a.velocity >= cfg.ego_speed_min - 1e-6);
            CHECK(a.velocity <= cfg.ego_speed_max + 1e-6);
            CHECK(std::abs(a.steering) <= cfg.steer_max + 1e-6);
        }
        for (std::size_t t = 0; t < ep.steps(); ++t) {
            CHECK(ep.motion[t].v_forward == ep.actions[t].velocity);
            CHECK(ep.motion[t].dt == 1.0f);
        }
        // Every label voxel is one class, so the one-hot field sums to one per voxel.
        auto y = one_hot(ep.label(0), ep.Z, ep.C, ep.H, ep.W);
        double total = 0;
        for (double v : y.data()) total += v;
        CHECK(total == static_cast<double>(ep.voxels()));
    }
}

TEST_CASE("occlusion hides voxels without altering visible ones") {
    WorldConfig cfg;
    cfg.noise = 0.0;
    auto ep = simulate_episode(cfg, 9);
    std::size_t hidden = 0;
    for (std::size_t i = 0; i < ep.labels.size(); ++i) {
        if (ep.observations[i] == kUnknown) {
            ++hidden;
        } else {
            REQUIRE(ep.observations[i] == ep.labels[i]);
        }
    }
    CHECK(hidden > 0);
    CHECK(hidden < ep.labels.size());
    auto o = one_hot(ep.observation(0), ep.Z, ep.C, ep.H, ep.W);
    double total = 0;
    for (double v : o.data()) total += v;
    std::size_t hidden0 = 0;
    for (auto v : ep.observation(0)) hidden0 += v == kUnknown;
    CHECK(total == static_cast<double>(ep.voxels() - hidden0));
}

TEST_CASE("observation noise rate matches the configured flip probability") {
    WorldConfig cfg;
    cfg.occlusion_radius = 0.0;
    cfg.noise = 0.1;
    auto ep = simulate_episode(cfg, 21);
    double n = static_cast<double>(ep.labels.size()), flips = 0;
    for (std::size_t i = 0; i < ep.labels.size(); ++i) flips += ep.observations[i] != ep.labels[i];
    double sd = std::sqrt(n * 0.1 * 0.9);
    CHECK(std::abs(flips - 0.1 * n) < 4 * sd);
}

TEST_CASE("replaying recorded actions reproduces the labels") {
    WorldConfig cfg;
    for (std::uint64_t seed : {4u, 40u, 400u}) {
        auto ep = simulate_episode(cfg, seed);
        auto again = replay_episode(cfg, seed, ep.actions);
        CHECK(again.labels == ep.labels);
        CHECK(again.actions == ep.actions);
    }
    std::vector<Action> short_actions(3);
    CHECK_THROWS(replay_episode(cfg, 4, short_actions));
}

TEST_CASE("placement failure is reported") {
    auto cfg = small_config();
    cfg.H = 8;
    cfg.W = 8;
    cfg.n_agents = 1000;
    CHECK_THROWS_AS(simulate_episode(cfg, 1), PlacementError);
}

TEST_CASE("episode file round trip and error kinds") {
    auto dir = scratch_dir("io");
    auto ep = simulate_episode(small_config(), 8);
    write_episode(ep, dir / "a.twld");
    auto back = read_episode(dir / "a.twld");
    CHECK(back == ep);
    write_episode(back, dir / "b.twld");
    CHECK(common::read_file(dir / "a.twld") == common::read_file(dir / "b.twld"));

    auto bytes = encode_episode(ep);
    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(decode_episode(magic), BadMagicError);
    auto version = bytes;
    version[4] = 2;
    CHECK_THROWS_AS(decode_episode(version), VersionMismatchError);
    auto dims = bytes;
    dims[6] = static_cast<std::uint8_t>(dims[6] + 1);  // H
    CHECK_THROWS_AS(decode_episode(dims), TruncatedPayloadError);
    auto cut = bytes;
    cut.resize(cut.size() - 10);
    CHECK_THROWS_AS(decode_episode(cut), TruncatedPayloadError);
    auto flipped = bytes;
    flipped[100] ^= 0x01;
    CHECK_THROWS_AS(decode_episode(flipped), ChecksumError);
    std::vector<std::uint8_t> empty;
    CHECK_THROWS_AS(decode_episode(empty), BadMagicError);
}

TEST_CASE("truncated episodes keep the prefix") {
    auto ep = simulate_episode(small_config(), 8);
    auto t = ep.truncated(4);
    CHECK(t.T == 4);
    CHECK(t.L == 0);
    CHECK(t.label(3).size() == ep.voxels());
    CHECK(std::equal(t.labels.begin(), t.labels.end(), ep.labels.begin()));
    CHECK_THROWS(t.label(4));
}

TEST_CASE("dataset manifest") {
    auto cfg = small_config();
    auto dir_a = scratch_dir("ds_a");
    auto dir_b = scratch_dir("ds_b");
    auto m = make_dataset(cfg, 4, 100, dir_a);
    CHECK(m.entries.size() == 4);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir_a)) files += e.path().extension() == ".twld";
    CHECK(files == 4);
    CHECK(m.split("train").size() == 3);
    CHECK(m.split("val").size() == 1);

    auto again = make_dataset(cfg, 4, 100, dir_b);
    CHECK(again.fingerprint == m.fingerprint);
    CHECK(again.entries == m.entries);

    auto read = read_manifest(dir_a);
    CHECK(read.fingerprint == m.fingerprint);
    CHECK(read.entries == m.entries);
    CHECK(load_split(read, "train").size() == 3);

    std::set<std::string> digests;
    for (const auto& e : m.entries) digests.insert(e.sha256);
    CHECK(digests.size() == 4);

    CHECK_THROWS(make_dataset(cfg, 0, 1, dir_b));
    CHECK_THROWS(read_manifest(dir_a / "missing.tsv"));
}
