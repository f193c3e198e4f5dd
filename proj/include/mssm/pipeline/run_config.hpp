// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and its line-oriented text form:
//
//   # comment
//   world.H = 32
//   flags.dmb = false
//   optim.lr = 2e-4
//
// Every key is listed by RunConfig::keys(); unknown keys are rejected.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mssm/model/config.hpp"
#include "mssm/world/config.hpp"

namespace mssm::pipeline {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct RunConfig {
    world::WorldConfig world;
    model::ModelConfig model;
    AdamConfig optim;
    std::size_t steps = 1000;
    std::size_t batch_size = 1;
    double kl_weight = 1.0;
    std::uint64_t seed = 0;
    double data_fraction = 1.0;  // leading share of the training split used

    void validate() const;

    /// Sets one key from its text value; throws world::ConfigError.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static const std::vector<std::string>& keys();

    /// All keys, one `key = value` line each, in keys() order.
    std::string to_text() const;
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);

    /// sha256 over the world and model architecture; optimizer and schedule
    /// settings are excluded so a checkpoint can be trained further.
    std::string fingerprint() const;
};

/// Applies `key=value` overrides in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

}  // namespace mssm::pipeline
