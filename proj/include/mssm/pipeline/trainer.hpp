// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mssm/objective/losses.hpp"
#include "mssm/pipeline/checkpoint.hpp"
#include "mssm/pipeline/metrics_log.hpp"
#include "mssm/world/dataset.hpp"

namespace mssm::pipeline {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Batch-averaged loss components of one optimizer step.
struct StepRecord {
    std::size_t step = 0;  // 1-based
    double kl = 0.0;
    double past_occ_ce = 0.0;
    double past_act_l1 = 0.0;
    double future_occ_ce = 0.0;
    double future_act_l1 = 0.0;
    double total = 0.0;

    NamedValues named() const;
};

struct PretrainOptions {
    MetricsLog* log = nullptr;
    std::function<void(const StepRecord&)> on_step;
};

struct PretrainResult {
    Checkpoint checkpoint;
    std::vector<StepRecord> history;
};

/// Observes the episode, imagines its future and assembles the loss. Models
/// with every optional component off go through model::rssm_variant.
objective::LossBreakdown episode_loss(const model::MssmModel& model, const world::Episode& ep, grad::RngState& rng,
                                      const objective::LossWeights& weights);

/// Leading share of `episodes` kept by cfg.data_fraction (at least one).
std::span<const world::Episode> training_subset(std::span<const world::Episode> episodes, double fraction);

PretrainResult pretrain(const RunConfig& cfg, std::span<const world::Episode> train, const PretrainOptions& opts = {});

/// Loads the manifest's train split, checks its world fingerprint, and trains.
PretrainResult pretrain(const RunConfig& cfg, const world::Manifest& manifest, const PretrainOptions& opts = {});

}  // namespace mssm::pipeline
