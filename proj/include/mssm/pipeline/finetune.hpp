// SPDX-License-Identifier: Apache-2.0
//
// Downstream fine-tuning on per-cell binary tasks over the BEV feature grid.
// A BEV cell covers kTaskCell x kTaskCell world cells and is positive when
// any of them is:
//   detect-dynamic  a dynamic voxel in the column at t+1, from o_t
//   map-static      a static voxel in the lowest slab at t, from o_t
// The network is the (optionally pre-trained) BEV encoder, a prompt-driven
// FiLM on its features and a fresh conv head, trained with per-cell
// cross-entropy that weights positives by the training-set
// negative-to-positive ratio.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mssm/pipeline/checkpoint.hpp"
#include "mssm/pipeline/metrics_log.hpp"
#include "mssm/world/episode.hpp"

namespace mssm::pipeline {

inline constexpr const char* kDetectDynamic = "detect-dynamic";
inline constexpr const char* kMapStatic = "map-static";
/// World cells per BEV feature cell along each axis.
inline constexpr std::size_t kTaskCell = 4;

class UnknownTaskError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct FinetuneConfig {
    std::string task = kDetectDynamic;
    std::size_t steps = 300;
    std::size_t batch_size = 1;
    AdamConfig optim{1e-3, 0.9, 0.999, 1e-8};
    std::uint64_t seed = 0;
    bool freeze_encoder = false;
    /// Prompt text or task name; defaults to the task's own prompt.
    std::optional<std::string> prompt;
};

struct FinetuneOptions {
    MetricsLog* log = nullptr;
    /// Receives warnings; defaults to standard error.
    std::function<void(const std::string&)> warn;
};

struct FinetuneResult {
    std::string task;
    std::string metric_name;  // "f1" or "iou"
    double metric = 0.0;      // on the validation episodes
    bool pretrained = false;
    std::vector<double> loss_history;
    std::vector<std::string> warnings;
    nn::ParamStore encoder;  // encoder group after training
    nn::ParamStore head;
};

/// Binary target mask over the (H / kTaskCell, W / kTaskCell) grid at input step t.
std::vector<std::uint8_t> task_target(const world::Episode& ep, const std::string& task, std::size_t t);

/// Input steps usable for a task in one episode.
std::size_t task_frames(const world::Episode& ep, const std::string& task);

/// F1 of two binary masks; 1 when both are empty.
double mask_f1(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> actual);

/// `pretrained` null trains from scratch with identically seeded fresh weights.
FinetuneResult finetune(const Checkpoint* pretrained, const RunConfig& base, const FinetuneConfig& cfg,
                        std::span<const world::Episode> train, std::span<const world::Episode> val,
                        const FinetuneOptions& opts = {});

}  // namespace mssm::pipeline
