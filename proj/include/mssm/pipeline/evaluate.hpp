// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mssm/model/mssm.hpp"
#include "mssm/pipeline/checkpoint.hpp"
#include "mssm/pipeline/metrics_log.hpp"
#include "mssm/world/dataset.hpp"

namespace mssm::pipeline {

/// Accumulates intersection and union counts; an empty union scores 1.
struct IouCounter {
    std::uint64_t intersection = 0;
    std::uint64_t union_ = 0;

    void add(bool predicted, bool actual) {
        intersection += predicted && actual;
        union_ += predicted || actual;
    }
    double value() const {
        return union_ == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(union_);
    }
};

/// IoU of two boolean masks given as nonzero bytes.
double mask_iou(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> actual);

/// Per-class IoU of two class grids.
std::array<double, world::kClassCount> class_iou(std::span<const std::uint8_t> predicted,
                                                 std::span<const std::uint8_t> actual);

/// Per-voxel argmax of (Z*C, H, W) logits.
std::vector<std::uint8_t> argmax_classes(const grad::Value& logits, std::size_t classes);

/// Occupancy of one grid-step, scored by class and by occupied-versus-free.
struct OccupancyScore {
    std::array<IouCounter, world::kClassCount> per_class;
    IouCounter occupied;

    void add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> actual);
    double miou() const;
};

/// Baseline forecasts for horizon k >= 1 after the last observed step.
/// Unknown voxels in the observation count as free.
std::vector<std::uint8_t> copy_last_frame(const world::Episode& ep);
std::vector<std::uint8_t> constant_velocity_forecast(const world::Episode& ep, std::size_t k);

struct EvalMetrics {
    std::size_t episodes = 0;
    std::array<double, world::kClassCount> observed_class_iou{};
    double observed_miou = 0.0;
    double observed_iou = 0.0;        // occupied versus free
    std::vector<double> future_iou;   // per horizon 1..L
    std::vector<double> future_miou;
    double action_mae = 0.0;          // observed steps
    double future_action_mae = 0.0;
    double mean_kl = 0.0;             // per observed step
    std::vector<double> copy_last_iou;
    std::vector<double> copy_last_miou;
    std::vector<double> constant_velocity_iou;
    std::vector<double> constant_velocity_miou;

    NamedValues named() const;
};

struct EvalOptions {
    std::string prompt = model::kOccupancyTask;
};

/// Deterministic: posterior and prior means, static propagation from the last
/// observed frame.
EvalMetrics evaluate(const model::MssmModel& model, std::span<const world::Episode> episodes,
                     const EvalOptions& opts = {});

/// Checks the checkpoint against `cfg` (if given) and the dataset against
/// the checkpoint's world, then evaluates the split.
EvalMetrics evaluate(const Checkpoint& ckpt, const world::Manifest& manifest, const std::string& split,
                     const RunConfig* cfg = nullptr, const EvalOptions& opts = {});

}  // namespace mssm::pipeline
