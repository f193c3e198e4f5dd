// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mssm/pipeline/evaluate.hpp"
#include "mssm/pipeline/run_config.hpp"

namespace mssm::pipeline {

struct LatticePoint {
    std::string label;
    model::ModelFlags flags;
};

/// RSSM, +SSP, +SSP+DMB, +SSP+DMB+MLN, +all+prompt.
std::vector<LatticePoint> flag_lattice();

struct AblationRow {
    std::string label;
    std::string path;  // "rssm_variant" or "observe_sequence"
    double data_fraction = 1.0;
    std::uint64_t seed = 0;
    std::size_t parameters = 0;
    EvalMetrics metrics;
};

struct AblationOptions {
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<double> data_fractions{0.5, 1.0};
    std::function<void(const AblationRow&)> on_row;
};

/// Trains and evaluates every lattice point at every data fraction and seed.
/// Rows sharing a seed share initialization of common parameter groups and
/// the batch stream. A data fraction also scales base.steps, so every row
/// makes the same number of passes over its data.
std::vector<AblationRow> ablate(const RunConfig& base, std::span<const world::Episode> train,
                                std::span<const world::Episode> val, const AblationOptions& opts = {});

/// Machine-readable table: {"rows": [{label, path, data_fraction, seed, parameters, metrics: {...}}]}.
std::string ablation_json(std::span<const AblationRow> rows);

}  // namespace mssm::pipeline
