// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mssm/nn/params.hpp"
#include "mssm/pipeline/run_config.hpp"

namespace mssm::pipeline {

struct Moments {
    std::vector<double> m;
    std::vector<double> v;
};

struct AdamState {
    std::uint64_t step = 0;
    std::map<std::string, Moments> moments;  // by qualified parameter name
};

/// One bias-corrected update of `param` in place; `t` is the 1-based step.
void adam_step(std::span<double> param, std::span<const double> grad, Moments& moments, std::uint64_t t,
               const AdamConfig& cfg);

/// Advances state.step and updates every trainable parameter from its
/// accumulated gradient. Frozen groups are untouched.
void adam_step(nn::ParamStore& params, AdamState& state, const AdamConfig& cfg);

}  // namespace mssm::pipeline
