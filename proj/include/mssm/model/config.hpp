// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "mssm/world/config.hpp"

namespace mssm::model {

enum class Combine { kConcat, kAdd };

/// Optional components. All off gives the plain recurrent state-space model.
struct ModelFlags {
    bool ssp = true;     // static scene propagation into the decoder
    bool dmb = true;     // memory-bank refinement of the history
    bool mln = true;     // motion-aware modulation of the stochastic state
    bool prompt = true;  // task-prompt conditioning of the decoder
    Combine combine = Combine::kConcat;

    static ModelFlags rssm() { return {false, false, false, false, Combine::kConcat}; }
    static ModelFlags full() { return {}; }
    bool is_rssm() const { return !ssp && !dmb && !mln && !prompt; }
    std::string label() const;
};

struct ModelConfig {
    std::size_t D_h = 32;        // deterministic history
    std::size_t D_s = 16;        // stochastic state
    std::size_t D_x = 64;        // compressed observation
    std::size_t C_e = 16;        // first encoder stage
    std::size_t C_b = 16;        // BEV feature channels
    std::size_t C_m = 8;         // expanded latent channels
    std::size_t C_f = 16;        // fused decoder channels
    std::size_t C_u = 16;        // upsampling stage channels
    std::size_t hidden = 64;     // MLP hidden width
    std::size_t prompt_dim = 16;
    std::size_t bank_capacity = 8;
    double sigma_floor = 1e-3;
    ModelFlags flags;

    /// Throws world::ConfigError for impossible combinations.
    void validate(const world::WorldConfig& world) const;
    std::string canonical() const;
};

}  // namespace mssm::model
