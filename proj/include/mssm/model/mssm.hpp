// SPDX-License-Identifier: Apache-2.0
//
// Memory state-space world model.
//
// Per observed step t:
//   b_t   = encode(o_t)                   BEV features, H/4 x W/4
//   x_t   = compress(b_t)
//   prior = N(0, I) at t = 1, else MLP(h_t, a_hat_{t-1})
//   post  = MLP(h_t, a_{t-1}, x_t),  s_t = mu + sigma * eps
//   h~_t  = h_t + attend(h_t, bank);  bank <- h_t
//   a_hat_t = policy(h_t, s_t)
//   y_hat_t = decode(h~_t, s_t, b_hat)   b_hat = propagate(b_j), j random in [1, T]
//   h_{t+1} = gru(h~_t, modulate(s_t, motion_t))
//
// Imagination continues from the last observed state with the prior and the
// policy only; b_hat stays frozen.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mssm/grad/rng.hpp"
#include "mssm/model/config.hpp"
#include "mssm/model/memory_bank.hpp"
#include "mssm/model/prompt.hpp"
#include "mssm/nn/blocks.hpp"
#include "mssm/world/episode.hpp"

namespace mssm::model {

using grad::Value;

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Diagonal Gaussian plus one reparameterized draw.
struct Latent {
    Value mu;
    Value sigma;
    Value eps;  // the recorded standard-normal draw
    Value s;    // mu + sigma * eps
};

struct StepOutput {
    Value h;          // history entering the step
    Value h_refined;  // after memory-bank attention
    Latent posterior;
    Latent prior;
    Value action;  // policy output for this step
    Value logits;  // (Z*C, H, W)
};

struct ImaginedStep {
    Value h;
    Value h_refined;
    Latent prior;
    Value action;
    Value logits;
};

/// Everything imagination may see: the last observed latent state, the bank,
/// and the propagated static feature. Holds no observations.
struct RolloutState {
    Value h;
    Value h_refined;
    Value s;
    Value action;  // policy output at the last observed step
    MemoryBank bank;
    Value b_hat;  // undefined without SSP
};

struct ObserveResult {
    std::vector<StepOutput> steps;
    std::size_t ssp_frame = 0;  // zero-based index of the propagated frame
    Value b_hat;
    RolloutState final_state;
};

struct RunOptions {
    bool zero_noise = false;               // eps = 0 everywhere
    bool posterior_equals_prior = false;   // ablation: use the prior in place of the posterior
    bool literal_future = false;           // decode every future step from the last observed state
    bool skip_decode = false;              // latent chain only; logits stay undefined
    std::optional<std::size_t> ssp_frame;  // override the random frame choice
    std::string prompt = kOccupancyTask;
};

class MssmModel {
public:
    MssmModel(const world::WorldConfig& world, const ModelConfig& cfg, std::uint64_t seed);
    /// Adopts existing parameters; their layout must match (world, cfg).
    MssmModel(const world::WorldConfig& world, const ModelConfig& cfg, nn::ParamStore params);

    const world::WorldConfig& world() const { return world_; }
    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    std::size_t feature_rows() const { return world_.H / 4; }
    std::size_t feature_cols() const { return world_.W / 4; }

    /// (Z*C, H, W) observation field -> (C_b, H/4, W/4).
    Value encode_bev(const Value& obs) const;
    Value compress_bev(const Value& b) const;
    Latent posterior(const Value& h, const Value& a_prev, const Value& x, grad::RngState& rng, bool zero_noise,
                     std::size_t step) const;
    Latent prior(const Value& h, const Value& a_hat_prev, grad::RngState& rng, bool zero_noise,
                 std::size_t step) const;
    /// N(0, I) draw used at the first step.
    Latent initial_prior(grad::RngState& rng, bool zero_noise) const;
    Value policy(const Value& h, const Value& s) const;
    /// Attention over the bank with residual; the bank is not modified.
    Value refine_history(const Value& h, const MemoryBank& bank) const;
    Value modulate(const Value& s, const nn::MotionContext& ctx) const;
    Value transition(const Value& h_refined, const Value& s, const nn::MotionContext& ctx) const;
    Value ssp(const Value& b_prime) const;
    Value decode_occupancy(const Value& h_refined, const Value& s, const Value& b_hat,
                           const TaskPrompt& prompt) const;

    ObserveResult observe_sequence(const world::Episode& ep, grad::RngState& rng, const RunOptions& opts = {}) const;
    std::vector<ImaginedStep> imagine(const RolloutState& state, long L, grad::RngState& rng,
                                      const RunOptions& opts = {}) const;

    Value action_value(const world::Action& a) const;
    nn::MotionContext motion_context(const world::Motion& m) const;
    nn::MotionContext motion_context(const Value& action) const;

    MemoryBank new_bank() const { return MemoryBank(cfg_.bank_capacity); }

private:
    void build(std::uint64_t seed);
    Latent gaussian_head(const nn::ParamGroup& g, const Value& in, grad::RngState& rng, bool zero_noise,
                         const char* which, std::size_t step) const;

    world::WorldConfig world_;
    ModelConfig cfg_;
    nn::ParamStore params_;
};

/// Runs observe_sequence on a model built with every optional component off.
ObserveResult rssm_variant(const world::Episode& ep, const MssmModel& model, grad::RngState& rng,
                           const RunOptions& opts = {});

/// Uniform frame index in [0, T) for static scene propagation.
std::size_t select_ssp_frame(grad::RngState& rng, std::size_t T);

/// Draws s = mu + sigma * eps with eps from `rng` (or zero).
Latent reparameterize(const Value& mu, const Value& sigma, grad::RngState& rng, bool zero_noise);

}  // namespace mssm::model
