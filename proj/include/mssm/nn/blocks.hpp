// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "mssm/grad/ops.hpp"
#include "mssm/nn/params.hpp"

namespace mssm::nn {

using grad::Value;

inline constexpr double kLayerNormEps = 1e-5;

/// y = x W + b with W stored [in, out].
struct Linear {
    Value weight;
    Value bias;  // may be undefined
};

Linear add_linear(ParamGroup& group, const std::string& prefix, std::size_t in, std::size_t out, grad::RngState& rng,
                  bool with_bias = true);
Linear linear_of(const ParamGroup& group, const std::string& prefix);
/// x: [in] -> [out]
Value linear(const Value& x, const Linear& layer);

struct Conv {
    Value kernels;  // [Co, Ci, K, K]
    Value bias;     // [Co] or undefined
    std::size_t stride = 1;
    std::size_t pad = 0;
};

Conv add_conv(ParamGroup& group, const std::string& prefix, std::size_t ci, std::size_t co, std::size_t k,
              std::size_t stride, std::size_t pad, grad::RngState& rng, bool with_bias = true);
Conv conv_of(const ParamGroup& group, const std::string& prefix, std::size_t stride, std::size_t pad);
Value conv(const Value& x, const Conv& layer);

/// scale * (x - mean) / sqrt(var + 1e-5) + shift over the whole vector.
/// Undefined scale/shift act as 1 and 0.
Value layer_norm(const Value& x, const Value& scale = {}, const Value& shift = {});

/// Motion attributes of one step: velocity (grid cells per step) and elapsed steps.
struct MotionContext {
    MotionContext() = default;
    MotionContext(std::array<double, 2> v_, double dt_, Value velocity_ = {})
        : v(v_), dt(dt_), velocity(std::move(velocity_)) {}

    std::array<double, 2> v{0.0, 0.0};
    double dt = 1.0;
    /// When defined, a 2-vector that replaces `v` and carries gradient.
    Value velocity;

    /// Flattened (v_x, v_y, dt).
    Value features() const;
};

struct Modulation {
    Value gamma;
    Value beta;
};

Modulation motion_modulation(const MotionContext& ctx, const Linear& xi1, const Linear& xi2);
/// gamma * LN(s) + beta with gamma = xi1(v, dt), beta = xi2(v, dt).
Value mln(const Value& s, const MotionContext& ctx, const Linear& xi1, const Linear& xi2);

/// Single-head projections, each [d, d].
struct AttentionParams {
    Value wq;
    Value wk;
    Value wv;
};

AttentionParams add_attention(ParamGroup& group, std::size_t d, grad::RngState& rng);
AttentionParams attention_of(const ParamGroup& group);

/// Softmax weights <Wq q, Wk k_i> / sqrt(d) over the bank.
Value attention_weights(const Value& query, std::span<const Value> keys, const AttentionParams& p);
/// query + sum_i w_i * Wv v_i
Value cross_attention(const Value& query, std::span<const Value> keys, std::span<const Value> values,
                      const AttentionParams& p);

/// Gated recurrent cell. Gates are ordered (update, reset, candidate) in the
/// concatenated weights: w_in [in, 3D], w_h [D, 3D], bias [3D].
struct GruParams {
    Value w_in;
    Value w_h;
    Value bias;
};

GruParams add_gru(ParamGroup& group, std::size_t input_dim, std::size_t hidden_dim, grad::RngState& rng);
GruParams gru_of(const ParamGroup& group);
/// z = sig(.), r = sig(.), n = tanh(W_n x + b_n + r * U_n h), h' = (1 - z) * n + z * h
Value gru_cell(const Value& h, const Value& input, const GruParams& p);

/// Row `key` of a [rows, dim] table as a [dim] vector.
Value embed(const Value& table, std::size_t key);

}  // namespace mssm::nn
