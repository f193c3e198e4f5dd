// SPDX-License-Identifier: Apache-2.0
#include "mssm/nn/blocks.hpp"

#include <cmath>

namespace mssm::nn {

using grad::Shape;

Linear add_linear(ParamGroup& group, const std::string& prefix, std::size_t in, std::size_t out, grad::RngState& rng,
                  bool with_bias) {
    Linear l;
    l.weight = group.add(prefix + ".w", {in, out}, InitSpec::uniform_fan_in(in), rng);
    if (with_bias) l.bias = group.add(prefix + ".b", {out}, InitSpec::zeros(), rng);
    return l;
}

Linear linear_of(const ParamGroup& group, const std::string& prefix) {
    Linear l;
    l.weight = group.at(prefix + ".w");
    if (group.has(prefix + ".b")) l.bias = group.at(prefix + ".b");
    return l;
}

Value linear(const Value& x, const Linear& layer) {
    const auto& ws = layer.weight.shape();
    if (x.rank() != 1 || ws.size() != 2 || x.shape()[0] != ws[0]) {
        throw grad::ShapeError("linear", {x.shape(), ws});
    }
    Value y = grad::reshape(grad::matmul(grad::reshape(x, {1, ws[0]}), layer.weight), {ws[1]});
    if (layer.bias.defined()) y = grad::add(y, layer.bias);
    return y;
}

Conv add_conv(ParamGroup& group, const std::string& prefix, std::size_t ci, std::size_t co, std::size_t k,
              std::size_t stride, std::size_t pad, grad::RngState& rng, bool with_bias) {
    Conv c;
    c.kernels = group.add(prefix + ".k", {co, ci, k, k}, InitSpec::uniform_fan_in(ci * k * k), rng);
    if (with_bias) c.bias = group.add(prefix + ".b", {co}, InitSpec::zeros(), rng);
    c.stride = stride;
    c.pad = pad;
    return c;
}

Conv conv_of(const ParamGroup& group, const std::string& prefix, std::size_t stride, std::size_t pad) {
    Conv c;
    c.kernels = group.at(prefix + ".k");
    if (group.has(prefix + ".b")) c.bias = group.at(prefix + ".b");
    c.stride = stride;
    c.pad = pad;
    return c;
}

Value conv(const Value& x, const Conv& layer) { return grad::conv2d(x, layer.kernels, layer.bias, layer.stride, layer.pad); }

Value layer_norm(const Value& x, const Value& scale, const Value& shift) {
    if (x.size() == 0) throw grad::ShapeError("layer_norm", {x.shape()}, "empty input");
    Value centered = grad::sub(x, grad::mean(x));
    Value var = grad::mean(grad::square(centered));
    Value inv_std = grad::exp(grad::scale(grad::log(grad::add_scalar(var, kLayerNormEps)), -0.5));
    Value y = grad::mul(centered, inv_std);
    if (scale.defined()) y = grad::mul(y, scale);
    if (shift.defined()) y = grad::add(y, shift);
    return y;
}

Value MotionContext::features() const {
    if (!velocity.defined()) return Value::vector({v[0], v[1], dt});
    std::vector<Value> parts{velocity, Value::vector({dt})};
    return grad::concat(parts, 0);
}

Modulation motion_modulation(const MotionContext& ctx, const Linear& xi1, const Linear& xi2) {
    if (ctx.dt < 0.0) throw std::invalid_argument("motion context: dt must be >= 0");
    Value f = ctx.features();
    return {linear(f, xi1), linear(f, xi2)};
}

Value mln(const Value& s, const MotionContext& ctx, const Linear& xi1, const Linear& xi2) {
    auto mod = motion_modulation(ctx, xi1, xi2);
    if (mod.gamma.shape() != s.shape() || mod.beta.shape() != s.shape()) {
        throw grad::ShapeError("mln", {s.shape(), mod.gamma.shape(), mod.beta.shape()});
    }
    return layer_norm(s, mod.gamma, mod.beta);
}

AttentionParams add_attention(ParamGroup& group, std::size_t d, grad::RngState& rng) {
    AttentionParams p;
    p.wq = group.add("wq", {d, d}, InitSpec::uniform_fan_in(d), rng);
    p.wk = group.add("wk", {d, d}, InitSpec::uniform_fan_in(d), rng);
    p.wv = group.add("wv", {d, d}, InitSpec::uniform_fan_in(d), rng);
    return p;
}

AttentionParams attention_of(const ParamGroup& group) { return {group.at("wq"), group.at("wk"), group.at("wv")}; }

namespace {

Value stack_rows(std::span<const Value> rows, std::size_t d) {
    std::vector<Value> parts;
    parts.reserve(rows.size());
    for (const auto& r : rows) {
        if (r.rank() != 1 || r.shape()[0] != d) throw grad::ShapeError("cross_attention", {r.shape()}, "bank entry");
        parts.push_back(grad::reshape(r, {1, d}));
    }
    return grad::concat(parts, 0);
}

}  // namespace

Value attention_weights(const Value& query, std::span<const Value> keys, const AttentionParams& p) {
    if (keys.empty()) throw std::invalid_argument("cross_attention: empty memory bank");
    std::size_t d = query.shape()[0];
    Value q = grad::matmul(grad::reshape(query, {1, d}), p.wq);   // [1, d]
    Value k = grad::matmul(stack_rows(keys, d), p.wk);              // [n, d]
    Value scores = grad::matmul(k, grad::reshape(q, {d, 1}));      // [n, 1]
    scores = grad::scale(grad::reshape(scores, {keys.size()}), 1.0 / std::sqrt(static_cast<double>(d)));
    return grad::softmax(scores, 0);
}

Value cross_attention(const Value& query, std::span<const Value> keys, std::span<const Value> values,
                      const AttentionParams& p) {
    if (keys.size() != values.size()) throw std::invalid_argument("cross_attention: |keys| != |values|");
    if (query.rank() != 1) throw grad::ShapeError("cross_attention", {query.shape()}, "query must be a vector");
    std::size_t d = query.shape()[0];
    Value w = attention_weights(query, keys, p);
    Value v = grad::matmul(stack_rows(values, d), p.wv);  // [n, d]
    Value mixed = grad::matmul(grad::reshape(w, {1, keys.size()}), v);
    return grad::add(query, grad::reshape(mixed, {d}));
}

GruParams add_gru(ParamGroup& group, std::size_t input_dim, std::size_t hidden_dim, grad::RngState& rng) {
    GruParams p;
    p.w_in = group.add("w_in", {input_dim, 3 * hidden_dim}, InitSpec::uniform_fan_in(input_dim), rng);
    p.w_h = group.add("w_h", {hidden_dim, 3 * hidden_dim}, InitSpec::uniform_fan_in(hidden_dim), rng);
    p.bias = group.add("bias", {3 * hidden_dim}, InitSpec::zeros(), rng);
    return p;
}

GruParams gru_of(const ParamGroup& group) { return {group.at("w_in"), group.at("w_h"), group.at("bias")}; }

Value gru_cell(const Value& h, const Value& input, const GruParams& p) {
    if (h.rank() != 1 || input.rank() != 1) throw grad::ShapeError("gru_cell", {h.shape(), input.shape()});
    std::size_t d = h.shape()[0];
    if (p.w_h.shape() != Shape{d, 3 * d} || p.w_in.shape() != Shape{input.shape()[0], 3 * d}) {
        throw grad::ShapeError("gru_cell", {h.shape(), input.shape(), p.w_in.shape(), p.w_h.shape()});
    }
    Value xi = grad::add(grad::reshape(grad::matmul(grad::reshape(input, {1, input.shape()[0]}), p.w_in), {3 * d}),
                         p.bias);
    Value hh = grad::reshape(grad::matmul(grad::reshape(h, {1, d}), p.w_h), {3 * d});
    Value z = grad::sigmoid(grad::add(grad::slice(xi, 0, 0, d), grad::slice(hh, 0, 0, d)));
    Value r = grad::sigmoid(grad::add(grad::slice(xi, 0, d, 2 * d), grad::slice(hh, 0, d, 2 * d)));
    Value n = grad::tanh(grad::add(grad::slice(xi, 0, 2 * d, 3 * d), grad::mul(r, grad::slice(hh, 0, 2 * d, 3 * d))));
    // (1 - z) * n + z * h  ==  n + z * (h - n)
    return grad::add(n, grad::mul(z, grad::sub(h, n)));
}

Value embed(const Value& table, std::size_t key) {
    if (table.rank() != 2) throw grad::ShapeError("embed", {table.shape()});
    if (key >= table.shape()[0]) {
        throw std::out_of_range("embed: key " + std::to_string(key) + " outside table of " +
                                std::to_string(table.shape()[0]) + " rows");
    }
    return grad::reshape(grad::slice(table, 0, key, key + 1), {table.shape()[1]});
}

}  // namespace mssm::nn
