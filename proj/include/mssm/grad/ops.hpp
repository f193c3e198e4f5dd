// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives over Value.
//
// Broadcasting rule for the elementwise binary ops (add, sub, mul): shapes are
// aligned at the trailing end; the output takes the shape of the higher-rank
// (or larger) operand, and every aligned extent of the other operand must be
// equal or 1. Broadcasting both operands at once is rejected; reshape first.
#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mssm/grad/value.hpp"

namespace mssm::grad {

Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double c);
Value add_scalar(const Value& a, double c);
Value neg(const Value& a);

/// [n,k] x [k,m] -> [n,m]
Value matmul(const Value& a, const Value& b);

/// Reduce-all yields shape {1}; an axis reduction drops that axis.
Value sum(const Value& a, std::optional<std::size_t> axis = std::nullopt);
Value mean(const Value& a, std::optional<std::size_t> axis = std::nullopt);

Value exp(const Value& a);
Value log(const Value& a);
Value tanh(const Value& a);
Value sigmoid(const Value& a);
Value softplus(const Value& a);
Value relu(const Value& a);
Value square(const Value& a);
/// relu(a) + relu(-a); subgradient 0 at 0.
Value abs(const Value& a);

Value slice(const Value& a, std::size_t axis, std::size_t begin, std::size_t end);
Value concat(std::span<const Value> parts, std::size_t axis);
Value reshape(const Value& a, Shape shape);
Value broadcast_to(const Value& a, const Shape& shape);
Value softmax(const Value& a, std::size_t axis);
Value log_softmax(const Value& a, std::size_t axis);

/// Cross-correlation of a [Ci,H,W] grid with [Co,Ci,Kh,Kw] kernels. `bias` may
/// be undefined. Output extent per axis is (in + 2*pad - k) / stride + 1.
Value conv2d(const Value& x, const Value& kernels, const Value& bias, std::size_t stride, std::size_t pad);
/// Nearest-neighbour upsampling of a [C,H,W] grid by an integer factor.
Value upsample_nearest(const Value& x, std::size_t factor);

struct OpAttrs {
    std::optional<std::size_t> axis;
    std::size_t begin = 0;
    std::size_t end = 0;
    Shape shape;
    std::size_t stride = 1;
    std::size_t pad = 0;
    std::size_t factor = 2;
};

/// Tag-dispatched entry point. Tags: add, sub, mul, matmul, sum, mean, exp,
/// log, tanh, sigmoid, softplus, relu, slice, concat, reshape, broadcast,
/// softmax-over-axis, log-softmax-over-axis, square, conv2d, upsample-nearest.
Value apply_primitive(std::string_view tag, std::span<const Value> inputs, const OpAttrs& attrs = {});

}  // namespace mssm::grad
