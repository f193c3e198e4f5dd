// SPDX-License-Identifier: Apache-2.0
#include "mssm/grad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace mssm::grad {

namespace {

using IndexMap = std::shared_ptr<const std::vector<std::size_t>>;

// True when `small` can be broadcast to `big` under the trailing-alignment rule.
bool broadcastable(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    std::size_t off = big.size() - small.size();
    for (std::size_t i = 0; i < small.size(); ++i) {
        if (small[i] != big[off + i] && small[i] != 1) return false;
    }
    return true;
}

// Maps each flat index of `big` to the flat index of `small` it reads from.
IndexMap broadcast_map(const Shape& small, const Shape& big) {
    std::size_t n = shape_size(big);
    auto map = std::make_shared<std::vector<std::size_t>>(n);
    std::size_t ns = shape_size(small);
    bool suffix = true;
    std::size_t off = big.size() - small.size();
    for (std::size_t i = 0; i < small.size(); ++i) suffix = suffix && small[i] == big[off + i];
    if (suffix) {
        for (std::size_t i = 0; i < n; ++i) (*map)[i] = i % ns;
        return map;
    }
    // Strides of `small` expressed over big's axes (0 where broadcast).
    std::vector<std::size_t> sstride(big.size(), 0);
    std::size_t st = 1;
    for (std::size_t k = small.size(); k-- > 0;) {
        if (small[k] != 1) sstride[off + k] = st;
        st *= small[k];
    }
    std::vector<std::size_t> idx(big.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t s = 0;
        for (std::size_t k = 0; k < big.size(); ++k) s += idx[k] * sstride[k];
        (*map)[i] = s;
        for (std::size_t k = big.size(); k-- > 0;) {
            if (++idx[k] < big[k]) break;
            idx[k] = 0;
        }
    }
    return map;
}

struct BinaryPlan {
    Shape out;
    IndexMap a_map;  // null when a has the output shape
    IndexMap b_map;
};

BinaryPlan plan_binary(const char* op, const Value& a, const Value& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa == sb) return {sa, nullptr, nullptr};
    if (shape_size(sb) <= shape_size(sa) && broadcastable(sb, sa)) return {sa, nullptr, broadcast_map(sb, sa)};
    if (broadcastable(sa, sb)) return {sb, broadcast_map(sa, sb), nullptr};
    throw ShapeError(op, {sa, sb}, "trailing-dimension broadcast rule");
}

// f(x, y) -> out; dfa(x, y, out) and dfb(x, y, out) are local partials.
template <class F, class DA, class DB>
Value binary(const char* op, const Value& a, const Value& b, F f, DA dfa, DB dfb) {
    auto plan = plan_binary(op, a, b);
    std::size_t n = shape_size(plan.out);
    std::vector<double> out(n);
    const auto ad = a.data();
    const auto bd = b.data();
    const std::size_t* am = plan.a_map ? plan.a_map->data() : nullptr;
    const std::size_t* bm = plan.b_map ? plan.b_map->data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[am ? am[i] : i], bd[bm ? bm[i] : i]);
    auto a_map = plan.a_map;
    auto b_map = plan.b_map;
    return make_result(op, plan.out, std::move(out), {a, b}, [a_map, b_map, dfa, dfb](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const std::size_t* am = a_map ? a_map->data() : nullptr;
        const std::size_t* bm = b_map ? b_map->data() : nullptr;
        std::size_t n = self.grad.size();
        for (std::size_t i = 0; i < n; ++i) {
            double g = self.grad[i];
            if (g == 0.0) continue;
            std::size_t ia = am ? am[i] : i;
            std::size_t ib = bm ? bm[i] : i;
            double x = pa.data[ia];
            double y = pb.data[ib];
            if (pa.requires_grad) pa.grad[ia] += g * dfa(x, y, self.data[i]);
            if (pb.requires_grad) pb.grad[ib] += g * dfb(x, y, self.data[i]);
        }
    });
}

// f(x) -> y; df(x, y) is dy/dx.
template <class F, class DF>
Value unary(const char* op, const Value& a, F f, DF df) {
    std::size_t n = a.size();
    std::vector<double> out(n);
    const auto ad = a.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i]);
    return make_result(op, a.shape(), std::move(out), {a}, [df](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * df(p.data[i], self.data[i]);
    });
}

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t n = 1;
    std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t k = 0; k < axis; ++k) r.outer *= s[k];
    r.n = s[axis];
    for (std::size_t k = axis + 1; k < s.size(); ++k) r.inner *= s[k];
    return r;
}

void check_axis(const char* op, const Value& a, std::size_t axis) {
    if (axis >= a.rank()) throw ShapeError(op, {a.shape()}, "axis " + std::to_string(axis) + " out of range");
}

double stable_softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Value add(const Value& a, const Value& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Value sub(const Value& a, const Value& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Value mul(const Value& a, const Value& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

Value scale(const Value& a, double c) {
    return unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Value add_scalar(const Value& a, double c) {
    return unary("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Value neg(const Value& a) { return scale(a, -1.0); }

Value matmul(const Value& a, const Value& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul", {a.shape(), b.shape()});
    }
    std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
    std::vector<double> out(n * m, 0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        double* row = out.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            double av = ad[i * k + p];
            if (av == 0.0) continue;
            const double* brow = bd + p * m;
            for (std::size_t j = 0; j < m; ++j) row[j] += av * brow[j];
        }
    }
    return make_result("matmul", {n, m}, std::move(out), {a, b}, [n, k, m](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const double* g = self.grad.data();
        if (pa.requires_grad) {
            // dA = G * B^T
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* brow = pb.data.data() + p * m;
                    const double* grow = g + i * m;
                    for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                    pa.grad[i * k + p] += acc;
                }
        }
        if (pb.requires_grad) {
            // dB = A^T * G
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double av = pa.data[i * k + p];
                    if (av == 0.0) continue;
                    double* bgrow = pb.grad.data() + p * m;
                    const double* grow = g + i * m;
                    for (std::size_t j = 0; j < m; ++j) bgrow[j] += av * grow[j];
                }
        }
    });
}

Value sum(const Value& a, std::optional<std::size_t> axis) {
    if (!axis) {
        double s = 0.0;
        for (double v : a.data()) s += v;
        return make_result("sum", {1}, {s}, {a}, [](Node& self) {
            Node& p = *self.parents[0];
            double g = self.grad[0];
            for (double& v : p.grad) v += g;
        });
    }
    check_axis("sum", a, *axis);
    auto sp = split_axis(a.shape(), *axis);
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(*axis));
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    const auto ad = a.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t j = 0; j < sp.n; ++j)
            for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += ad[(o * sp.n + j) * sp.inner + i];
    return make_result("sum", std::move(out_shape), std::move(out), {a}, [sp](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t j = 0; j < sp.n; ++j)
                for (std::size_t i = 0; i < sp.inner; ++i) p.grad[(o * sp.n + j) * sp.inner + i] += self.grad[o * sp.inner + i];
    });
}

Value mean(const Value& a, std::optional<std::size_t> axis) {
    std::size_t count = axis ? (check_axis("mean", a, *axis), a.shape()[*axis]) : a.size();
    if (count == 0) throw ShapeError("mean", {a.shape()}, "empty reduction");
    return scale(sum(a, axis), 1.0 / static_cast<double>(count));
}

Value exp(const Value& a) {
    return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Value log(const Value& a) {
    return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Value tanh(const Value& a) {
    return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Value sigmoid(const Value& a) {
    return unary("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Value softplus(const Value& a) {
    return unary("softplus", a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Value relu(const Value& a) {
    return unary(
        "relu", a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Value square(const Value& a) {
    return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Value abs(const Value& a) { return add(relu(a), relu(neg(a))); }

Value slice(const Value& a, std::size_t axis, std::size_t begin, std::size_t end) {
    check_axis("slice", a, axis);
    if (begin > end || end > a.shape()[axis]) {
        throw ShapeError("slice", {a.shape()}, "range [" + std::to_string(begin) + "," + std::to_string(end) + ")");
    }
    auto sp = split_axis(a.shape(), axis);
    std::size_t len = end - begin;
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    std::vector<double> out(sp.outer * len * sp.inner);
    const auto ad = a.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy_n(ad.begin() + static_cast<std::ptrdiff_t>((o * sp.n + begin) * sp.inner), len * sp.inner,
                    out.begin() + static_cast<std::ptrdiff_t>(o * len * sp.inner));
    return make_result("slice", std::move(out_shape), std::move(out), {a}, [sp, begin, len](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < len * sp.inner; ++i)
                p.grad[(o * sp.n + begin) * sp.inner + i] += self.grad[o * len * sp.inner + i];
    });
}

Value concat(std::span<const Value> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat", {}, "no inputs");
    const Shape& first = parts[0].shape();
    check_axis("concat", parts[0], axis);
    std::vector<Shape> shapes;
    std::size_t total = 0;
    for (const auto& p : parts) {
        shapes.push_back(p.shape());
        if (p.rank() != first.size()) throw ShapeError("concat", shapes, "rank");
        for (std::size_t k = 0; k < first.size(); ++k) {
            if (k != axis && p.shape()[k] != first[k]) throw ShapeError("concat", shapes, "non-axis extent");
        }
        total += p.shape()[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total;
    auto sp = split_axis(out_shape, axis);
    std::vector<std::size_t> lens;
    std::vector<double> out(shape_size(out_shape));
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::size_t len = p.shape()[axis];
        lens.push_back(len);
        const auto pd = p.data();
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * len * sp.inner), len * sp.inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * total + offset) * sp.inner));
        offset += len;
    }
    std::vector<Value> parents(parts.begin(), parts.end());
    return make_result("concat", std::move(out_shape), std::move(out), std::move(parents),
                       [sp, lens, total](Node& self) {
                           std::size_t offset = 0;
                           for (std::size_t q = 0; q < lens.size(); ++q) {
                               Node& p = *self.parents[q];
                               std::size_t len = lens[q];
                               if (p.requires_grad) {
                                   for (std::size_t o = 0; o < sp.outer; ++o)
                                       for (std::size_t i = 0; i < len * sp.inner; ++i)
                                           p.grad[o * len * sp.inner + i] += self.grad[(o * total + offset) * sp.inner + i];
                               }
                               offset += len;
                           }
                       });
}

Value reshape(const Value& a, Shape shape) {
    if (shape_size(shape) != a.size()) throw ShapeError("reshape", {a.shape(), shape});
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_result("reshape", std::move(shape), std::move(out), {a}, [](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    });
}

Value broadcast_to(const Value& a, const Shape& shape) {
    if (a.shape() == shape) return reshape(a, shape);
    if (!broadcastable(a.shape(), shape)) throw ShapeError("broadcast", {a.shape(), shape});
    auto map = broadcast_map(a.shape(), shape);
    std::vector<double> out(map->size());
    const auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[(*map)[i]];
    return make_result("broadcast", shape, std::move(out), {a}, [map](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[(*map)[i]] += self.grad[i];
    });
}

Value softmax(const Value& a, std::size_t axis) {
    check_axis("softmax-over-axis", a, axis);
    auto sp = split_axis(a.shape(), axis);
    std::vector<double> out(a.size());
    const auto ad = a.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, ad[at(j)]);
            double z = 0.0;
            for (std::size_t j = 0; j < sp.n; ++j) z += (out[at(j)] = std::exp(ad[at(j)] - mx));
            for (std::size_t j = 0; j < sp.n; ++j) out[at(j)] /= z;
        }
    return make_result("softmax-over-axis", a.shape(), std::move(out), {a}, [sp](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
                double dot = 0.0;
                for (std::size_t j = 0; j < sp.n; ++j) dot += self.grad[at(j)] * self.data[at(j)];
                for (std::size_t j = 0; j < sp.n; ++j) p.grad[at(j)] += self.data[at(j)] * (self.grad[at(j)] - dot);
            }
    });
}

Value log_softmax(const Value& a, std::size_t axis) {
    check_axis("log-softmax-over-axis", a, axis);
    auto sp = split_axis(a.shape(), axis);
    std::vector<double> out(a.size());
    const auto ad = a.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, ad[at(j)]);
            double z = 0.0;
            for (std::size_t j = 0; j < sp.n; ++j) z += std::exp(ad[at(j)] - mx);
            double lz = mx + std::log(z);
            for (std::size_t j = 0; j < sp.n; ++j) out[at(j)] = ad[at(j)] - lz;
        }
    return make_result("log-softmax-over-axis", a.shape(), std::move(out), {a}, [sp](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
                double gs = 0.0;
                for (std::size_t j = 0; j < sp.n; ++j) gs += self.grad[at(j)];
                for (std::size_t j = 0; j < sp.n; ++j) p.grad[at(j)] += self.grad[at(j)] - std::exp(self.data[at(j)]) * gs;
            }
    });
}

Value apply_primitive(std::string_view tag, std::span<const Value> inputs, const OpAttrs& attrs) {
    auto need = [&](std::size_t n) {
        if (inputs.size() != n) {
            std::vector<Shape> shapes;
            for (const auto& v : inputs) shapes.push_back(v.shape());
            throw ShapeError(std::string(tag), shapes, "expected " + std::to_string(n) + " inputs");
        }
    };
    auto axis_or_throw = [&]() {
        if (!attrs.axis) throw ShapeError(std::string(tag), {}, "axis attribute required");
        return *attrs.axis;
    };
    if (tag == "add") return need(2), add(inputs[0], inputs[1]);
    if (tag == "sub") return need(2), sub(inputs[0], inputs[1]);
    if (tag == "mul") return need(2), mul(inputs[0], inputs[1]);
    if (tag == "matmul") return need(2), matmul(inputs[0], inputs[1]);
    if (tag == "sum") return need(1), sum(inputs[0], attrs.axis);
    if (tag == "mean") return need(1), mean(inputs[0], attrs.axis);
    if (tag == "exp") return need(1), exp(inputs[0]);
    if (tag == "log") return need(1), log(inputs[0]);
    if (tag == "tanh") return need(1), tanh(inputs[0]);
    if (tag == "sigmoid") return need(1), sigmoid(inputs[0]);
    if (tag == "softplus") return need(1), softplus(inputs[0]);
    if (tag == "relu") return need(1), relu(inputs[0]);
    if (tag == "square") return need(1), square(inputs[0]);
    if (tag == "slice") return need(1), slice(inputs[0], axis_or_throw(), attrs.begin, attrs.end);
    if (tag == "concat") return concat(inputs, axis_or_throw());
    if (tag == "reshape") return need(1), reshape(inputs[0], attrs.shape);
    if (tag == "broadcast") return need(1), broadcast_to(inputs[0], attrs.shape);
    if (tag == "softmax-over-axis") return need(1), softmax(inputs[0], axis_or_throw());
    if (tag == "log-softmax-over-axis") return need(1), log_softmax(inputs[0], axis_or_throw());
    if (tag == "conv2d") {
        if (inputs.size() == 2) return conv2d(inputs[0], inputs[1], Value(), attrs.stride, attrs.pad);
        return need(3), conv2d(inputs[0], inputs[1], inputs[2], attrs.stride, attrs.pad);
    }
    if (tag == "upsample-nearest") return need(1), upsample_nearest(inputs[0], attrs.factor);
    throw UnknownOpError(std::string(tag));
}

}  // namespace mssm::grad
