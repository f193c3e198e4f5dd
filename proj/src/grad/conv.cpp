// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include "mssm/grad/ops.hpp"

namespace mssm::grad {

namespace {

struct ConvGeom {
    std::size_t ci, h, w;
    std::size_t co, kh, kw;
    std::size_t ho, wo;
    std::size_t stride, pad;
};

// Valid output-column range [lo, hi) for kernel column kx.
std::pair<std::size_t, std::size_t> col_range(const ConvGeom& g, std::size_t kx) {
    // iw = ow * stride + kx - pad must lie in [0, w).
    long s = static_cast<long>(g.stride);
    long off = static_cast<long>(kx) - static_cast<long>(g.pad);
    long lo = off >= 0 ? 0 : (-off + s - 1) / s;
    long hi_incl = (static_cast<long>(g.w) - 1 - off);
    long hi = hi_incl < 0 ? 0 : hi_incl / s + 1;
    hi = std::min(hi, static_cast<long>(g.wo));
    lo = std::min(lo, hi);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <class Visit>
void for_each_tap(const ConvGeom& g, Visit&& visit) {
    for (std::size_t o = 0; o < g.co; ++o)
        for (std::size_t c = 0; c < g.ci; ++c)
            for (std::size_t ky = 0; ky < g.kh; ++ky)
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    auto [lo, hi] = col_range(g, kx);
                    if (lo >= hi) continue;
                    std::size_t widx = ((o * g.ci + c) * g.kh + ky) * g.kw + kx;
                    for (std::size_t oy = 0; oy < g.ho; ++oy) {
                        long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                        if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                        // Flat input index read by output column `lo`.
                        std::size_t in0 = (c * g.h + static_cast<std::size_t>(iy)) * g.w + lo * g.stride + kx - g.pad;
                        std::size_t out_row = (o * g.ho + oy) * g.wo;
                        visit(widx, in0, out_row + lo, hi - lo);
                    }
                }
}

}  // namespace

Value conv2d(const Value& x, const Value& kernels, const Value& bias, std::size_t stride, std::size_t pad) {
    if (x.rank() != 3 || kernels.rank() != 4 || kernels.shape()[1] != x.shape()[0] || stride == 0) {
        throw ShapeError("conv2d", {x.shape(), kernels.shape()});
    }
    ConvGeom g{};
    g.ci = x.shape()[0];
    g.h = x.shape()[1];
    g.w = x.shape()[2];
    g.co = kernels.shape()[0];
    g.kh = kernels.shape()[2];
    g.kw = kernels.shape()[3];
    g.stride = stride;
    g.pad = pad;
    if (g.kh > g.h + 2 * pad || g.kw > g.w + 2 * pad) {
        throw ShapeError("conv2d", {x.shape(), kernels.shape()}, "kernel larger than padded input");
    }
    if (bias.defined() && (bias.rank() != 1 || bias.shape()[0] != g.co)) {
        throw ShapeError("conv2d", {x.shape(), kernels.shape(), bias.shape()}, "bias");
    }
    g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
    g.wo = (g.w + 2 * pad - g.kw) / stride + 1;

    std::vector<double> out(g.co * g.ho * g.wo, 0.0);
    if (bias.defined()) {
        for (std::size_t o = 0; o < g.co; ++o)
            std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(o * g.ho * g.wo), g.ho * g.wo, bias[o]);
    }
    const double* xd = x.data().data();
    const double* wd = kernels.data().data();
    for_each_tap(g, [&](std::size_t widx, std::size_t in0, std::size_t out0, std::size_t n) {
        double wv = wd[widx];
        const double* src = xd + in0;
        double* dst = out.data() + out0;
        for (std::size_t j = 0; j < n; ++j) dst[j] += wv * src[j * stride];
    });

    std::vector<Value> parents{x, kernels};
    if (bias.defined()) parents.push_back(bias);
    return make_result("conv2d", {g.co, g.ho, g.wo}, std::move(out), std::move(parents), [g](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        const double* gd = self.grad.data();
        std::size_t stride = g.stride;
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            Node& pb = *self.parents[2];
            for (std::size_t o = 0; o < g.co; ++o) {
                double acc = 0.0;
                for (std::size_t i = 0; i < g.ho * g.wo; ++i) acc += gd[o * g.ho * g.wo + i];
                pb.grad[o] += acc;
            }
        }
        for_each_tap(g, [&](std::size_t widx, std::size_t in0, std::size_t out0, std::size_t n) {
            const double* grow = gd + out0;
            if (pw.requires_grad) {
                const double* src = px.data.data() + in0;
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += grow[j] * src[j * stride];
                pw.grad[widx] += acc;
            }
            if (px.requires_grad) {
                double wv = pw.data[widx];
                double* dst = px.grad.data() + in0;
                for (std::size_t j = 0; j < n; ++j) dst[j * stride] += wv * grow[j];
            }
        });
    });
}

Value upsample_nearest(const Value& x, std::size_t factor) {
    if (x.rank() != 3 || factor == 0) throw ShapeError("upsample-nearest", {x.shape()});
    std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    std::size_t ho = h * factor, wo = w * factor;
    std::vector<double> out(c * ho * wo);
    const auto xd = x.data();
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t z = 0; z < wo; ++z) out[(k * ho + y) * wo + z] = xd[(k * h + y / factor) * w + z / factor];
    return make_result("upsample-nearest", {c, ho, wo}, std::move(out), {x}, [c, h, w, factor](Node& self) {
        Node& p = *self.parents[0];
        std::size_t ho = h * factor, wo = w * factor;
        for (std::size_t k = 0; k < c; ++k)
            for (std::size_t y = 0; y < ho; ++y)
                for (std::size_t z = 0; z < wo; ++z)
                    p.grad[(k * h + y / factor) * w + z / factor] += self.grad[(k * ho + y) * wo + z];
    });
}

}  // namespace mssm::grad
