// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mssm/grad/finite_diff.hpp"
#include "mssm/nn/blocks.hpp"

using namespace mssm;
using grad::RngState;
using grad::Shape;
using grad::Value;

namespace {

double max_abs_diff(const Value& a, const Value& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::vector<Value> params_of(const nn::ParamGroup& g) {
    std::vector<Value> out;
    for (const auto& e : g.entries()) out.push_back(e.value);
    return out;
}

// Direct nested-loop cross-correlation.
std::vector<double> conv_reference(const Value& x, const Value& k, const Value& b, std::size_t stride,
                                   std::size_t pad) {
    std::size_t ci = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    std::size_t co = k.shape()[0], kh = k.shape()[2], kw = k.shape()[3];
    std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> out(co * oh * ow, 0.0);
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
                double acc = b.defined() ? b[o] : 0.0;
                for (std::size_t c = 0; c < ci; ++c)
                    for (std::size_t dy = 0; dy < kh; ++dy)
                        for (std::size_t dx = 0; dx < kw; ++dx) {
                            long iy = static_cast<long>(y * stride + dy) - static_cast<long>(pad);
                            long ix = static_cast<long>(xx * stride + dx) - static_cast<long>(pad);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                            acc += x[(c * h + iy) * w + ix] * k[((o * ci + c) * kh + dy) * kw + dx];
                        }
                out[(o * oh + y) * ow + xx] = acc;
            }
    return out;
}

}  // namespace

TEST_CASE("layer_norm examples") {
    auto z = nn::layer_norm(Value::vector({1, 1, 1, 1}));
    for (double v : z.data()) CHECK(v == 0.0);

    auto p = nn::layer_norm(Value::vector({-1, 1}));
    CHECK(p[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(p[1] == doctest::Approx(1.0).epsilon(1e-5));

    RngState rng(1);
    auto x = grad::sample_uniform(rng, {64}, -5.0, 5.0);
    auto plain = nn::layer_norm(x);
    double m = 0, v = 0;
    for (double e : plain.data()) m += e;
    m /= 64;
    for (double e : plain.data()) v += (e - m) * (e - m);
    v /= 64;
    CHECK(std::abs(m) < 1e-9);
    // Unit variance up to the 1e-5 epsilon inside the square root.
    double raw_var = 0, raw_m = 0;
    for (double e : x.data()) raw_m += e;
    raw_m /= 64;
    for (double e : x.data()) raw_var += (e - raw_m) * (e - raw_m);
    raw_var /= 64;
    CHECK(std::abs(v - raw_var / (raw_var + nn::kLayerNormEps)) < 1e-9);

    auto y = nn::layer_norm(x, Value::full({64}, 2.0), Value::full({64}, 3.0));
    double ym = 0, yv = 0;
    for (double e : y.data()) ym += e;
    ym /= 64;
    for (double e : y.data()) yv += (e - ym) * (e - ym);
    CHECK(ym == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(std::sqrt(yv / 64) == doctest::Approx(2.0).epsilon(1e-5));

    CHECK_THROWS_AS(nn::layer_norm(Value::zeros({0})), grad::ShapeError);
    auto single = nn::layer_norm(Value::vector({5.0}));
    CHECK(single[0] == 0.0);
}

TEST_CASE("mln under identity modulation equals layer_norm") {
    RngState rng(2);
    nn::ParamGroup g("mln");
    auto xi1 = nn::add_linear(g, "xi1", 3, 6, rng);
    auto xi2 = nn::add_linear(g, "xi2", 3, 6, rng);
    for (auto& w : {xi1.weight, xi2.weight, xi2.bias}) {
        Value h = w;
        std::fill(h.mutable_data().begin(), h.mutable_data().end(), 0.0);
    }
    Value b1 = xi1.bias;
    std::fill(b1.mutable_data().begin(), b1.mutable_data().end(), 1.0);
    auto s = grad::sample_normal(rng, {6});
    nn::MotionContext ctx{{0.7, -1.2}, 1.0};
    auto lhs = nn::mln(s, ctx, xi1, xi2);
    auto rhs = nn::layer_norm(s);
    for (std::size_t i = 0; i < 6; ++i) CHECK(lhs[i] == rhs[i]);
}

TEST_CASE("mln with zero motion uses the bias column only") {
    RngState rng(3);
    nn::ParamGroup g("mln");
    auto xi1 = nn::add_linear(g, "xi1", 3, 4, rng);
    auto xi2 = nn::add_linear(g, "xi2", 3, 4, rng, false);
    Value b1 = xi1.bias;
    for (std::size_t i = 0; i < 4; ++i) b1.mutable_data()[i] = 0.5 + i;
    nn::MotionContext ctx{{0.0, 0.0}, 0.0};
    auto mod = nn::motion_modulation(ctx, xi1, xi2);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(mod.beta[i] == 0.0);
        CHECK(mod.gamma[i] == b1[i]);
    }
}

TEST_CASE("mln errors and gradients") {
    RngState rng(4);
    nn::ParamGroup g("mln");
    auto xi1 = nn::add_linear(g, "xi1", 3, 5, rng);
    auto xi2 = nn::add_linear(g, "xi2", 3, 5, rng);
    nn::MotionContext ctx{{1.0, 0.5}, 1.0};
    CHECK_THROWS_AS(nn::mln(grad::sample_normal(rng, {4}), ctx, xi1, xi2), grad::ShapeError);
    CHECK_THROWS(nn::mln(grad::sample_normal(rng, {5}), nn::MotionContext{{0, 0}, -1.0}, xi1, xi2));

    auto s = grad::sample_normal(rng, {5});
    s.set_requires_grad(true);
    auto params = params_of(g);
    params.push_back(s);
    double err = grad::finite_diff_check([&] { return grad::sum(grad::square(nn::mln(s, ctx, xi1, xi2))); }, params,
                                         1e-5);
    CHECK(err < 1e-6);
    std::vector<Value> w{xi1.weight};
    CHECK(grad::finite_diff_check([&] { return grad::sum(nn::mln(s, ctx, xi1, xi2)); }, w, 1e-5) < 1e-6);
}

TEST_CASE("cross_attention singleton, duplicates, permutation, brute force") {
    RngState rng(5);
    const std::size_t d = 6;
    nn::ParamGroup g("dmb");
    auto p = nn::add_attention(g, d, rng);
    auto q = grad::sample_normal(rng, {d});
    std::vector<Value> bank;
    for (int i = 0; i < 3; ++i) bank.push_back(grad::sample_normal(rng, {d}));

    std::vector<Value> one{bank[0]};
    auto single = nn::cross_attention(q, one, one, p);
    auto wv_v = grad::reshape(grad::matmul(grad::reshape(bank[0], {1, d}), p.wv), {d});
    auto expect = grad::add(q, wv_v);
    CHECK(max_abs_diff(single, expect) == 0.0);

    std::vector<Value> twice{bank[0], bank[0]};
    CHECK(max_abs_diff(nn::cross_attention(q, twice, twice, p), single) < 1e-15);

    auto out = nn::cross_attention(q, bank, bank, p);
    std::vector<Value> perm{bank[2], bank[0], bank[1]};
    CHECK(max_abs_diff(nn::cross_attention(q, perm, perm, p), out) < 1e-12);

    auto w = nn::attention_weights(q, bank, p);
    double wsum = 0;
    for (double e : w.data()) wsum += e;
    CHECK(std::abs(wsum - 1.0) < 1e-12);

    // Independent recomputation with plain loops.
    auto proj = [&](const Value& m, const Value& v) {
        std::vector<double> r(d, 0.0);
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t i = 0; i < d; ++i) r[j] += v[i] * m[i * d + j];
        return r;
    };
    auto pq = proj(p.wq, q);
    std::vector<double> scores;
    for (const auto& k : bank) {
        auto pk = proj(p.wk, k);
        double dot = 0;
        for (std::size_t i = 0; i < d; ++i) dot += pq[i] * pk[i];
        scores.push_back(dot / std::sqrt(static_cast<double>(d)));
    }
    double mx = *std::max_element(scores.begin(), scores.end()), z = 0;
    for (auto& s : scores) z += std::exp(s - mx);
    std::vector<double> ref(q.data().begin(), q.data().end());
    for (std::size_t n = 0; n < bank.size(); ++n) {
        double wn = std::exp(scores[n] - mx) / z;
        auto pv = proj(p.wv, bank[n]);
        for (std::size_t i = 0; i < d; ++i) ref[i] += wn * pv[i];
    }
    for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(out[i] - ref[i]) < 1e-12);

    std::vector<Value> empty;
    CHECK_THROWS(nn::cross_attention(q, empty, empty, p));
    std::vector<Value> two{bank[0], bank[1]};
    CHECK_THROWS(nn::cross_attention(q, bank, two, p));
}

TEST_CASE("cross_attention gradients") {
    RngState rng(6);
    const std::size_t d = 4;
    nn::ParamGroup g("dmb");
    auto p = nn::add_attention(g, d, rng);
    auto q = grad::sample_normal(rng, {d});
    q.set_requires_grad(true);
    std::vector<Value> bank;
    for (int i = 0; i < 3; ++i) {
        bank.push_back(grad::sample_normal(rng, {d}));
        bank.back().set_requires_grad(true);
    }
    auto params = params_of(g);
    params.push_back(q);
    for (auto& b : bank) params.push_back(b);
    auto c = grad::sample_normal(rng, {d});
    double err = grad::finite_diff_check([&] { return grad::sum(grad::mul(nn::cross_attention(q, bank, bank, p), c)); },
                                         params, 1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("gru_cell gate semantics") {
    RngState rng(7);
    const std::size_t d = 2, in = 3;
    nn::ParamGroup g("transition");
    auto p = nn::add_gru(g, in, d, rng);
    auto h = Value::vector({0.5, -0.5});
    auto x = grad::sample_normal(rng, {in});

    SUBCASE("saturated update gate keeps h") {
        Value b = p.bias;
        for (std::size_t i = 0; i < d; ++i) b.mutable_data()[i] = 50.0;
        auto out = nn::gru_cell(h, x, p);
        for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(out[i] - h[i]) < 1e-12);
    }
    SUBCASE("zero parameters: z = r = 0.5, n = 0") {
        for (auto v : {p.w_in, p.w_h, p.bias}) std::fill(v.mutable_data().begin(), v.mutable_data().end(), 0.0);
        auto out = nn::gru_cell(h, x, p);
        // (1 - 0.5) * tanh(0) + 0.5 * h
        CHECK(out[0] == 0.25);
        CHECK(out[1] == -0.25);
    }
    SUBCASE("output stays in (-1, 1)") {
        for (int i = 0; i < 20; ++i) {
            auto hh = grad::sample_uniform(rng, {d}, -0.999, 0.999);
            auto xx = grad::scale(grad::sample_normal(rng, {in}), 10.0);
            auto out = nn::gru_cell(hh, xx, p);
            for (double v : out.data()) CHECK(std::abs(v) < 1.0);
        }
    }
    CHECK_THROWS_AS(nn::gru_cell(Value::zeros({3}), x, p), grad::ShapeError);
    CHECK_THROWS_AS(nn::gru_cell(h, Value::zeros({2}), p), grad::ShapeError);
}

TEST_CASE("gradient through four chained gru cells") {
    RngState rng(8);
    const std::size_t d = 3, in = 2;
    nn::ParamGroup g("transition");
    auto p = nn::add_gru(g, in, d, rng);
    Value bias = p.bias;
    for (auto& b : bias.mutable_data()) b = rng.uniform01() - 0.5;
    auto h0 = grad::sample_uniform(rng, {d}, -0.5, 0.5);
    h0.set_requires_grad(true);
    std::vector<Value> xs;
    for (int t = 0; t < 4; ++t) xs.push_back(grad::sample_normal(rng, {in}));
    auto params = params_of(g);
    params.push_back(h0);
    double err = grad::finite_diff_check(
        [&] {
            Value h = h0;
            for (const auto& x : xs) h = nn::gru_cell(h, x, p);
            return grad::sum(grad::square(h));
        },
        params, 1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("conv2d identity, counting, and loop oracle") {
    RngState rng(9);
    auto x = grad::sample_normal(rng, {2, 5, 5});
    auto ident = Value::zeros({2, 2, 1, 1});
    ident.mutable_data()[0] = 1.0;
    ident.mutable_data()[3] = 1.0;
    auto y = grad::conv2d(x, ident, Value(), 1, 0);
    CHECK(max_abs_diff(x, y) == 0.0);

    auto ones = nn::conv(Value::full({1, 4, 4}, 1.0), nn::Conv{Value::full({1, 1, 3, 3}, 1.0), Value(), 1, 1});
    const double expect[16] = {4, 6, 6, 4, 6, 9, 9, 6, 6, 9, 9, 6, 4, 6, 6, 4};
    for (std::size_t i = 0; i < 16; ++i) CHECK(ones[i] == expect[i]);

    for (int trial = 0; trial < 20; ++trial) {
        std::size_t ci = 1 + rng.uniform_index(3), co = 1 + rng.uniform_index(3);
        std::size_t h = 3 + rng.uniform_index(6), w = 3 + rng.uniform_index(6);
        std::size_t k = 1 + rng.uniform_index(3), stride = 1 + rng.uniform_index(2), pad = rng.uniform_index(2);
        if (k > std::min(h, w) + 2 * pad) continue;
        auto xx = grad::sample_normal(rng, {ci, h, w});
        auto kk = grad::sample_normal(rng, {co, ci, k, k});
        auto bb = grad::sample_normal(rng, {co});
        auto got = grad::conv2d(xx, kk, bb, stride, pad);
        auto ref = conv_reference(xx, kk, bb, stride, pad);
        REQUIRE(got.size() == ref.size());
        CHECK(got.shape()[1] == (h + 2 * pad - k) / stride + 1);
        double m = 0;
        for (std::size_t i = 0; i < ref.size(); ++i) m = std::max(m, std::abs(got[i] - ref[i]));
        CHECK(m < 1e-12);
    }
}

TEST_CASE("conv layer gradient check") {
    RngState rng(10);
    nn::ParamGroup g("encoder");
    auto c = nn::add_conv(g, "c0", 2, 3, 3, 2, 1, rng);
    Value b = c.bias;
    for (auto& v : b.mutable_data()) v = rng.uniform01();
    auto x = grad::sample_normal(rng, {2, 6, 6});
    x.set_requires_grad(true);
    auto params = params_of(g);
    params.push_back(x);
    CHECK(grad::finite_diff_check([&] { return grad::sum(grad::square(nn::conv(x, c))); }, params, 1e-5) < 1e-6);
}

TEST_CASE("embed lookup and sparsity") {
    RngState rng(11);
    nn::ParamGroup g("prompt");
    auto table = g.add("table", {4, 3}, nn::InitSpec::normal(0.02), rng);
    auto a = nn::embed(table, 2);
    auto b = nn::embed(table, 2);
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK_THROWS_AS(nn::embed(table, 4), std::out_of_range);

    grad::backward(grad::sum(nn::embed(table, 1)));
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 3; ++c) CHECK(table.grad()[r * 3 + c] == (r == 1 ? 1.0 : 0.0));

    // One gradient step moves only the looked-up row.
    std::vector<double> before(table.data().begin(), table.data().end());
    Value t = table;
    for (std::size_t i = 0; i < t.size(); ++i) t.mutable_data()[i] -= 0.1 * t.grad()[i];
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 3; ++c) CHECK((table[r * 3 + c] != before[r * 3 + c]) == (r == 1));
}

TEST_CASE("param store bookkeeping") {
    RngState rng(12);
    nn::ParamStore store;
    auto& enc = store.add_group("encoder");
    nn::add_linear(enc, "l0", 3, 2, rng);
    auto& head = store.add_group("head");
    nn::add_linear(head, "l0", 2, 1, rng);
    CHECK_THROWS_AS(store.add_group("head"), nn::ParamError);
    CHECK_THROWS_AS(enc.add("l0.w", {1}, nn::InitSpec::zeros(), rng), nn::ParamError);
    CHECK(store.parameter_count() == 3 * 2 + 2 + 2 + 1);
    CHECK(store.qualified_names() == std::vector<std::string>{"encoder/l0.w", "encoder/l0.b", "head/l0.w", "head/l0.b"});
    CHECK(store.trainable().size() == 4);
    store.group("encoder").set_frozen(true);
    CHECK(store.trainable().size() == 2);
    CHECK_FALSE(store.lookup("encoder/l0.w").requires_grad());

    auto copy = store.clone();
    Value w = store.lookup("head/l0.w");
    w.mutable_data()[0] += 1.0;
    CHECK(copy.lookup("head/l0.w")[0] != w[0]);
    CHECK(copy.group("encoder").frozen());
    CHECK_THROWS_AS(store.lookup("nope/x"), nn::ParamError);
}
