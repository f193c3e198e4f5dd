// SPDX-License-Identifier: Apache-2.0
#include "mssm/objective/losses.hpp"

#include <array>
#include <cmath>
#include <string>

#include "mssm/grad/ops.hpp"
#include "mssm/grad/rng.hpp"

namespace mssm::objective {

namespace g = mssm::grad;

namespace {

void check_floor(const Value& sigma, double floor, const char* which) {
    for (double s : sigma.data()) {
        if (!(s >= floor)) {
            throw LossError(std::string("kl_diag_gaussian: ") + which + " sigma " + std::to_string(s) +
                            " below floor " + std::to_string(floor));
        }
    }
}

}  // namespace

Value kl_diag_gaussian(const Value& mu_q, const Value& sigma_q, const Value& mu_p, const Value& sigma_p, double floor) {
    if (mu_q.shape() != sigma_q.shape() || mu_q.shape() != mu_p.shape() || mu_q.shape() != sigma_p.shape()) {
        throw g::ShapeError("kl_diag_gaussian", {mu_q.shape(), sigma_q.shape(), mu_p.shape(), sigma_p.shape()});
    }
    check_floor(sigma_q, floor, "q");
    check_floor(sigma_p, floor, "p");
    // With r = sigma_q / sigma_p and d = (mu_q - mu_p) / sigma_p:
    //   KL = sum(-log r + r^2 / 2 + d^2 / 2 - 1/2), exactly 0 when q == p.
    Value log_r = g::sub(g::log(sigma_q), g::log(sigma_p));
    Value d = g::mul(g::sub(mu_q, mu_p), g::exp(g::neg(g::log(sigma_p))));
    Value per = g::add_scalar(g::sub(g::scale(g::add(g::square(g::exp(log_r)), g::square(d)), 0.5), log_r), -0.5);
    return g::sum(per);
}

KlEstimate kl_monte_carlo(std::span<const double> mu_q, std::span<const double> sigma_q, std::span<const double> mu_p,
                          std::span<const double> sigma_p, std::size_t n, std::uint64_t seed) {
    if (n < 1000) throw LossError("kl_monte_carlo: need n >= 1000");
    std::size_t d = mu_q.size();
    if (sigma_q.size() != d || mu_p.size() != d || sigma_p.size() != d) throw LossError("kl_monte_carlo: size mismatch");
    g::RngState rng(seed);
    double mean = 0.0, m2 = 0.0;
    std::array<double, 2> pair{};
    bool have_spare = false;
    for (std::size_t k = 0; k < n; ++k) {
        double lr = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double eps;
            if (have_spare) {
                eps = pair[1];
                have_spare = false;
            } else {
                pair = rng.normal_pair();
                eps = pair[0];
                have_spare = true;
            }
            double s = mu_q[i] + sigma_q[i] * eps;
            double zp = (s - mu_p[i]) / sigma_p[i];
            lr += std::log(sigma_p[i]) - std::log(sigma_q[i]) - 0.5 * eps * eps + 0.5 * zp * zp;
        }
        double delta = lr - mean;  // Welford
        mean += delta / static_cast<double>(k + 1);
        m2 += delta * (lr - mean);
    }
    double var = m2 / static_cast<double>(n - 1);
    return {mean, std::sqrt(var / static_cast<double>(n))};
}

Value occupancy_ce(const Value& logits, const Value& labels, std::size_t classes) {
    if (logits.shape() != labels.shape() || logits.rank() != 3 || classes == 0 || logits.shape()[0] % classes != 0) {
        throw g::ShapeError("occupancy_ce", {logits.shape(), labels.shape()});
    }
    std::size_t z = logits.shape()[0] / classes, hw = logits.shape()[1] * logits.shape()[2];
    const auto ld = labels.data();
    for (std::size_t s = 0; s < z; ++s) {
        for (std::size_t p = 0; p < hw; ++p) {
            double total = 0.0;
            for (std::size_t c = 0; c < classes; ++c) {
                double v = ld[(s * classes + c) * hw + p];
                if (v != 0.0 && v != 1.0) throw LossError("occupancy_ce: labels are not one-hot");
                total += v;
            }
            if (total != 1.0) throw LossError("occupancy_ce: labels are not one-hot");
        }
    }
    Value logp = g::log_softmax(g::reshape(logits, {z, classes, hw}), 1);
    Value picked = g::sum(g::mul(logp, g::reshape(labels, {z, classes, hw})));
    return g::scale(picked, -1.0 / static_cast<double>(z * hw));
}

Value action_l1(const Value& predicted, const Value& target) {
    if (predicted.shape() != target.shape()) throw g::ShapeError("action_l1", {predicted.shape(), target.shape()});
    return g::mean(g::abs(g::sub(predicted, target)));
}

double LossBreakdown::recomputed_total() const {
    return weights.kl * kl + weights.past_ce * past_occ_ce + weights.past_l1 * past_act_l1 +
           weights.future_ce * future_occ_ce + weights.future_l1 * future_act_l1;
}

LossBreakdown total_loss(const model::ObserveResult& observed, std::span<const model::ImaginedStep> imagined,
                         const world::Episode& ep, const LossWeights& weights) {
    if (observed.steps.size() != ep.T) {
        throw LossError("total_loss: " + std::to_string(observed.steps.size()) + " observed steps, episode has T=" +
                        std::to_string(ep.T));
    }
    if (imagined.size() != ep.L) {
        throw LossError("total_loss: " + std::to_string(imagined.size()) + " imagined steps, episode has L=" +
                        std::to_string(ep.L));
    }
    LossBreakdown out;
    out.weights = weights;
    auto label = [&](std::size_t t) { return world::one_hot(ep.label(t), ep.Z, ep.C, ep.H, ep.W); };
    auto action = [&](std::size_t t) {
        return Value::vector({static_cast<double>(ep.actions[t].velocity), static_cast<double>(ep.actions[t].steering)});
    };

    Value kl_sum = Value::scalar(0.0), pce = Value::scalar(0.0), pl1 = Value::scalar(0.0);
    Value fce = Value::scalar(0.0), fl1 = Value::scalar(0.0);
    for (std::size_t t = 0; t < ep.T; ++t) {
        const auto& st = observed.steps[t];
        Value kl = kl_diag_gaussian(st.posterior.mu, st.posterior.sigma, st.prior.mu, st.prior.sigma);
        Value ce = occupancy_ce(st.logits, label(t), ep.C);
        Value l1 = action_l1(st.action, action(t));
        out.kl_per_step.push_back(kl.item());
        out.past_ce_per_step.push_back(ce.item());
        out.past_l1_per_step.push_back(l1.item());
        kl_sum = g::add(kl_sum, kl);
        pce = g::add(pce, ce);
        pl1 = g::add(pl1, l1);
    }
    for (std::size_t k = 0; k < ep.L; ++k) {
        const auto& st = imagined[k];
        Value ce = occupancy_ce(st.logits, label(ep.T + k), ep.C);
        Value l1 = action_l1(st.action, action(ep.T + k));
        out.future_ce_per_step.push_back(ce.item());
        out.future_l1_per_step.push_back(l1.item());
        fce = g::add(fce, ce);
        fl1 = g::add(fl1, l1);
    }
    out.kl = kl_sum.item();
    out.past_occ_ce = pce.item();
    out.past_act_l1 = pl1.item();
    out.future_occ_ce = fce.item();
    out.future_act_l1 = fl1.item();

    Value total = g::scale(kl_sum, weights.kl);
    total = g::add(total, g::scale(pce, weights.past_ce));
    total = g::add(total, g::scale(pl1, weights.past_l1));
    total = g::add(total, g::scale(fce, weights.future_ce));
    total = g::add(total, g::scale(fl1, weights.future_l1));
    out.total_value = total;
    out.total = total.item();
    return out;
}

}  // namespace mssm::objective
