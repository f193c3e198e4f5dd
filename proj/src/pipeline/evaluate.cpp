// SPDX-License-Identifier: Apache-2.0
#include "mssm/pipeline/evaluate.hpp"

#include <cmath>

#include "mssm/objective/losses.hpp"

namespace mssm::pipeline {

namespace {

bool is_occupied(std::uint8_t c) { return c == world::kStatic || c == world::kDynamic; }

int round_to_int(double x) { return static_cast<int>(std::floor(x + 0.5)); }

std::vector<std::uint8_t> known_or_free(std::span<const std::uint8_t> obs) {
    std::vector<std::uint8_t> out(obs.begin(), obs.end());
    for (auto& v : out) {
        if (v == world::kUnknown) v = world::kFree;
    }
    return out;
}

}  // namespace

double mask_iou(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> actual) {
    if (predicted.size() != actual.size()) throw std::invalid_argument("mask_iou: sizes differ");
    IouCounter c;
    for (std::size_t i = 0; i < predicted.size(); ++i) c.add(predicted[i] != 0, actual[i] != 0);
    return c.value();
}

std::array<double, world::kClassCount> class_iou(std::span<const std::uint8_t> predicted,
                                                 std::span<const std::uint8_t> actual) {
    OccupancyScore s;
    s.add(predicted, actual);
    std::array<double, world::kClassCount> out{};
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = s.per_class[c].value();
    return out;
}

std::vector<std::uint8_t> argmax_classes(const grad::Value& logits, std::size_t classes) {
    const auto& shape = logits.shape();
    if (shape.size() != 3 || shape[0] % classes != 0) throw grad::ShapeError("argmax_classes", {shape});
    std::size_t z = shape[0] / classes, hw = shape[1] * shape[2];
    auto d = logits.data();
    std::vector<std::uint8_t> out(z * hw);
    for (std::size_t s = 0; s < z; ++s) {
        for (std::size_t p = 0; p < hw; ++p) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < classes; ++c) {
                if (d[(s * classes + c) * hw + p] > d[(s * classes + best) * hw + p]) best = c;
            }
            out[s * hw + p] = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

void OccupancyScore::add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> actual) {
    if (predicted.size() != actual.size()) throw std::invalid_argument("OccupancyScore: sizes differ");
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        for (std::size_t c = 0; c < per_class.size(); ++c) per_class[c].add(predicted[i] == c, actual[i] == c);
        occupied.add(is_occupied(predicted[i]), is_occupied(actual[i]));
    }
}

double OccupancyScore::miou() const {
    double s = 0.0;
    for (const auto& c : per_class) s += c.value();
    return s / static_cast<double>(per_class.size());
}

std::vector<std::uint8_t> copy_last_frame(const world::Episode& ep) { return known_or_free(ep.observation(ep.T - 1)); }

std::vector<std::uint8_t> constant_velocity_forecast(const world::Episode& ep, std::size_t k) {
    const int H = static_cast<int>(ep.H), W = static_cast<int>(ep.W), Z = static_cast<int>(ep.Z);
    auto last = known_or_free(ep.observation(ep.T - 1));
    auto at = [&](const std::vector<std::uint8_t>& g, int z, int i, int j) {
        return g[(static_cast<std::size_t>(z) * H + i) * W + j];
    };
    // Ego displacement per step, taken from the last fully observed motion.
    const auto& m = ep.motion[ep.T >= 2 ? ep.T - 2 : 0];
    const int er = round_to_int(m.v_forward), ec = round_to_int(m.v_lateral);
    const int K = static_cast<int>(k);

    std::vector<std::uint8_t> out(ep.voxels(), world::kFree);
    for (int z = 0; z < Z; ++z) {
        for (int i = 0; i < H; ++i) {
            for (int j = 0; j < W; ++j) {
                int si = i + K * er, sj = j + K * ec;
                if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
                auto v = at(last, z, si, sj);
                if (v != world::kDynamic) out[(static_cast<std::size_t>(z) * H + i) * W + j] = v;
            }
        }
    }
    if (ep.T < 2) return out;

    // Agents: match each dynamic column to one in the previous frame whose
    // world-frame displacement is a legal agent move, then extrapolate.
    auto prev = known_or_free(ep.observation(ep.T - 2));
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            if (at(last, 0, i, j) != world::kDynamic) continue;
            int best_r = 0, best_c = 0, best_cost = -1;
            for (int mr = 0; mr <= 2; ++mr) {
                for (int mc = -1; mc <= 1; ++mc) {
                    int pi = i + er - mr, pj = j + ec - mc;
                    if (pi < 0 || pi >= H || pj < 0 || pj >= W || at(prev, 0, pi, pj) != world::kDynamic) continue;
                    int cost = std::abs(mr - 1) + std::abs(mc);
                    if (best_cost < 0 || cost < best_cost) {
                        best_cost = cost;
                        best_r = mr;
                        best_c = mc;
                    }
                }
            }
            int ti = i + K * (best_r - er), tj = j + K * (best_c - ec);
            if (ti < 0 || ti >= H || tj < 0 || tj >= W) continue;
            for (int z = 0; z < Z; ++z) {
                if (at(last, z, i, j) == world::kDynamic) out[(static_cast<std::size_t>(z) * H + ti) * W + tj] = world::kDynamic;
            }
        }
    }
    return out;
}

NamedValues EvalMetrics::named() const {
    NamedValues out;
    out.emplace_back("episodes", static_cast<double>(episodes));
    out.emplace_back("observed_iou_free", observed_class_iou[world::kFree]);
    out.emplace_back("observed_iou_static", observed_class_iou[world::kStatic]);
    out.emplace_back("observed_iou_dynamic", observed_class_iou[world::kDynamic]);
    out.emplace_back("observed_miou", observed_miou);
    out.emplace_back("observed_iou", observed_iou);
    for (std::size_t k = 0; k < future_iou.size(); ++k) {
        auto h = std::to_string(k + 1);
        out.emplace_back("future_iou_h" + h, future_iou[k]);
        out.emplace_back("future_miou_h" + h, future_miou[k]);
        out.emplace_back("copy_last_iou_h" + h, copy_last_iou[k]);
        out.emplace_back("copy_last_miou_h" + h, copy_last_miou[k]);
        out.emplace_back("constant_velocity_iou_h" + h, constant_velocity_iou[k]);
        out.emplace_back("constant_velocity_miou_h" + h, constant_velocity_miou[k]);
    }
    out.emplace_back("action_mae", action_mae);
    out.emplace_back("future_action_mae", future_action_mae);
    out.emplace_back("mean_kl", mean_kl);
    return out;
}

EvalMetrics evaluate(const model::MssmModel& model, std::span<const world::Episode> episodes, const EvalOptions& opts) {
    if (episodes.empty()) throw std::invalid_argument("evaluate: empty split");
    const std::size_t C = model.world().C;
    const std::size_t T = episodes.front().T, L = episodes.front().L;
    OccupancyScore observed;
    std::vector<OccupancyScore> future(L), copy(L), constant(L);
    double act = 0.0, fut_act = 0.0, kl = 0.0;
    std::size_t act_n = 0, fut_n = 0, kl_n = 0;

    model::RunOptions run;
    run.zero_noise = true;
    run.ssp_frame = T - 1;
    run.prompt = opts.prompt;
    for (const auto& ep : episodes) {
        if (ep.T != T || ep.L != L) throw std::invalid_argument("evaluate: episodes differ in T or L");
        grad::RngState rng(0);
        auto obs = model.config().flags.is_rssm() ? model::rssm_variant(ep, model, rng, run)
                                                  : model.observe_sequence(ep, rng, run);
        auto imagined = model.imagine(obs.final_state, L, rng, run);
        for (std::size_t t = 0; t < T; ++t) {
            const auto& st = obs.steps[t];
            observed.add(argmax_classes(st.logits, C), ep.label(t));
            for (std::size_t i = 0; i < 2; ++i) {
                double target = i == 0 ? ep.actions[t].velocity : ep.actions[t].steering;
                act += std::abs(st.action[i] - target);
                ++act_n;
            }
            kl += objective::kl_diag_gaussian(st.posterior.mu, st.posterior.sigma, st.prior.mu, st.prior.sigma).item();
            ++kl_n;
        }
        auto last = copy_last_frame(ep);
        for (std::size_t k = 0; k < L; ++k) {
            auto truth = ep.label(T + k);
            future[k].add(argmax_classes(imagined[k].logits, C), truth);
            copy[k].add(last, truth);
            constant[k].add(constant_velocity_forecast(ep, k + 1), truth);
            for (std::size_t i = 0; i < 2; ++i) {
                double target = i == 0 ? ep.actions[T + k].velocity : ep.actions[T + k].steering;
                fut_act += std::abs(imagined[k].action[i] - target);
                ++fut_n;
            }
        }
    }

    EvalMetrics m;
    m.episodes = episodes.size();
    for (std::size_t c = 0; c < C; ++c) m.observed_class_iou[c] = observed.per_class[c].value();
    m.observed_miou = observed.miou();
    m.observed_iou = observed.occupied.value();
    for (std::size_t k = 0; k < L; ++k) {
        m.future_iou.push_back(future[k].occupied.value());
        m.future_miou.push_back(future[k].miou());
        m.copy_last_iou.push_back(copy[k].occupied.value());
        m.copy_last_miou.push_back(copy[k].miou());
        m.constant_velocity_iou.push_back(constant[k].occupied.value());
        m.constant_velocity_miou.push_back(constant[k].miou());
    }
    m.action_mae = act / static_cast<double>(act_n);
    m.future_action_mae = fut_n ? fut_act / static_cast<double>(fut_n) : 0.0;
    m.mean_kl = kl / static_cast<double>(kl_n);
    return m;
}

EvalMetrics evaluate(const Checkpoint& ckpt, const world::Manifest& manifest, const std::string& split,
                     const RunConfig* cfg, const EvalOptions& opts) {
    if (cfg && cfg->fingerprint() != ckpt.fingerprint) {
        throw FingerprintMismatchError("checkpoint fingerprint " + ckpt.fingerprint + " does not match config " +
                                       cfg->fingerprint());
    }
    auto model = model_from_checkpoint(ckpt);
    if (manifest.fingerprint != model.world().fingerprint()) {
        throw FingerprintMismatchError("dataset world fingerprint " + manifest.fingerprint +
                                       " does not match the checkpoint's world " + model.world().fingerprint());
    }
    auto episodes = world::load_split(manifest, split);
    return evaluate(model, episodes, opts);
}

}  // namespace mssm::pipeline
