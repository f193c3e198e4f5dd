// SPDX-License-Identifier: Apache-2.0
#include "mssm/pipeline/trainer.hpp"

#include <cmath>
#include <sstream>

#include "mssm/grad/ops.hpp"

namespace mssm::pipeline {

namespace {

constexpr std::uint64_t kBatchStream = 0x7a11u;
constexpr double kAdditivityTolerance = 1e-9;

std::string describe(const StepRecord& r) {
    std::ostringstream os;
    os.precision(10);
    for (const auto& [k, v] : r.named()) os << ' ' << k << '=' << v;
    return os.str();
}

}  // namespace

NamedValues StepRecord::named() const {
    return {{"kl", kl},
            {"past_occ_ce", past_occ_ce},
            {"past_act_l1", past_act_l1},
            {"future_occ_ce", future_occ_ce},
            {"future_act_l1", future_act_l1},
            {"total", total}};
}

objective::LossBreakdown episode_loss(const model::MssmModel& model, const world::Episode& ep, grad::RngState& rng,
                                      const objective::LossWeights& weights) {
    auto observed = model.config().flags.is_rssm() ? model::rssm_variant(ep, model, rng)
                                                   : model.observe_sequence(ep, rng);
    auto imagined = model.imagine(observed.final_state, ep.L, rng);
    return objective::total_loss(observed, imagined, ep, weights);
}

std::span<const world::Episode> training_subset(std::span<const world::Episode> episodes, double fraction) {
    if (episodes.empty()) return episodes;
    auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(episodes.size()) - 1e-9));
    return episodes.first(std::clamp<std::size_t>(n, 1, episodes.size()));
}

PretrainResult pretrain(const RunConfig& cfg, std::span<const world::Episode> train, const PretrainOptions& opts) {
    cfg.validate();
    auto data = training_subset(train, cfg.data_fraction);
    if (data.empty()) throw TrainingError("pretrain: no training episodes");
    for (const auto& ep : data) {
        if (ep.H != cfg.world.H || ep.W != cfg.world.W || ep.Z != cfg.world.Z || ep.T != cfg.world.T ||
            ep.L != cfg.world.L) {
            throw TrainingError("pretrain: episode dimensions do not match the world config");
        }
    }

    model::MssmModel model(cfg.world, cfg.model, cfg.seed);
    objective::LossWeights weights;
    weights.kl = cfg.kl_weight;
    AdamState adam;
    PretrainResult result;
    const grad::RngState batches = grad::RngState(cfg.seed).derive(kBatchStream);
    const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        grad::RngState pick = batches.derive(step);
        model.params().zero_grad();
        grad::Value total;
        StepRecord rec;
        rec.step = step;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const auto& ep = data[pick.uniform_index(data.size())];
            grad::RngState rng = pick.derive(b + 1);
            auto bd = episode_loss(model, ep, rng, weights);
            if (std::abs(bd.total - bd.recomputed_total()) > kAdditivityTolerance) {
                throw TrainingError("loss additivity violated at step " + std::to_string(step));
            }
            rec.kl += bd.kl * inv_batch;
            rec.past_occ_ce += bd.past_occ_ce * inv_batch;
            rec.past_act_l1 += bd.past_act_l1 * inv_batch;
            rec.future_occ_ce += bd.future_occ_ce * inv_batch;
            rec.future_act_l1 += bd.future_act_l1 * inv_batch;
            rec.total += bd.total * inv_batch;
            grad::Value scaled = grad::scale(bd.total_value, inv_batch);
            total = total.defined() ? grad::add(total, scaled) : scaled;
        }
        if (!std::isfinite(rec.total)) {
            throw TrainingError("non-finite loss at step " + std::to_string(step) + ":" + describe(rec));
        }
        grad::backward(total);
        adam_step(model.params(), adam, cfg.optim);

        if (opts.log) opts.log->record(step, "train", rec.named());
        if (opts.on_step) opts.on_step(rec);
        result.history.push_back(rec);
    }
    result.checkpoint =
        make_checkpoint(model, cfg, adam, cfg.steps, opts.log ? opts.log->path().string() : std::string());
    return result;
}

PretrainResult pretrain(const RunConfig& cfg, const world::Manifest& manifest, const PretrainOptions& opts) {
    if (manifest.fingerprint != cfg.world.fingerprint()) {
        throw FingerprintMismatchError("dataset world fingerprint " + manifest.fingerprint +
                                       " does not match the run's world config " + cfg.world.fingerprint());
    }
    auto train = world::load_split(manifest, "train");
    return pretrain(cfg, train, opts);
}

}  // namespace mssm::pipeline
