// SPDX-License-Identifier: Apache-2.0
#include "mssm/pipeline/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "mssm/grad/ops.hpp"
#include "mssm/model/prompt.hpp"
#include "mssm/nn/blocks.hpp"

namespace mssm::pipeline {

namespace g = mssm::grad;

namespace {

constexpr std::uint64_t kHeadStream = 0xf17eu;
constexpr std::uint64_t kBatchStream = 0xba7cu;

void check_task(const std::string& task) {
    if (task != kDetectDynamic && task != kMapStatic) {
        throw UnknownTaskError("unknown fine-tune task '" + task + "' (expected " + kDetectDynamic + " or " +
                               kMapStatic + ")");
    }
}

struct Counts {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    void add(bool p, bool a) {
        tp += p && a;
        fp += p && !a;
        fn += !p && a;
    }
    double f1() const {
        auto d = 2 * tp + fp + fn;
        return d == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(d);
    }
    double iou() const {
        auto d = tp + fp + fn;
        return d == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(d);
    }
};

class TaskNetwork {
public:
    TaskNetwork(const model::MssmModel& backbone, std::uint64_t seed) : backbone_(backbone) {
        const auto& mc = backbone.config();
        g::RngState root = g::RngState(seed).derive(kHeadStream);
        {
            g::RngState rng = root.derive(1);
            auto& grp = head_.add_group("finetune.prompt");
            grp.add("table", {model::PromptRegistry::builtin().size(), mc.prompt_dim}, nn::InitSpec::normal(0.02),
                    rng);
            nn::add_linear(grp, "scale", mc.prompt_dim, mc.C_b, rng);
            nn::add_linear(grp, "shift", mc.prompt_dim, mc.C_b, rng);
        }
        {
            g::RngState rng = root.derive(2);
            auto& grp = head_.add_group("finetune.head");
            nn::add_conv(grp, "c0", mc.C_b, mc.C_u, 3, 1, 1, rng);
            nn::add_conv(grp, "c1", mc.C_u, mc.C_u, 3, 1, 1, rng);
            nn::add_conv(grp, "out", mc.C_u, 1, 1, 1, 0, rng);
        }
    }

    nn::ParamStore& head() { return head_; }

    /// Logits on the BEV feature grid for one observation.
    g::Value forward(const world::Episode& ep, std::size_t t, std::size_t token) const {
        g::Value b = backbone_.encode_bev(world::one_hot(ep.observation(t), ep.Z, ep.C, ep.H, ep.W));
        const auto& pr = head_.group("finetune.prompt");
        g::Value e = nn::embed(pr.at("table"), token);
        g::Value scale = g::add_scalar(nn::linear(e, nn::linear_of(pr, "scale")), 1.0);
        g::Value shift = nn::linear(e, nn::linear_of(pr, "shift"));
        std::size_t c = b.shape()[0];
        b = g::add(g::mul(b, g::reshape(scale, {c, 1, 1})), g::reshape(shift, {c, 1, 1}));
        const auto& hd = head_.group("finetune.head");
        g::Value f = g::relu(nn::conv(b, nn::conv_of(hd, "c0", 1, 1)));
        f = g::relu(nn::conv(f, nn::conv_of(hd, "c1", 1, 1)));
        f = nn::conv(f, nn::conv_of(hd, "out", 1, 0));
        return g::reshape(f, {ep.H / kTaskCell, ep.W / kTaskCell});
    }

private:
    const model::MssmModel& backbone_;
    nn::ParamStore head_;
};

// Mean binary cross-entropy with logits, positives weighted by w:
// (1 - y) softplus(z) + w y softplus(-z) = (1 + (w - 1) y) softplus(z) - w y z.
g::Value bce(const g::Value& logits, std::span<const std::uint8_t> target, double pos_weight) {
    std::vector<double> c(target.size()), wy(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        double y = target[i] != 0 ? 1.0 : 0.0;
        c[i] = 1.0 + (pos_weight - 1.0) * y;
        wy[i] = pos_weight * y;
    }
    g::Value cv = g::Value::from(logits.shape(), std::move(c));
    g::Value wyv = g::Value::from(logits.shape(), std::move(wy));
    return g::mean(g::sub(g::mul(cv, g::softplus(logits)), g::mul(wyv, logits)));
}

// Negative-to-positive ratio over every training frame, clamped to [1, 100].
double positive_weight(std::span<const world::Episode> train, const std::string& task) {
    double pos = 0.0, all = 0.0;
    for (const auto& ep : train) {
        for (std::size_t t = 0; t < task_frames(ep, task); ++t) {
            auto y = task_target(ep, task, t);
            for (auto v : y) pos += v != 0;
            all += static_cast<double>(y.size());
        }
    }
    if (pos == 0.0) return 1.0;
    return std::clamp((all - pos) / pos, 1.0, 100.0);
}

nn::ParamStore copy_group(const nn::ParamStore& store, const std::string& name) {
    nn::ParamStore out;
    auto& dst = out.add_group(name);
    for (const auto& e : store.group(name).entries()) dst.entries().push_back({e.name, e.value.detach(), e.init});
    return out;
}

}  // namespace

std::vector<std::uint8_t> task_target(const world::Episode& ep, const std::string& task, std::size_t t) {
    check_task(task);
    if (ep.H % kTaskCell != 0 || ep.W % kTaskCell != 0) {
        throw std::invalid_argument("task_target: grid is not a multiple of the task cell size");
    }
    const std::size_t hw = static_cast<std::size_t>(ep.H) * ep.W;
    std::vector<std::uint8_t> fine(hw, 0);
    if (task == kDetectDynamic) {
        auto y = ep.label(t + 1);
        for (std::size_t z = 0; z < ep.Z; ++z)
            for (std::size_t p = 0; p < hw; ++p) fine[p] |= y[z * hw + p] == world::kDynamic;
    } else {
        auto y = ep.label(t);
        for (std::size_t p = 0; p < hw; ++p) fine[p] = y[p] == world::kStatic;
    }
    const std::size_t rows = ep.H / kTaskCell, cols = ep.W / kTaskCell;
    std::vector<std::uint8_t> out(rows * cols, 0);
    for (std::size_t i = 0; i < ep.H; ++i)
        for (std::size_t j = 0; j < ep.W; ++j) out[(i / kTaskCell) * cols + j / kTaskCell] |= fine[i * ep.W + j];
    return out;
}

std::size_t task_frames(const world::Episode& ep, const std::string& task) {
    check_task(task);
    return task == kDetectDynamic ? ep.steps() - 1 : ep.steps();
}

double mask_f1(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> actual) {
    if (predicted.size() != actual.size()) throw std::invalid_argument("mask_f1: sizes differ");
    Counts c;
    for (std::size_t i = 0; i < predicted.size(); ++i) c.add(predicted[i] != 0, actual[i] != 0);
    return c.f1();
}

FinetuneResult finetune(const Checkpoint* pretrained, const RunConfig& base, const FinetuneConfig& cfg,
                        std::span<const world::Episode> train, std::span<const world::Episode> val,
                        const FinetuneOptions& opts) {
    check_task(cfg.task);
    if (train.empty() || val.empty()) throw std::invalid_argument("finetune: empty train or validation split");
    auto warn = opts.warn ? opts.warn : [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };

    FinetuneResult result;
    result.task = cfg.task;
    result.metric_name = cfg.task == kDetectDynamic ? "f1" : "iou";
    result.pretrained = pretrained != nullptr;

    const auto& registry = model::PromptRegistry::builtin();
    model::TaskPrompt prompt = registry.resolve(cfg.prompt.value_or(cfg.task));
    const std::string& prompt_task = registry.entries()[prompt.token].task;
    if (prompt_task != cfg.task) {
        std::string msg = "prompt '" + prompt.text + "' belongs to task '" + prompt_task + "' but fine-tuning '" +
                          cfg.task + "'";
        result.warnings.push_back(msg);
        warn(msg);
    }

    model::MssmModel backbone = pretrained ? model_from_checkpoint(*pretrained)
                                           : model::MssmModel(base.world, base.model, base.seed);
    if (backbone.world().fingerprint() != base.world.fingerprint()) {
        throw FingerprintMismatchError("checkpoint world does not match the fine-tune world config");
    }
    for (auto& grp : backbone.params().groups()) grp->set_frozen(grp->name() != "encoder" || cfg.freeze_encoder);

    TaskNetwork net(backbone, cfg.seed);
    const double pos_weight = positive_weight(train, cfg.task);
    AdamState enc_adam, head_adam;
    const g::RngState batches = g::RngState(cfg.seed).derive(kBatchStream);
    const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        g::RngState pick = batches.derive(step);
        backbone.params().zero_grad();
        net.head().zero_grad();
        g::Value total;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const auto& ep = train[pick.uniform_index(train.size())];
            std::size_t t = pick.uniform_index(task_frames(ep, cfg.task));
            g::Value loss = g::scale(bce(net.forward(ep, t, prompt.token), task_target(ep, cfg.task, t), pos_weight), inv_batch);
            total = total.defined() ? g::add(total, loss) : loss;
        }
        if (!std::isfinite(total.item())) {
            throw std::runtime_error("finetune: non-finite loss at step " + std::to_string(step));
        }
        g::backward(total);
        adam_step(backbone.params(), enc_adam, cfg.optim);
        adam_step(net.head(), head_adam, cfg.optim);
        result.loss_history.push_back(total.item());
        if (opts.log) opts.log->record(step, "finetune", {{"loss", total.item()}});
    }

    Counts counts;
    for (const auto& ep : val) {
        for (std::size_t t = 0; t < task_frames(ep, cfg.task); ++t) {
            g::Value logits = net.forward(ep, t, prompt.token);
            auto target = task_target(ep, cfg.task, t);
            for (std::size_t p = 0; p < target.size(); ++p) counts.add(logits[p] > 0.0, target[p] != 0);
        }
    }
    result.metric = cfg.task == kDetectDynamic ? counts.f1() : counts.iou();
    if (opts.log) opts.log->record(cfg.steps, "finetune_eval", {{result.metric_name, result.metric}});
    result.encoder = copy_group(backbone.params(), "encoder");
    result.head = net.head().clone();
    return result;
}

}  // namespace mssm::pipeline
