// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: gen-data, pretrain, eval, rollout, finetune, ablate.
#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

#include "mssm/pipeline/ablate.hpp"
#include "mssm/pipeline/evaluate.hpp"
#include "mssm/pipeline/finetune.hpp"
#include "mssm/pipeline/trainer.hpp"

using namespace mssm;
using nlohmann::ordered_json;

namespace {

struct ConfigArgs {
    std::string file;
    std::vector<std::string> overrides;

    void attach(CLI::App* app) {
        app->add_option("--config", file, "config file of `key = value` lines");
        app->add_option("--set", overrides, "override one config key, key=value (repeatable)");
    }
    pipeline::RunConfig build() const {
        pipeline::RunConfig cfg = file.empty() ? pipeline::RunConfig{} : pipeline::RunConfig::load(file);
        pipeline::apply_overrides(cfg, overrides);
        cfg.validate();
        return cfg;
    }
};

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text << '\n';
        return;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text << '\n';
}

ordered_json metrics_json(const pipeline::NamedValues& values) {
    ordered_json out = ordered_json::object();
    for (const auto& [k, v] : values) out[k] = v;
    return out;
}

ordered_json grid_json(std::span<const std::uint8_t> grid) { return ordered_json(std::vector<int>(grid.begin(), grid.end())); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Memory state-space world model on a toy driving world"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "simulate episodes and write a dataset with its manifest");
    ConfigArgs gen_cfg;
    gen_cfg.attach(gen);
    std::string gen_out;
    std::size_t gen_n = 64;
    std::uint64_t gen_seed = 1;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--episodes", gen_n, "number of episodes");
    gen->add_option("--seed", gen_seed, "seed of the first episode");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "pre-train the world model");
    ConfigArgs pre_cfg;
    pre_cfg.attach(pre);
    std::string pre_data, pre_out, pre_metrics;
    bool pre_quiet = false;
    pre->add_option("--data", pre_data, "dataset directory")->required();
    pre->add_option("--out", pre_out, "checkpoint path")->required();
    pre->add_option("--metrics", pre_metrics, "JSON-lines metric stream");
    pre->add_flag("--quiet", pre_quiet, "no progress on stderr");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    std::string ev_ckpt, ev_data, ev_split = "val", ev_out, ev_config, ev_prompt = model::kOccupancyTask;
    bool ev_force = false;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--split", ev_split, "train or val");
    ev->add_option("--config", ev_config, "expected run config; its fingerprint must match the checkpoint");
    ev->add_option("--prompt", ev_prompt, "decoder prompt text or task name");
    ev->add_option("--out", ev_out, "metrics JSON path (default stdout)");
    ev->add_flag("--force", ev_force, "load despite a fingerprint mismatch");

    // rollout
    auto* ro = app.add_subcommand("rollout", "dump observed and imagined occupancy grids as JSON");
    std::string ro_ckpt, ro_data, ro_split = "val", ro_out;
    std::size_t ro_episode = 0;
    long ro_horizon = -1;
    ro->add_option("--ckpt", ro_ckpt, "checkpoint path")->required();
    ro->add_option("--data", ro_data, "dataset directory")->required();
    ro->add_option("--split", ro_split, "train or val");
    ro->add_option("--episode", ro_episode, "index within the split");
    ro->add_option("--horizon", ro_horizon, "imagined steps (default: the episode's L)");
    ro->add_option("--out", ro_out, "output JSON path (default stdout)");

    // finetune
    auto* ft = app.add_subcommand("finetune", "fine-tune the BEV encoder on a downstream task");
    ConfigArgs ft_cfg;
    ft_cfg.attach(ft);
    pipeline::FinetuneConfig ftc;
    std::string ft_data, ft_ckpt, ft_metrics, ft_out, ft_prompt;
    ft->add_option("--task", ftc.task, "detect-dynamic or map-static")->required();
    ft->add_option("--data", ft_data, "dataset directory")->required();
    ft->add_option("--ckpt", ft_ckpt, "pre-trained checkpoint (omit to train from scratch)");
    ft->add_option("--steps", ftc.steps, "optimizer steps");
    ft->add_option("--batch-size", ftc.batch_size, "frames per step");
    ft->add_option("--lr", ftc.optim.lr, "learning rate");
    ft->add_option("--seed", ftc.seed, "head initialization and batch seed");
    ft->add_option("--prompt", ft_prompt, "prompt text or task name (default: the task's own)");
    ft->add_flag("--freeze-encoder", ftc.freeze_encoder, "keep encoder weights fixed");
    ft->add_option("--metrics", ft_metrics, "JSON-lines metric stream");
    ft->add_option("--out", ft_out, "result JSON path (default stdout)");

    // ablate
    auto* ab = app.add_subcommand("ablate", "train and evaluate the component lattice at two data scales");
    ConfigArgs ab_cfg;
    ab_cfg.attach(ab);
    std::string ab_data, ab_out;
    pipeline::AblationOptions abo;
    ab->add_option("--data", ab_data, "dataset directory")->required();
    ab->add_option("--out", ab_out, "table JSON path (default stdout)");
    ab->add_option("--seeds", abo.seeds, "paired seeds")->delimiter(',');
    ab->add_option("--fractions", abo.data_fractions, "training data fractions")->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            auto cfg = gen_cfg.build();
            auto m = world::make_dataset(cfg.world, gen_n, gen_seed, gen_out);
            std::cerr << "wrote " << m.entries.size() << " episodes to " << gen_out << " (" << m.split("train").size()
                      << " train, " << m.split("val").size() << " val)\n";
        } else if (pre->parsed()) {
            auto cfg = pre_cfg.build();
            auto manifest = world::read_manifest(pre_data);
            std::unique_ptr<pipeline::MetricsLog> log;
            if (!pre_metrics.empty()) log = std::make_unique<pipeline::MetricsLog>(pre_metrics, pipeline::run_id(cfg));
            pipeline::PretrainOptions opts;
            opts.log = log.get();
            if (!pre_quiet) {
                opts.on_step = [&](const pipeline::StepRecord& r) {
                    if (r.step % 50 == 0 || r.step == cfg.steps) {
                        std::cerr << "step " << r.step << "/" << cfg.steps << " total " << r.total << " kl " << r.kl
                                  << '\n';
                    }
                };
            }
            auto result = pipeline::pretrain(cfg, manifest, opts);
            pipeline::save_checkpoint(result.checkpoint, pre_out);
        } else if (ev->parsed()) {
            pipeline::LoadOptions lo;
            lo.allow_fingerprint_mismatch = ev_force;
            std::unique_ptr<pipeline::RunConfig> cfg;
            if (!ev_config.empty()) {
                cfg = std::make_unique<pipeline::RunConfig>(pipeline::RunConfig::load(ev_config));
                lo.expected_fingerprint = cfg->fingerprint();
            }
            auto ckpt = pipeline::load_checkpoint(ev_ckpt, lo);
            auto manifest = world::read_manifest(ev_data);
            pipeline::EvalOptions eo;
            eo.prompt = ev_prompt;
            auto metrics = pipeline::evaluate(ckpt, manifest, ev_split, nullptr, eo);
            write_text(ev_out, metrics_json(metrics.named()).dump(2));
        } else if (ro->parsed()) {
            auto ckpt = pipeline::load_checkpoint(ro_ckpt);
            auto model = pipeline::model_from_checkpoint(ckpt);
            auto manifest = world::read_manifest(ro_data);
            auto episodes = world::load_split(manifest, ro_split);
            if (ro_episode >= episodes.size()) throw std::out_of_range("episode index outside the split");
            const auto& ep = episodes[ro_episode];
            long horizon = ro_horizon < 0 ? static_cast<long>(ep.L) : ro_horizon;
            model::RunOptions run;
            run.zero_noise = true;
            run.ssp_frame = ep.T - 1;
            grad::RngState rng(0);
            auto obs = model.observe_sequence(ep, rng, run);
            auto imagined = model.imagine(obs.final_state, horizon, rng, run);
            ordered_json out;
            out["episode"] = ro_episode;
            out["shape"] = {ep.Z, ep.H, ep.W};
            out["classes"] = {{"free", world::kFree}, {"static", world::kStatic}, {"dynamic", world::kDynamic},
                              {"unknown", world::kUnknown}};
            out["observed"] = ordered_json::array();
            for (std::size_t t = 0; t < ep.T; ++t) {
                out["observed"].push_back({{"step", t},
                                           {"observation", grid_json(ep.observation(t))},
                                           {"label", grid_json(ep.label(t))},
                                           {"predicted", grid_json(pipeline::argmax_classes(obs.steps[t].logits, ep.C))}});
            }
            out["imagined"] = ordered_json::array();
            for (std::size_t k = 0; k < imagined.size(); ++k) {
                ordered_json step = {{"horizon", k + 1},
                                     {"predicted", grid_json(pipeline::argmax_classes(imagined[k].logits, ep.C))},
                                     {"action", {imagined[k].action[0], imagined[k].action[1]}}};
                if (ep.T + k < ep.steps()) step["label"] = grid_json(ep.label(ep.T + k));
                out["imagined"].push_back(step);
            }
            write_text(ro_out, out.dump());
        } else if (ft->parsed()) {
            auto cfg = ft_cfg.build();
            if (!ft_prompt.empty()) ftc.prompt = ft_prompt;
            auto manifest = world::read_manifest(ft_data);
            auto train = world::load_split(manifest, "train");
            auto val = world::load_split(manifest, "val");
            std::unique_ptr<pipeline::Checkpoint> ckpt;
            if (!ft_ckpt.empty()) {
                ckpt = std::make_unique<pipeline::Checkpoint>(pipeline::load_checkpoint(ft_ckpt));
                cfg = ckpt->config();
            }
            std::unique_ptr<pipeline::MetricsLog> log;
            if (!ft_metrics.empty()) log = std::make_unique<pipeline::MetricsLog>(ft_metrics, pipeline::run_id(cfg));
            pipeline::FinetuneOptions fo;
            fo.log = log.get();
            auto result = pipeline::finetune(ckpt.get(), cfg, ftc, train, val, fo);
            ordered_json out;
            out["task"] = result.task;
            out["pretrained"] = result.pretrained;
            out[result.metric_name] = result.metric;
            out["final_loss"] = result.loss_history.empty() ? 0.0 : result.loss_history.back();
            out["warnings"] = result.warnings;
            write_text(ft_out, out.dump(2));
        } else if (ab->parsed()) {
            auto cfg = ab_cfg.build();
            auto manifest = world::read_manifest(ab_data);
            auto train = world::load_split(manifest, "train");
            auto val = world::load_split(manifest, "val");
            abo.on_row = [](const pipeline::AblationRow& r) {
                std::cerr << r.label << " fraction " << r.data_fraction << " seed " << r.seed << " observed iou "
                          << r.metrics.observed_iou << '\n';
            };
            auto rows = pipeline::ablate(cfg, train, val, abo);
            write_text(ab_out, pipeline::ablation_json(rows));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
