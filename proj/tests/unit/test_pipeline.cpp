// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "mssm/common/binary_io.hpp"
#include "mssm/pipeline/ablate.hpp"
#include "mssm/pipeline/adam.hpp"
#include "mssm/pipeline/checkpoint.hpp"
#include "mssm/pipeline/evaluate.hpp"
#include "mssm/pipeline/finetune.hpp"
#include "mssm/pipeline/metrics_log.hpp"
#include "mssm/pipeline/run_config.hpp"
#include "mssm/pipeline/trainer.hpp"
#include "mssm/world/simulator.hpp"

using namespace mssm;
using namespace mssm::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("mssm_test_pipeline_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunConfig micro_run() {
    RunConfig cfg;
    auto& w = cfg.world;
    w.H = 8;
    w.W = 8;
    w.Z = 2;
    w.n_agents = 2;
    w.n_obstacles = 1;
    w.occlusion_radius = 5.0;
    w.T = 3;
    w.L = 2;
    auto& m = cfg.model;
    m.D_h = 6;
    m.D_s = 4;
    m.D_x = 5;
    m.C_e = 3;
    m.C_b = 4;
    m.C_m = 2;
    m.C_f = 3;
    m.C_u = 3;
    m.hidden = 7;
    m.prompt_dim = 3;
    m.bank_capacity = 4;
    cfg.steps = 4;
    cfg.seed = 5;
    return cfg;
}

std::vector<world::Episode> episodes(const world::WorldConfig& w, std::uint64_t first, std::size_t n) {
    std::vector<world::Episode> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(world::simulate_episode(w, first + i));
    return out;
}

std::vector<double> vals(const grad::Value& v) { return {v.data().begin(), v.data().end()}; }

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::set<std::string> names_of(const model::MssmModel& m) {
    auto v = m.params().qualified_names();
    return {v.begin(), v.end()};
}

}  // namespace

TEST_CASE("run config defaults and text round trip") {
    RunConfig cfg;
    CHECK(cfg.optim.lr == 2e-4);
    CHECK(cfg.optim.beta1 == 0.9);
    CHECK(cfg.optim.beta2 == 0.999);
    CHECK(cfg.optim.eps == 1e-8);
    CHECK_NOTHROW(cfg.validate());

    auto cfg2 = micro_run();
    cfg2.model.flags.dmb = false;
    cfg2.model.flags.combine = model::Combine::kAdd;
    cfg2.model.C_m = cfg2.model.C_b;
    cfg2.kl_weight = 0.25;
    auto back = RunConfig::parse(cfg2.to_text());
    CHECK(back.to_text() == cfg2.to_text());
    CHECK(back.fingerprint() == cfg2.fingerprint());
    CHECK_FALSE(back.model.flags.dmb);

    auto parsed = RunConfig::parse("# comment\nworld.H = 16\n\nflags.mln = false\noptim.lr = 1e-3\n");
    CHECK(parsed.world.H == 16);
    CHECK_FALSE(parsed.model.flags.mln);
    CHECK(parsed.optim.lr == 1e-3);

    CHECK_THROWS_AS(RunConfig::parse("world.nope = 1\n"), world::ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("world.H = abc\n"), world::ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("optim.lr = 0\n"), world::ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("model.D_h = 0\n"), world::ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("flags.ssp = maybe\n"), world::ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("world.H 16\n"), world::ConfigError);

    auto lr = cfg;
    lr.optim.lr = 5e-3;
    lr.steps = 7;
    lr.seed = 99;
    CHECK(lr.fingerprint() == cfg.fingerprint());
    auto dims = cfg;
    dims.model.D_s = 8;
    CHECK(dims.fingerprint() != cfg.fingerprint());
    auto flags = cfg;
    flags.model.flags.ssp = false;
    CHECK(flags.fingerprint() != cfg.fingerprint());

    auto over = cfg;
    apply_overrides(over, {"train.steps=12", "flags.prompt=false"});
    CHECK(over.steps == 12);
    CHECK_FALSE(over.model.flags.prompt);
    CHECK_THROWS_AS(apply_overrides(over, {"train.steps"}), world::ConfigError);
}

TEST_CASE("adam closed-form steps") {
    AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
    SUBCASE("zero gradient leaves parameters unchanged") {
        std::vector<double> p{1.5, -2.0};
        std::vector<double> g{0.0, 0.0};
        Moments m;
        for (std::uint64_t t = 1; t <= 3; ++t) adam_step(p, g, m, t, cfg);
        CHECK(p[0] == 1.5);
        CHECK(p[1] == -2.0);
    }
    SUBCASE("first unit-gradient step moves by the learning rate") {
        std::vector<double> p{1.0};
        std::vector<double> g{1.0};
        Moments m;
        adam_step(p, g, m, 1, cfg);
        CHECK(std::abs(p[0] - 0.9) < 1e-8);
    }
    SUBCASE("three-step trace") {
        // Reference values evaluated independently from the update formula.
        std::vector<double> p{1.0};
        Moments m;
        const double grads[] = {1.0, -2.0, 0.5};
        const double expected[] = {0.900000001, 0.9366103534720749, 0.9502794196738216};
        for (std::uint64_t t = 1; t <= 3; ++t) {
            std::vector<double> g{grads[t - 1]};
            adam_step(p, g, m, t, cfg);
            CHECK(std::abs(p[0] - expected[t - 1]) < 1e-12);
        }
    }
    SUBCASE("errors") {
        std::vector<double> p{1.0, 2.0};
        std::vector<double> g{1.0};
        Moments m;
        CHECK_THROWS(adam_step(p, g, m, 1, cfg));
        std::vector<double> g2{1.0, 1.0};
        CHECK_THROWS(adam_step(p, g2, m, 0, cfg));
    }
}

TEST_CASE("adam on a parameter store touches only gradients it sees") {
    auto run = micro_run();
    model::MssmModel m(run.world, run.model, 3);
    auto before = m.params().clone();
    grad::Value table = m.params().group("prompt.table").at("table");
    m.params().zero_grad();
    // Gradient on one embedding row only.
    const std::size_t cols = table.shape()[1];
    for (std::size_t j = 0; j < cols; ++j) table.mutable_grad()[1 * cols + j] = 0.5;
    m.params().group("encoder").set_frozen(true);
    grad::Value k0 = m.params().group("encoder").at("c0.k");
    k0.mutable_grad()[0] = 1.0;
    AdamState state;
    adam_step(m.params(), state, run.optim);
    CHECK(state.step == 1);

    const auto& old_table = before.group("prompt.table").at("table");
    for (std::size_t r = 0; r < table.shape()[0]; ++r) {
        for (std::size_t j = 0; j < cols; ++j) {
            bool moved = table.data()[r * cols + j] != old_table.data()[r * cols + j];
            CHECK(moved == (r == 1));
        }
    }
    CHECK(vals(m.params().group("encoder").at("c0.k")) == vals(before.group("encoder").at("c0.k")));
    CHECK(vals(m.params().group("policy").at("l0.w")) == vals(before.group("policy").at("l0.w")));
}

TEST_CASE("checkpoint round trip and error kinds") {
    auto run = micro_run();
    auto dir = scratch_dir("ckpt");
    auto train = episodes(run.world, 10, 2);
    auto result = pretrain(run, train);
    const auto& ckpt = result.checkpoint;
    CHECK(ckpt.step == run.steps);
    CHECK(ckpt.adam.step == run.steps);
    CHECK(ckpt.fingerprint == run.fingerprint());

    save_checkpoint(ckpt, dir / "a.ckpt");
    auto loaded = load_checkpoint(dir / "a.ckpt");
    save_checkpoint(loaded, dir / "b.ckpt");
    auto bytes = common::read_file(dir / "a.ckpt");
    CHECK(bytes == common::read_file(dir / "b.ckpt"));
    CHECK(loaded.config().to_text() == run.to_text());

    SUBCASE("reloaded model reproduces outputs") {
        auto a = model_from_checkpoint(ckpt);
        auto b = model_from_checkpoint(loaded);
        auto ma = evaluate(a, train);
        auto mb = evaluate(b, train);
        CHECK(ma.named() == mb.named());
    }
    SUBCASE("magic") {
        auto bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointMagicError);
    }
    SUBCASE("version") {
        auto bad = bytes;
        bad[8] = 9;
        CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointVersionError);
    }
    SUBCASE("truncation") {
        auto bad = bytes;
        bad.resize(bad.size() - 12);
        CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointTruncatedError);
        bad.resize(12);
        CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointTruncatedError);
    }
    SUBCASE("checksum") {
        auto bad = bytes;
        bad[bad.size() - 20] ^= 0x10;
        CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointChecksumError);
    }
    SUBCASE("corrupted index entry names the entry") {
        const std::string name = "params/encoder/c0.b";
        std::string text(bytes.begin(), bytes.end());
        auto at = text.find("\"" + name + "\":{\"offset\"");
        REQUIRE(at != std::string::npos);
        auto key = text.find("offset", at);
        text[key + 5] = 'x';  // "offsex"
        try {
            decode_checkpoint(bytes_of(text));
            FAIL("expected an index error");
        } catch (const CheckpointIndexError& e) {
            CHECK(e.entry() == name);
            CHECK(std::string(e.what()).find(name) != std::string::npos);
        }
    }
    SUBCASE("fingerprint mismatch") {
        auto other = run;
        other.model.D_h = 9;
        LoadOptions opts;
        opts.expected_fingerprint = other.fingerprint();
        CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", opts), FingerprintMismatchError);
        opts.allow_fingerprint_mismatch = true;
        CHECK_NOTHROW(load_checkpoint(dir / "a.ckpt", opts));
        opts = {};
        opts.expected_fingerprint = run.fingerprint();
        CHECK_NOTHROW(load_checkpoint(dir / "a.ckpt", opts));
    }
}

TEST_CASE("pretraining is deterministic end to end") {
    auto run = micro_run();
    auto train = episodes(run.world, 20, 3);
    auto dir = scratch_dir("determinism");
    auto once = [&](const std::string& tag) {
        MetricsLog log(dir / (tag + ".jsonl"), run_id(run));
        PretrainOptions opts;
        opts.log = &log;
        auto r = pretrain(run, train, opts);
        r.checkpoint.metrics_ref.clear();
        save_checkpoint(r.checkpoint, dir / (tag + ".ckpt"));
    };
    once("a");
    once("b");
    CHECK(common::read_file(dir / "a.ckpt") == common::read_file(dir / "b.ckpt"));
    CHECK(common::read_file(dir / "a.jsonl") == common::read_file(dir / "b.jsonl"));

    auto reseeded = run;
    reseeded.seed = run.seed + 1;
    auto other = pretrain(reseeded, train);
    other.checkpoint.metrics_ref.clear();
    save_checkpoint(other.checkpoint, dir / "c.ckpt");
    CHECK(common::read_file(dir / "a.ckpt") != common::read_file(dir / "c.ckpt"));
}

TEST_CASE("logged totals are the weighted component sums") {
    auto run = micro_run();
    run.steps = 6;
    run.batch_size = 2;
    auto train = episodes(run.world, 30, 3);
    for (double w : {1.0, 0.0}) {
        run.kl_weight = w;
        auto r = pretrain(run, train);
        REQUIRE(r.history.size() == run.steps);
        for (const auto& s : r.history) {
            double sum = w * s.kl + s.past_occ_ce + s.past_act_l1 + s.future_occ_ce + s.future_act_l1;
            CHECK(std::abs(sum - s.total) <= 1e-9 * std::max(1.0, std::abs(s.total)));
            CHECK(s.kl > 0.0);
        }
    }
}

TEST_CASE("metric stream records") {
    auto run = micro_run();
    auto dir = scratch_dir("metrics");
    MetricsLog log(dir / "m.jsonl", run_id(run));
    log.record(3, "train", {{"a", 1.5}, {"b", -2.0}});
    CHECK(log.last_line().find("\"run_id\":\"" + run_id(run) + "\"") != std::string::npos);
    CHECK(log.last_line().find("\"step\":3") != std::string::npos);
    CHECK(log.last_line().find("\"a\":1.5") != std::string::npos);
    CHECK(run_id(run).size() == 12);
    auto reseeded = run;
    reseeded.seed += 1;
    CHECK(run_id(reseeded) != run_id(run));
    MetricsLog discard;
    CHECK_NOTHROW(discard.record(1, "train", {{"x", 1.0}}));
}

TEST_CASE("iou definitions") {
    std::vector<std::uint8_t> a{1, 0, 0, 1}, b{0, 1, 1, 0}, ab{1, 1, 0, 0}, onlya{1, 0, 0, 0};
    CHECK(mask_iou(a, a) == 1.0);
    CHECK(mask_iou(a, b) == 0.0);
    CHECK(mask_iou(onlya, ab) == 0.5);
    std::vector<std::uint8_t> none(4, 0);
    CHECK(mask_iou(none, none) == 1.0);

    std::vector<std::uint8_t> grid{0, 1, 2, 2, 1, 0};
    for (double v : class_iou(grid, grid)) CHECK(v == 1.0);
    std::vector<std::uint8_t> shifted{1, 2, 0, 0, 2, 1};
    for (double v : class_iou(shifted, grid)) CHECK(v == 0.0);

    OccupancyScore s;
    s.add(grid, grid);
    CHECK(s.miou() == 1.0);
    CHECK(s.occupied.value() == 1.0);

    CHECK(mask_f1(onlya, ab) == doctest::Approx(2.0 / 3.0));
    CHECK(mask_f1(none, none) == 1.0);
}

TEST_CASE("baselines on a scripted scene") {
    // A lone agent moving one row per step with a stationary ego and no occlusion.
    world::WorldConfig w;
    w.H = 16;
    w.W = 16;
    w.Z = 2;
    w.T = 3;
    w.L = 2;
    world::Episode ep;
    ep.H = w.H;
    ep.W = w.W;
    ep.Z = w.Z;
    ep.C = w.C;
    ep.T = w.T;
    ep.L = w.L;
    ep.n_agents = 1;
    const std::size_t vox = ep.voxels();
    for (std::size_t t = 0; t < ep.steps(); ++t) {
        std::vector<std::uint8_t> frame(vox, world::kFree);
        std::size_t row = 4 + t, col = 7;
        frame[(0 * w.H + row) * w.W + col] = world::kDynamic;
        frame[(1 * w.H + row) * w.W + col] = world::kDynamic;
        frame[(0 * w.H + 10) * w.W + 1] = world::kStatic;
        ep.labels.insert(ep.labels.end(), frame.begin(), frame.end());
        ep.observations.insert(ep.observations.end(), frame.begin(), frame.end());
        ep.actions.push_back({0.0f, 0.0f});
        ep.motion.push_back({0.0f, 0.0f, 1.0f});
    }
    auto copy = copy_last_frame(ep);
    CHECK(std::equal(copy.begin(), copy.end(), ep.label(ep.T - 1).begin()));
    for (std::size_t k = 1; k <= ep.L; ++k) {
        auto cv = constant_velocity_forecast(ep, k);
        auto truth = ep.label(ep.T - 1 + k);
        CHECK(std::equal(cv.begin(), cv.end(), truth.begin()));
        CHECK(mask_iou(cv, truth) == 1.0);
    }
}

TEST_CASE("evaluation reports every horizon and refuses mismatched configs") {
    auto run = micro_run();
    auto eps = episodes(run.world, 40, 2);
    model::MssmModel m(run.world, run.model, 1);
    auto metrics = evaluate(m, eps);
    CHECK(metrics.episodes == 2);
    CHECK(metrics.future_iou.size() == run.world.L);
    CHECK(metrics.copy_last_iou.size() == run.world.L);
    CHECK(metrics.constant_velocity_iou.size() == run.world.L);
    for (double v : metrics.future_iou) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(metrics.mean_kl > 0.0);
    CHECK(evaluate(m, eps).named() == metrics.named());

    auto dir = scratch_dir("eval");
    auto manifest = world::make_dataset(run.world, 4, 50, dir);
    auto trained = pretrain(run, manifest);
    CHECK_NOTHROW(evaluate(trained.checkpoint, manifest, "val", &run));
    auto other = run;
    other.model.D_s = 3;
    CHECK_THROWS_AS(evaluate(trained.checkpoint, manifest, "val", &other), FingerprintMismatchError);
    auto other_world = run.world;
    other_world.H = 16;
    auto dir2 = scratch_dir("eval2");
    auto foreign = world::make_dataset(other_world, 2, 50, dir2);
    CHECK_THROWS(evaluate(trained.checkpoint, foreign, "val", &run));
}

TEST_CASE("fine-tuning contracts") {
    auto run = micro_run();
    auto train = episodes(run.world, 60, 3);
    auto val = episodes(run.world, 70, 2);
    auto pre = pretrain(run, train);
    std::vector<std::string> warnings;
    FinetuneOptions opts;
    opts.warn = [&](const std::string& w) { warnings.push_back(w); };

    SUBCASE("frozen encoder is byte-identical after training") {
        FinetuneConfig fc;
        fc.steps = 5;
        fc.freeze_encoder = true;
        auto r = finetune(&pre.checkpoint, run, fc, train, val, opts);
        CHECK(r.pretrained);
        CHECK(r.metric_name == "f1");
        const auto& before = pre.checkpoint.params.group("encoder");
        for (const auto& e : before.entries()) {
            CHECK(vals(r.encoder.group("encoder").at(e.name)) == vals(e.value));
        }
        fc.freeze_encoder = false;
        auto moved = finetune(&pre.checkpoint, run, fc, train, val, opts);
        bool changed = false;
        for (const auto& e : before.entries()) {
            changed = changed || vals(moved.encoder.group("encoder").at(e.name)) != vals(e.value);
        }
        CHECK(changed);
        CHECK(warnings.empty());
    }
    SUBCASE("unknown task") {
        FinetuneConfig fc;
        fc.task = "detect-everything";
        CHECK_THROWS_AS(finetune(nullptr, run, fc, train, val, opts), UnknownTaskError);
        CHECK_THROWS_AS(task_target(train[0], "nope", 0), UnknownTaskError);
    }
    SUBCASE("swapped prompt warns and changes the result") {
        FinetuneConfig fc;
        fc.steps = 6;
        fc.task = kMapStatic;
        auto own = finetune(&pre.checkpoint, run, fc, train, val, opts);
        CHECK(own.metric_name == "iou");
        CHECK(warnings.empty());
        fc.prompt = kDetectDynamic;
        auto swapped = finetune(&pre.checkpoint, run, fc, train, val, opts);
        REQUIRE(warnings.size() == 1);
        CHECK(warnings[0].find(kMapStatic) != std::string::npos);
        CHECK(swapped.warnings == warnings);
        CHECK(swapped.loss_history != own.loss_history);
    }
    SUBCASE("scratch uses the same schedule") {
        FinetuneConfig fc;
        fc.steps = 4;
        auto a = finetune(nullptr, run, fc, train, val, opts);
        auto b = finetune(nullptr, run, fc, train, val, opts);
        CHECK_FALSE(a.pretrained);
        CHECK(a.loss_history.size() == fc.steps);
        CHECK(a.loss_history == b.loss_history);
    }
}

TEST_CASE("task targets") {
    auto run = micro_run();
    auto ep = world::simulate_episode(run.world, 80);
    CHECK(task_frames(ep, kDetectDynamic) == ep.steps() - 1);
    CHECK(task_frames(ep, kMapStatic) == ep.steps());
    const std::size_t hw = ep.H * ep.W;
    const std::size_t cols = ep.W / kTaskCell;
    auto cell_of = [&](std::size_t p) { return (p / ep.W / kTaskCell) * cols + (p % ep.W) / kTaskCell; };
    for (std::size_t t = 0; t + 1 < ep.steps(); ++t) {
        auto dyn = task_target(ep, kDetectDynamic, t);
        auto stat = task_target(ep, kMapStatic, t);
        REQUIRE(dyn.size() == (ep.H / kTaskCell) * cols);
        REQUIRE(stat.size() == dyn.size());
        std::vector<std::uint8_t> want_dyn(dyn.size(), 0), want_stat(dyn.size(), 0);
        auto next = ep.label(t + 1);
        auto cur = ep.label(t);
        for (std::size_t p = 0; p < hw; ++p) {
            for (std::size_t z = 0; z < ep.Z; ++z) want_dyn[cell_of(p)] |= next[z * hw + p] == world::kDynamic;
            want_stat[cell_of(p)] |= cur[p] == world::kStatic;
        }
        CHECK(dyn == want_dyn);
        CHECK(stat == want_stat);
    }
}

TEST_CASE("ablation flags remove exactly their parameters") {
    auto run = micro_run();
    const std::pair<const char*, bool model::ModelFlags::*> flags[] = {
        {"ssp", &model::ModelFlags::ssp},
        {"dmb", &model::ModelFlags::dmb},
        {"mln", &model::ModelFlags::mln},
        {"prompt", &model::ModelFlags::prompt},
    };
    model::MssmModel full(run.world, run.model, 1);
    auto all = names_of(full);
    for (const auto& [prefix, member] : flags) {
        auto cfg = run.model;
        cfg.flags.*member = false;
        model::MssmModel reduced(run.world, cfg, 1);
        auto kept = names_of(reduced);
        std::vector<std::string> removed, added;
        std::set_difference(all.begin(), all.end(), kept.begin(), kept.end(), std::back_inserter(removed));
        std::set_difference(kept.begin(), kept.end(), all.begin(), all.end(), std::back_inserter(added));
        CAPTURE(prefix);
        CHECK_FALSE(removed.empty());
        CHECK(added.empty());
        for (const auto& n : removed) CHECK(n.rfind(std::string(prefix) + ".", 0) == 0);
        for (const auto& n : all) {
            if (n.rfind(std::string(prefix) + ".", 0) == 0) CHECK(kept.count(n) == 0);
        }
    }
}

TEST_CASE("ablation lattice wiring") {
    auto lattice = flag_lattice();
    REQUIRE(lattice.size() == 5);
    CHECK(lattice.front().flags.is_rssm());
    CHECK(lattice.back().flags.ssp);
    CHECK(lattice.back().flags.prompt);

    auto run = micro_run();
    run.steps = 2;
    auto train = episodes(run.world, 90, 2);
    auto val = episodes(run.world, 95, 1);
    AblationOptions opts;
    opts.seeds = {1};
    opts.data_fractions = {1.0};
    std::size_t seen = 0;
    opts.on_row = [&](const AblationRow&) { ++seen; };
    auto rows = ablate(run, train, val, opts);
    REQUIRE(rows.size() == 5);
    CHECK(seen == 5);
    CHECK(rows[0].path == "rssm_variant");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].path == "observe_sequence");
        CHECK(rows[i].parameters > rows[0].parameters);
    }
    auto text = ablation_json(rows);
    CHECK(text.find("\"rssm_variant\"") != std::string::npos);
    CHECK(text.find("\"future_iou_h1\"") != std::string::npos);
}

TEST_CASE("training subset takes the leading share") {
    auto run = micro_run();
    auto eps = episodes(run.world, 100, 5);
    CHECK(training_subset(eps, 1.0).size() == 5);
    CHECK(training_subset(eps, 0.5).size() == 3);
    CHECK(training_subset(eps, 0.01).size() == 1);
    CHECK(training_subset(eps, 0.5).data() == eps.data());
}
