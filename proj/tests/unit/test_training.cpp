// SPDX-License-Identifier: Apache-2.0
//
// Short optimization runs on tiny worlds.
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mssm/grad/ops.hpp"
#include "mssm/objective/losses.hpp"
#include "mssm/pipeline/adam.hpp"
#include "mssm/pipeline/evaluate.hpp"
#include "mssm/pipeline/trainer.hpp"
#include "mssm/world/simulator.hpp"

using namespace mssm;
using namespace mssm::pipeline;

namespace {

RunConfig tiny_run() {
    RunConfig cfg;
    auto& w = cfg.world;
    w.H = 8;
    w.W = 8;
    w.Z = 2;
    w.n_agents = 2;
    w.n_obstacles = 1;
    w.T = 3;
    w.L = 2;
    auto& m = cfg.model;
    m.D_h = 16;
    m.D_s = 8;
    m.D_x = 16;
    m.C_e = 8;
    m.C_b = 8;
    m.C_m = 4;
    m.C_f = 8;
    m.C_u = 8;
    m.hidden = 32;
    m.prompt_dim = 4;
    m.bank_capacity = 4;
    cfg.optim.lr = 1e-2;
    cfg.seed = 3;
    return cfg;
}

double mean(const std::vector<double>& v, std::size_t from, std::size_t to) {
    return std::accumulate(v.begin() + static_cast<long>(from), v.begin() + static_cast<long>(to), 0.0) /
           static_cast<double>(to - from);
}

/// Trains on `eps` in rotation, calling `probe` after every step.
template <typename Probe>
void train_loop(model::MssmModel& m, const RunConfig& cfg, const std::vector<world::Episode>& eps, std::size_t steps,
                Probe&& probe) {
    AdamState adam;
    objective::LossWeights weights;
    grad::RngState root(cfg.seed);
    for (std::size_t step = 1; step <= steps; ++step) {
        m.params().zero_grad();
        grad::RngState rng = root.derive(step);
        auto loss = episode_loss(m, eps[step % eps.size()], rng, weights);
        grad::backward(loss.total_value);
        adam_step(m.params(), adam, cfg.optim);
        probe(step, loss);
    }
}

}  // namespace

TEST_CASE("policy error to the expert falls on a two-episode set") {
    auto cfg = tiny_run();
    std::vector<world::Episode> eps{world::simulate_episode(cfg.world, 1), world::simulate_episode(cfg.world, 2)};
    model::MssmModel m(cfg.world, cfg.model, cfg.seed);
    double before = evaluate(m, eps).action_mae;
    train_loop(m, cfg, eps, 150, [](std::size_t, const objective::LossBreakdown&) {});
    double after = evaluate(m, eps).action_mae;
    CHECK(after < 0.5 * before);
}

TEST_CASE("an overfit single-episode model reproduces its labels") {
    auto cfg = tiny_run();
    cfg.world.noise = 0.0;
    std::vector<world::Episode> eps{world::simulate_episode(cfg.world, 11)};
    const auto& ep = eps[0];
    model::MssmModel m(cfg.world, cfg.model, cfg.seed);
    train_loop(m, cfg, eps, 400, [](std::size_t, const objective::LossBreakdown&) {});

    grad::RngState rng(0);
    model::RunOptions opts;
    opts.zero_noise = true;
    opts.ssp_frame = ep.T - 1;
    auto out = m.observe_sequence(ep, rng, opts);
    std::size_t hit = 0, total = 0;
    for (std::size_t t = 0; t < ep.T; ++t) {
        auto pred = argmax_classes(out.steps[t].logits, ep.C);
        auto label = ep.label(t);
        for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == label[i];
        total += pred.size();
    }
    CHECK(static_cast<double>(hit) / static_cast<double>(total) >= 0.99);
}

TEST_CASE("posterior KL shrinks across checkpoints on a clean episode") {
    auto cfg = tiny_run();
    cfg.world.noise = 0.0;
    cfg.world.occlusion_radius = 0.0;
    cfg.optim.lr = 1e-3;
    std::vector<world::Episode> eps{world::simulate_episode(cfg.world, 21)};
    model::MssmModel m(cfg.world, cfg.model, cfg.seed);
    std::vector<double> kl;
    // Checkpoints double in spacing.
    train_loop(m, cfg, eps, 800, [&](std::size_t step, const objective::LossBreakdown&) {
        if (step >= 25 && (step % 25 == 0) && ((step / 25) & (step / 25 - 1)) == 0) {
            kl.push_back(evaluate(m, eps).mean_kl);
        }
    });
    REQUIRE(kl.size() == 6);
    for (std::size_t i = 1; i < kl.size(); ++i) {
        CAPTURE(i);
        CHECK(kl[i] <= kl[i - 1]);
    }
}

TEST_CASE("two hundred steps on one default episode halve the loss") {
    RunConfig cfg;
    cfg.steps = 200;
    cfg.seed = 1;
    std::vector<world::Episode> eps{world::simulate_episode(cfg.world, 7)};
    auto r = pretrain(cfg, eps);
    std::vector<double> totals;
    for (const auto& s : r.history) totals.push_back(s.total);
    REQUIRE(totals.size() == 200);
    double early = mean(totals, 0, 5);
    double late = mean(totals, 195, 200);
    CHECK(late <= 0.5 * early);
}
