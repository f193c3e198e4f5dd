// SPDX-License-Identifier: Apache-2.0
#include "mssm/model/mssm.hpp"

#include <cmath>

namespace mssm::model {

namespace g = mssm::grad;

namespace {

constexpr double kInstanceNormEps = 1e-5;

// Group names. Optional components live under a prefix equal to their flag.
constexpr const char* kEncoder = "encoder";
constexpr const char* kCompress = "compress";
constexpr const char* kPosterior = "posterior";
constexpr const char* kPrior = "prior";
constexpr const char* kPolicy = "policy";
constexpr const char* kTransition = "transition";
constexpr const char* kExpand = "decoder.expand";
constexpr const char* kHead = "decoder.head";
constexpr const char* kPropagate = "ssp.propagate";
constexpr const char* kSspFuse = "ssp.fuse";
constexpr const char* kAttention = "dmb.attention";
constexpr const char* kModulation = "mln.modulation";
constexpr const char* kPromptTable = "prompt.table";
constexpr const char* kPromptFilm = "prompt.film";

std::uint64_t name_stream(std::string_view name) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
    return h;
}

Value mlp(const nn::ParamGroup& grp, const Value& in) {
    return nn::linear(g::tanh(nn::linear(in, nn::linear_of(grp, "l0"))), nn::linear_of(grp, "l1"));
}

bool all_finite(const Value& v) {
    for (double x : v.data())
        if (!std::isfinite(x)) return false;
    return true;
}

// Per-channel normalization over space followed by scale and shift.
Value adaptive_instance_norm(const Value& f, const Value& scale, const Value& shift) {
    std::size_t c = f.shape()[0], hw = f.shape()[1] * f.shape()[2];
    Value flat = g::reshape(f, {c, hw});
    Value centered = g::sub(flat, g::reshape(g::mean(flat, 1), {c, 1}));
    Value var = g::reshape(g::mean(g::square(centered), 1), {c, 1});
    Value inv_std = g::exp(g::scale(g::log(g::add_scalar(var, kInstanceNormEps)), -0.5));
    Value y = g::add(g::mul(g::mul(centered, inv_std), g::reshape(scale, {c, 1})), g::reshape(shift, {c, 1}));
    return g::reshape(y, f.shape());
}

}  // namespace

Latent reparameterize(const Value& mu, const Value& sigma, g::RngState& rng, bool zero_noise) {
    Latent out;
    out.mu = mu;
    out.sigma = sigma;
    out.eps = zero_noise ? Value::zeros(mu.shape()) : g::sample_normal(rng, mu.shape());
    out.s = g::add(mu, g::mul(sigma, out.eps));
    return out;
}

std::size_t select_ssp_frame(g::RngState& rng, std::size_t T) { return static_cast<std::size_t>(rng.uniform_index(T)); }

MssmModel::MssmModel(const world::WorldConfig& world, const ModelConfig& cfg, std::uint64_t seed)
    : world_(world), cfg_(cfg) {
    world_.validate();
    cfg_.validate(world_);
    build(seed);
}

MssmModel::MssmModel(const world::WorldConfig& world, const ModelConfig& cfg, nn::ParamStore params)
    : MssmModel(world, cfg, 0) {
    auto expected = params_.qualified_names();
    auto given = params.qualified_names();
    if (expected != given) throw ModelError("parameter layout does not match the model configuration");
    for (const auto& name : expected) {
        if (params_.lookup(name).shape() != params.lookup(name).shape()) {
            throw ModelError("parameter " + name + " has shape " + g::shape_to_string(params.lookup(name).shape()) +
                             ", expected " + g::shape_to_string(params_.lookup(name).shape()));
        }
    }
    params_ = std::move(params);
}

void MssmModel::build(std::uint64_t seed) {
    const g::RngState root(seed);
    const std::size_t zc = world_.Z * world_.C;
    const std::size_t a = 2;
    const std::size_t hw = feature_rows() * feature_cols();
    auto group = [&](const char* name) -> std::pair<nn::ParamGroup&, g::RngState> {
        return {params_.add_group(name), root.derive(name_stream(name))};
    };

    {
        auto [grp, rng] = group(kEncoder);
        nn::add_conv(grp, "c0", zc, cfg_.C_e, 3, 2, 1, rng);
        nn::add_conv(grp, "c1", cfg_.C_e, cfg_.C_b, 3, 2, 1, rng);
    }
    {
        auto [grp, rng] = group(kCompress);
        nn::add_linear(grp, "l", cfg_.C_b, cfg_.D_x, rng);
    }
    {
        auto [grp, rng] = group(kPosterior);
        nn::add_linear(grp, "l0", cfg_.D_h + a + cfg_.D_x, cfg_.hidden, rng);
        nn::add_linear(grp, "l1", cfg_.hidden, 2 * cfg_.D_s, rng);
    }
    {
        auto [grp, rng] = group(kPrior);
        nn::add_linear(grp, "l0", cfg_.D_h + a, cfg_.hidden, rng);
        nn::add_linear(grp, "l1", cfg_.hidden, 2 * cfg_.D_s, rng);
    }
    {
        auto [grp, rng] = group(kPolicy);
        nn::add_linear(grp, "l0", cfg_.D_h + cfg_.D_s, cfg_.hidden, rng);
        nn::add_linear(grp, "l1", cfg_.hidden, a, rng);
    }
    {
        auto [grp, rng] = group(kTransition);
        nn::add_gru(grp, cfg_.D_s, cfg_.D_h, rng);
    }
    {
        auto [grp, rng] = group(kExpand);
        nn::add_linear(grp, "lin", cfg_.D_h + cfg_.D_s, cfg_.C_m * hw, rng);
        nn::add_conv(grp, "conv", cfg_.C_m, cfg_.C_m, 3, 1, 1, rng);
    }
    {
        auto [grp, rng] = group(kHead);
        nn::add_conv(grp, "fuse", cfg_.C_m, cfg_.C_f, 1, 1, 0, rng);
        nn::add_conv(grp, "up", cfg_.C_f, cfg_.C_u, 3, 1, 1, rng);
        nn::add_conv(grp, "out", cfg_.C_u, zc, 3, 1, 1, rng);
    }
    if (cfg_.flags.ssp) {
        {
            auto [grp, rng] = group(kPropagate);
            nn::add_conv(grp, "c0", cfg_.C_b, cfg_.C_b, 3, 1, 1, rng);
            nn::add_conv(grp, "c1", cfg_.C_b, cfg_.C_b, 3, 1, 1, rng);
        }
        if (cfg_.flags.combine == Combine::kConcat) {
            auto [grp, rng] = group(kSspFuse);
            nn::add_conv(grp, "fuse", cfg_.C_b, cfg_.C_f, 1, 1, 0, rng, false);
        }
    }
    if (cfg_.flags.dmb) {
        auto [grp, rng] = group(kAttention);
        nn::add_attention(grp, cfg_.D_h, rng);
    }
    if (cfg_.flags.mln) {
        auto [grp, rng] = group(kModulation);
        grp.add("xi1.w", {3, cfg_.D_s}, nn::InitSpec::uniform_fan_in(3), rng);
        grp.add("xi1.b", {cfg_.D_s}, nn::InitSpec::constant(1.0), rng);
        nn::add_linear(grp, "xi2", 3, cfg_.D_s, rng);
    }
    if (cfg_.flags.prompt) {
        {
            auto [grp, rng] = group(kPromptTable);
            grp.add("table", {PromptRegistry::builtin().size(), cfg_.prompt_dim}, nn::InitSpec::normal(0.02), rng);
        }
        {
            auto [grp, rng] = group(kPromptFilm);
            nn::add_linear(grp, "scale", cfg_.prompt_dim, cfg_.C_f, rng);
            nn::add_linear(grp, "shift", cfg_.prompt_dim, cfg_.C_f, rng);
        }
    }
}

Value MssmModel::encode_bev(const Value& obs) const {
    g::Shape want{static_cast<std::size_t>(world_.Z) * world_.C, world_.H, world_.W};
    if (obs.shape() != want) throw g::ShapeError("encode_bev", {obs.shape(), want}, "observation dims mismatch");
    const auto& grp = params_.group(kEncoder);
    Value b = g::relu(nn::conv(obs, nn::conv_of(grp, "c0", 2, 1)));
    return g::relu(nn::conv(b, nn::conv_of(grp, "c1", 2, 1)));
}

Value MssmModel::compress_bev(const Value& b) const {
    std::size_t c = b.shape()[0];
    Value pooled = g::reshape(g::mean(g::reshape(b, {c, b.size() / c}), 1), {c});
    return nn::linear(pooled, nn::linear_of(params_.group(kCompress), "l"));
}

Latent MssmModel::gaussian_head(const nn::ParamGroup& grp, const Value& in, g::RngState& rng, bool zero_noise,
                                const char* which, std::size_t step) const {
    Value out = mlp(grp, in);
    Value mu = g::slice(out, 0, 0, cfg_.D_s);
    Value sigma = g::add_scalar(g::softplus(g::slice(out, 0, cfg_.D_s, 2 * cfg_.D_s)), cfg_.sigma_floor);
    if (!all_finite(mu) || !all_finite(sigma)) {
        throw ModelError(std::string("non-finite ") + which + " parameters at step " + std::to_string(step + 1));
    }
    return reparameterize(mu, sigma, rng, zero_noise);
}

Latent MssmModel::posterior(const Value& h, const Value& a_prev, const Value& x, g::RngState& rng, bool zero_noise,
                            std::size_t step) const {
    std::vector<Value> parts{h, a_prev, x};
    return gaussian_head(params_.group(kPosterior), g::concat(parts, 0), rng, zero_noise, "posterior", step);
}

Latent MssmModel::prior(const Value& h, const Value& a_hat_prev, g::RngState& rng, bool zero_noise,
                        std::size_t step) const {
    std::vector<Value> parts{h, a_hat_prev};
    return gaussian_head(params_.group(kPrior), g::concat(parts, 0), rng, zero_noise, "prior", step);
}

Latent MssmModel::initial_prior(g::RngState& rng, bool zero_noise) const {
    return reparameterize(Value::zeros({cfg_.D_s}), Value::full({cfg_.D_s}, 1.0), rng, zero_noise);
}

Value MssmModel::policy(const Value& h, const Value& s) const {
    std::vector<Value> parts{h, s};
    Value raw = mlp(params_.group(kPolicy), g::concat(parts, 0));
    return g::mul(g::tanh(raw), Value::vector({world_.ego_speed_max, world_.steer_max}));
}

Value MssmModel::refine_history(const Value& h, const MemoryBank& bank) const {
    if (!cfg_.flags.dmb || bank.empty()) return h;
    auto entries = bank.entries();
    return nn::cross_attention(h, entries, entries, nn::attention_of(params_.group(kAttention)));
}

Value MssmModel::modulate(const Value& s, const nn::MotionContext& ctx) const {
    if (!cfg_.flags.mln) return s;
    const auto& grp = params_.group(kModulation);
    return nn::mln(s, ctx, nn::linear_of(grp, "xi1"), nn::linear_of(grp, "xi2"));
}

Value MssmModel::transition(const Value& h_refined, const Value& s, const nn::MotionContext& ctx) const {
    return nn::gru_cell(h_refined, modulate(s, ctx), nn::gru_of(params_.group(kTransition)));
}

Value MssmModel::ssp(const Value& b_prime) const {
    const auto& grp = params_.group(kPropagate);
    Value z = g::relu(nn::conv(b_prime, nn::conv_of(grp, "c0", 1, 1)));
    return nn::conv(z, nn::conv_of(grp, "c1", 1, 1));
}

Value MssmModel::decode_occupancy(const Value& h_refined, const Value& s, const Value& b_hat,
                                  const TaskPrompt& prompt) const {
    const auto& expand = params_.group(kExpand);
    const auto& head = params_.group(kHead);
    std::vector<Value> parts{h_refined, s};
    Value m = nn::linear(g::concat(parts, 0), nn::linear_of(expand, "lin"));
    m = g::relu(g::reshape(m, {cfg_.C_m, feature_rows(), feature_cols()}));
    m = g::relu(nn::conv(m, nn::conv_of(expand, "conv", 1, 1)));

    auto fuse = nn::conv_of(head, "fuse", 1, 0);
    Value f;
    if (cfg_.flags.ssp) {
        if (!b_hat.defined()) throw ModelError("decode_occupancy: propagated static feature missing");
        if (cfg_.flags.combine == Combine::kConcat) {
            f = g::add(nn::conv(m, fuse), nn::conv(b_hat, nn::conv_of(params_.group(kSspFuse), "fuse", 1, 0)));
        } else {
            f = nn::conv(g::add(m, b_hat), fuse);
        }
    } else {
        f = nn::conv(m, fuse);
    }
    if (cfg_.flags.prompt) {
        const auto& film = params_.group(kPromptFilm);
        Value e = nn::embed(params_.group(kPromptTable).at("table"), prompt.token);
        Value scale = g::add_scalar(nn::linear(e, nn::linear_of(film, "scale")), 1.0);
        Value shift = nn::linear(e, nn::linear_of(film, "shift"));
        f = adaptive_instance_norm(f, scale, shift);
    }
    f = g::upsample_nearest(g::relu(f), 2);
    f = g::upsample_nearest(g::relu(nn::conv(f, nn::conv_of(head, "up", 1, 1))), 2);
    return nn::conv(f, nn::conv_of(head, "out", 1, 1));
}

Value MssmModel::action_value(const world::Action& a) const {
    return Value::vector({static_cast<double>(a.velocity), static_cast<double>(a.steering)});
}

nn::MotionContext MssmModel::motion_context(const world::Motion& m) const {
    return {{static_cast<double>(m.v_forward), static_cast<double>(m.v_lateral)}, static_cast<double>(m.dt)};
}

nn::MotionContext MssmModel::motion_context(const Value& action) const {
    return {{action[0], action[1]}, 1.0, action};
}

ObserveResult MssmModel::observe_sequence(const world::Episode& ep, g::RngState& rng, const RunOptions& opts) const {
    if (ep.H != world_.H || ep.W != world_.W || ep.Z != world_.Z || ep.C != world_.C) {
        throw ModelError("episode grid dims do not match the model's world config");
    }
    if (ep.T < 1 || ep.steps() < ep.T) throw ModelError("episode has fewer than T steps");
    const TaskPrompt prompt = PromptRegistry::builtin().resolve(opts.prompt);
    const std::size_t T = ep.T;

    std::vector<Value> features;
    features.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        features.push_back(encode_bev(world::one_hot(ep.observation(t), ep.Z, ep.C, ep.H, ep.W)));
    }

    ObserveResult out;
    out.ssp_frame = select_ssp_frame(rng, T);
    if (opts.ssp_frame) {
        if (*opts.ssp_frame >= T) throw ModelError("ssp frame override outside the observed window");
        out.ssp_frame = *opts.ssp_frame;
    }
    if (cfg_.flags.ssp) out.b_hat = ssp(features[out.ssp_frame]);

    MemoryBank bank = new_bank();
    Value h = Value::zeros({cfg_.D_h});
    Value a_prev = Value::zeros({2});
    Value a_hat_prev = Value::zeros({2});
    for (std::size_t t = 0; t < T; ++t) {
        StepOutput step;
        step.h = h;
        step.prior = t == 0 ? initial_prior(rng, opts.zero_noise) : prior(h, a_hat_prev, rng, opts.zero_noise, t);
        if (opts.posterior_equals_prior) {
            step.posterior = step.prior;
        } else {
            step.posterior = posterior(h, a_prev, compress_bev(features[t]), rng, opts.zero_noise, t);
        }
        step.h_refined = refine_history(h, bank);
        if (cfg_.flags.dmb) bank.push(h);
        step.action = policy(h, step.posterior.s);
        if (!opts.skip_decode) step.logits = decode_occupancy(step.h_refined, step.posterior.s, out.b_hat, prompt);

        if (t + 1 < T) {
            h = transition(step.h_refined, step.posterior.s, motion_context(ep.motion[t]));
            a_prev = action_value(ep.actions[t]);
            a_hat_prev = step.action;
        }
        out.steps.push_back(std::move(step));
    }
    const auto& last = out.steps.back();
    out.final_state = {last.h, last.h_refined, last.posterior.s, last.action, std::move(bank), out.b_hat};
    return out;
}

std::vector<ImaginedStep> MssmModel::imagine(const RolloutState& state, long L, g::RngState& rng,
                                             const RunOptions& opts) const {
    if (L < 0) throw std::invalid_argument("imagine: L must be >= 0");
    const TaskPrompt prompt = PromptRegistry::builtin().resolve(opts.prompt);
    std::vector<ImaginedStep> out;
    MemoryBank bank = state.bank;
    Value h_ref = state.h_refined, s = state.s, a_hat = state.action;
    Value fixed_logits, fixed_action;
    if (opts.literal_future && L > 0) {
        if (!opts.skip_decode) fixed_logits = decode_occupancy(state.h_refined, state.s, state.b_hat, prompt);
        fixed_action = policy(state.h, state.s);
    }
    for (long k = 0; k < L; ++k) {
        ImaginedStep step;
        step.h = transition(h_ref, s, motion_context(a_hat));
        step.prior = prior(step.h, a_hat, rng, opts.zero_noise, static_cast<std::size_t>(k));
        step.h_refined = refine_history(step.h, bank);
        if (cfg_.flags.dmb) bank.push(step.h);
        if (opts.literal_future) {
            step.action = fixed_action;
            step.logits = fixed_logits;
        } else {
            step.action = policy(step.h, step.prior.s);
            if (!opts.skip_decode) step.logits = decode_occupancy(step.h_refined, step.prior.s, state.b_hat, prompt);
        }
        h_ref = step.h_refined;
        s = step.prior.s;
        a_hat = step.action;
        out.push_back(std::move(step));
    }
    return out;
}

ObserveResult rssm_variant(const world::Episode& ep, const MssmModel& model, g::RngState& rng,
                           const RunOptions& opts) {
    if (!model.config().flags.is_rssm()) throw ModelError("rssm_variant needs a model with every optional component off");
    return model.observe_sequence(ep, rng, opts);
}

}  // namespace mssm::model
