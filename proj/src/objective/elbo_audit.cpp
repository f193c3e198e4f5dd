// SPDX-License-Identifier: Apache-2.0
#include "mssm/objective/elbo_audit.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mssm::objective {

namespace {

// Laplace scale under which the negative log-likelihood of a 2-vector equals
// the mean absolute error plus a constant.
constexpr double kLaplaceScale = 2.0;
constexpr std::uint64_t kTrajectoryStream = 0x5eb1u;

using Span = std::span<const double>;

double reference_kl(Span mq, Span sq, Span mp, Span sp) {
    double kl = 0.0;
    for (std::size_t i = 0; i < mq.size(); ++i) {
        double dm = mq[i] - mp[i];
        kl += std::log(sp[i] / sq[i]) + (sq[i] * sq[i] + dm * dm) / (2.0 * sp[i] * sp[i]) - 0.5;
    }
    return kl;
}

// Mean per-voxel negative log-likelihood of the label classes.
double reference_categorical_nll(Span logits, std::span<const std::uint8_t> classes, std::size_t Z, std::size_t C,
                                 std::size_t hw) {
    double total = 0.0;
    for (std::size_t z = 0; z < Z; ++z) {
        for (std::size_t p = 0; p < hw; ++p) {
            auto at = [&](std::size_t c) { return logits[(z * C + c) * hw + p]; };
            double m = at(0);
            for (std::size_t c = 1; c < C; ++c) m = std::max(m, at(c));
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c) acc += std::exp(at(c) - m);
            total += m + std::log(acc) - at(classes[z * hw + p]);
        }
    }
    return total / static_cast<double>(Z * hw);
}

double laplace_normalizer(std::size_t n) { return static_cast<double>(n) * std::log(2.0 * kLaplaceScale); }

double reference_laplace_nll(Span predicted, const world::Action& a) {
    double target[2] = {static_cast<double>(a.velocity), static_cast<double>(a.steering)};
    double nll = laplace_normalizer(2);
    for (std::size_t i = 0; i < 2; ++i) nll += std::abs(predicted[i] - target[i]) / kLaplaceScale;
    return nll;
}

// E_{x ~ N(0,1)} f(x) with the three-point probabilists' Gauss-Hermite rule,
// exact for polynomials up to degree five.
template <class F>
double gauss_hermite3(F f) {
    const double node = std::sqrt(3.0);
    return (2.0 / 3.0) * f(0.0) + (1.0 / 6.0) * (f(node) + f(-node));
}

double log_ratio(double s, double mq, double sq, double mp, double sp) {
    double zq = (s - mq) / sq, zp = (s - mp) / sp;
    return std::log(sp) - std::log(sq) - 0.5 * zq * zq + 0.5 * zp * zp;
}

void add_term(ReadingCheck& rc, std::string name, double implemented, double reference) {
    rc.terms.push_back({std::move(name), implemented, reference, std::abs(implemented - reference)});
    rc.max_term_diff = std::max(rc.max_term_diff, rc.terms.back().diff);
}

ReadingCheck check_reading(const std::string& reading, const model::ObserveResult& obs,
                           const std::vector<model::ImaginedStep>& imagined, const world::Episode& ep) {
    ReadingCheck rc;
    rc.reading = reading;
    auto bd = total_loss(obs, imagined, ep);
    const std::size_t hw = static_cast<std::size_t>(ep.H) * ep.W;
    double bound = 0.0;
    for (std::size_t t = 0; t < ep.T; ++t) {
        const auto& st = obs.steps[t];
        double kl = reference_kl(st.posterior.mu.data(), st.posterior.sigma.data(), st.prior.mu.data(),
                                 st.prior.sigma.data());
        double ce = reference_categorical_nll(st.logits.data(), ep.label(t), ep.Z, ep.C, hw);
        double act = reference_laplace_nll(st.action.data(), ep.actions[t]);
        add_term(rc, "kl[" + std::to_string(t + 1) + "]", bd.kl_per_step[t], kl);
        add_term(rc, "past_ce[" + std::to_string(t + 1) + "]", bd.past_ce_per_step[t], ce);
        add_term(rc, "past_l1[" + std::to_string(t + 1) + "]", bd.past_l1_per_step[t], act - laplace_normalizer(2));
        bound += kl + ce + act;
        rc.laplace_constant += laplace_normalizer(2);
    }
    for (std::size_t k = 0; k < ep.L; ++k) {
        const auto& st = imagined[k];
        double ce = reference_categorical_nll(st.logits.data(), ep.label(ep.T + k), ep.Z, ep.C, hw);
        double act = reference_laplace_nll(st.action.data(), ep.actions[ep.T + k]);
        add_term(rc, "future_ce[" + std::to_string(k + 1) + "]", bd.future_ce_per_step[k], ce);
        add_term(rc, "future_l1[" + std::to_string(k + 1) + "]", bd.future_l1_per_step[k],
                 act - laplace_normalizer(2));
        bound += ce + act;
        rc.laplace_constant += laplace_normalizer(2);
    }
    rc.implemented_total = bd.total;
    rc.negated_bound = bound;
    rc.additivity_gap = std::abs(bound - rc.laplace_constant - bd.total);
    return rc;
}

SequenceKlCheck check_sequence(const model::MssmModel& model, const world::Episode& ep, std::uint64_t seed,
                               const ElboAuditOptions& opts) {
    model::RunOptions run;
    run.skip_decode = true;
    grad::RngState root = grad::RngState(seed).derive(kTrajectoryStream);
    SequenceKlCheck out;
    out.trajectories = opts.trajectories;
    double mean = 0.0, m2 = 0.0, seq = 0.0, step = 0.0;
    for (std::size_t i = 0; i < opts.trajectories; ++i) {
        grad::RngState rng = root.derive(i);
        auto obs = model.observe_sequence(ep, rng, run);
        double lr = 0.0, kl = 0.0;
        for (const auto& st : obs.steps) {
            Span mq = st.posterior.mu.data(), sq = st.posterior.sigma.data();
            Span mp = st.prior.mu.data(), sp = st.prior.sigma.data(), s = st.posterior.s.data();
            for (std::size_t d = 0; d < mq.size(); ++d) lr += log_ratio(s[d], mq[d], sq[d], mp[d], sp[d]);
            kl += reference_kl(mq, sq, mp, sp);
        }
        seq += lr;
        step += kl;
        double diff = lr - kl;
        double delta = diff - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta * (diff - mean);
    }
    double n = static_cast<double>(opts.trajectories);
    out.sequence_kl = seq / n;
    out.stepwise_kl = step / n;
    out.mean_diff = mean;
    out.stderr_diff = std::sqrt(m2 / (n - 1.0) / n);
    out.within_tolerance = std::abs(out.mean_diff) <= opts.stderr_multiple * out.stderr_diff;
    return out;
}

DeterministicLimitCheck check_deterministic_limit(const model::MssmModel& model, const world::Episode& ep,
                                                  std::uint64_t seed) {
    // Push the sigma half of both Gaussian heads far into the softplus tail so
    // every learned sigma sits on the floor.
    nn::ParamStore params = model.params().clone();
    const std::size_t ds = model.config().D_s;
    for (const char* group : {"posterior", "prior"}) {
        grad::Value b = params.group(group).at("l1.b");
        auto data = b.mutable_data();
        for (std::size_t i = ds; i < 2 * ds; ++i) data[i] = -1e3;
    }
    model::MssmModel degenerate(model.world(), model.config(), std::move(params));
    model::RunOptions run;
    run.zero_noise = true;
    run.skip_decode = true;
    grad::RngState rng(seed);
    auto obs = degenerate.observe_sequence(ep, rng, run);

    DeterministicLimitCheck out;
    for (const auto& st : obs.steps) {
        Span mq = st.posterior.mu.data(), sq = st.posterior.sigma.data();
        Span mp = st.prior.mu.data(), sp = st.prior.sigma.data();
        double closed = kl_diag_gaussian(st.posterior.mu, st.posterior.sigma, st.prior.mu, st.prior.sigma).item();
        double quad = 0.0;
        for (std::size_t d = 0; d < mq.size(); ++d) {
            quad += gauss_hermite3([&](double x) { return log_ratio(mq[d] + sq[d] * x, mq[d], sq[d], mp[d], sp[d]); });
        }
        out.closed_form.push_back(closed);
        out.quadrature.push_back(quad);
        out.sequence_closed_form += closed;
        out.sequence_quadrature += quad;
    }
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); };
    for (std::size_t t = 0; t < out.closed_form.size(); ++t) {
        out.max_relative_diff = std::max(out.max_relative_diff, rel(out.closed_form[t], out.quadrature[t]));
    }
    out.max_relative_diff =
        std::max(out.max_relative_diff, rel(out.sequence_closed_form, out.sequence_quadrature));
    return out;
}

std::string format_report(const ElboAuditReport& r) {
    std::ostringstream os;
    os.precision(12);
    for (const auto* rc : {&r.rolled_out, &r.literal}) {
        os << rc->reading << ": total " << rc->implemented_total << " negated bound " << rc->negated_bound
           << " (normalizer " << rc->laplace_constant << ") gap " << rc->additivity_gap << " max term diff "
           << rc->max_term_diff << "\n";
        for (const auto& t : rc->terms) {
            os << "  " << t.name << " implemented " << t.implemented << " reference " << t.reference << " diff "
               << t.diff << "\n";
        }
    }
    os << "sequence KL " << r.sequence.sequence_kl << " stepwise " << r.sequence.stepwise_kl << " paired diff "
       << r.sequence.mean_diff << " +/- " << r.sequence.stderr_diff << " over " << r.sequence.trajectories
       << " trajectories\n";
    os << "deterministic limit: sequence closed form " << r.limit.sequence_closed_form << " quadrature "
       << r.limit.sequence_quadrature << " max rel diff " << r.limit.max_relative_diff << "\n";
    os << "future drop gap " << r.future_drop_gap << "\n";
    for (const auto& f : r.failures) os << "FAIL " << f << "\n";
    return os.str();
}

}  // namespace

std::string ElboAuditReport::summary() const { return format_report(*this); }

ElboAuditError::ElboAuditError(ElboAuditReport report)
    : std::runtime_error("elbo audit diverged beyond tolerance\n" + report.summary()), report_(std::move(report)) {}

ElboAuditReport elbo_audit(const model::MssmModel& model, const world::Episode& ep, std::uint64_t seed,
                           const ElboAuditOptions& opts) {
    if (ep.T > 3 || ep.L > 2 || model.config().D_s > 4) {
        throw std::invalid_argument("elbo_audit: needs a micro configuration (T <= 3, L <= 2, D_s <= 4)");
    }
    if (opts.trajectories < 2) throw std::invalid_argument("elbo_audit: need at least two trajectories");

    ElboAuditReport report;
    grad::RngState rng(seed);
    auto obs = model.observe_sequence(ep, rng, {});
    model::RunOptions literal_opts;
    literal_opts.literal_future = true;
    grad::RngState rng_rolled = rng, rng_literal = rng;
    auto rolled = model.imagine(obs.final_state, ep.L, rng_rolled, {});
    auto literal = model.imagine(obs.final_state, ep.L, rng_literal, literal_opts);
    report.rolled_out = check_reading("rolled-out", obs, rolled, ep);
    report.literal = check_reading("literal", obs, literal, ep);

    auto full = total_loss(obs, rolled, ep);
    world::Episode observed_only = ep.truncated(ep.T);
    grad::RngState rng_short(seed);
    auto obs_short = model.observe_sequence(observed_only, rng_short, {});
    auto past_only = total_loss(obs_short, {}, observed_only);
    report.future_drop_gap = std::abs((full.total - full.future_occ_ce - full.future_act_l1) - past_only.total);

    report.sequence = check_sequence(model, ep, seed, opts);
    report.limit = check_deterministic_limit(model, ep, seed);

    for (const auto* rc : {&report.rolled_out, &report.literal}) {
        if (rc->max_term_diff > opts.term_tolerance) report.failures.push_back(rc->reading + " term mismatch");
        if (rc->additivity_gap > opts.term_tolerance) report.failures.push_back(rc->reading + " additivity gap");
    }
    if (!report.sequence.within_tolerance) report.failures.push_back("sequence-level KL outside MC error");
    if (report.limit.max_relative_diff > opts.limit_tolerance) report.failures.push_back("deterministic limit");
    if (report.future_drop_gap > opts.drop_tolerance) report.failures.push_back("future drop");
    report.passed = report.failures.empty();
    if (!report.passed && opts.throw_on_failure) throw ElboAuditError(report);
    return report;
}

}  // namespace mssm::objective
