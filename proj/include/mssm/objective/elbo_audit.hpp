// SPDX-License-Identifier: Apache-2.0
//
// Numerical audit of the training loss against the variational bound it is
// derived from. Works on micro configurations only (T <= 3, L <= 2, D_s <= 4).
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mssm/model/mssm.hpp"
#include "mssm/objective/losses.hpp"
#include "mssm/world/episode.hpp"

namespace mssm::objective {

struct TermCheck {
    std::string name;  // e.g. "kl[1]", "future_ce[2]"
    double implemented = 0.0;
    double reference = 0.0;
    double diff = 0.0;
};

/// One reading of the future terms: "rolled-out" (decode from rolled states)
/// or "literal" (decode every future step from the last observed state).
struct ReadingCheck {
    std::string reading;
    std::vector<TermCheck> terms;
    double implemented_total = 0.0;
    double negated_bound = 0.0;     // sum of reference negative log-likelihoods and KLs
    double laplace_constant = 0.0;  // action normalizer carried by the bound only
    double additivity_gap = 0.0;    // |negated_bound - laplace_constant - implemented_total|
    double max_term_diff = 0.0;
};

struct SequenceKlCheck {
    std::size_t trajectories = 0;
    double sequence_kl = 0.0;  // mean over trajectories of sum_t log q(s_t) / p(s_t)
    double stepwise_kl = 0.0;  // mean over trajectories of sum_t KL_t
    double mean_diff = 0.0;
    double stderr_diff = 0.0;  // standard error of the paired difference
    bool within_tolerance = false;
};

struct DeterministicLimitCheck {
    std::vector<double> closed_form;  // per-step KL on the mean path
    std::vector<double> quadrature;   // per-step E_q[log q - log p] by Gauss-Hermite
    double sequence_closed_form = 0.0;
    double sequence_quadrature = 0.0;
    double max_relative_diff = 0.0;
};

struct ElboAuditReport {
    ReadingCheck rolled_out;
    ReadingCheck literal;
    SequenceKlCheck sequence;
    DeterministicLimitCheck limit;
    double future_drop_gap = 0.0;  // |(total - future terms) - total with L = 0|

    bool passed = false;
    std::vector<std::string> failures;

    std::string summary() const;
};

struct ElboAuditOptions {
    std::size_t trajectories = 10000;
    double term_tolerance = 1e-9;
    double limit_tolerance = 1e-6;
    double drop_tolerance = 1e-12;
    double stderr_multiple = 3.0;
    bool throw_on_failure = true;
};

class ElboAuditError : public std::runtime_error {
public:
    explicit ElboAuditError(ElboAuditReport report);
    const ElboAuditReport& report() const { return report_; }

private:
    ElboAuditReport report_;
};

ElboAuditReport elbo_audit(const model::MssmModel& model, const world::Episode& ep, std::uint64_t seed,
                           const ElboAuditOptions& opts = {});

}  // namespace mssm::objective
