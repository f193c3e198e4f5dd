// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mssm/model/mssm.hpp"
#include "mssm/world/episode.hpp"

namespace mssm::objective {

using grad::Value;

class LossError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr double kDefaultSigmaFloor = 1e-3;

/// Closed-form KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)) summed over coordinates.
/// Returns a {1} Value. Throws LossError when a sigma is below `floor`.
Value kl_diag_gaussian(const Value& mu_q, const Value& sigma_q, const Value& mu_p, const Value& sigma_p,
                       double floor = kDefaultSigmaFloor);

struct KlEstimate {
    double estimate = 0.0;
    double standard_error = 0.0;
};

/// Mean of log q(s) - log p(s) over n draws s ~ q; n >= 1000.
KlEstimate kl_monte_carlo(std::span<const double> mu_q, std::span<const double> sigma_q, std::span<const double> mu_p,
                          std::span<const double> sigma_p, std::size_t n, std::uint64_t seed);

/// Mean over voxels of -log softmax(logits)[true class]. `labels` is the
/// (Z*C, H, W) one-hot field; every voxel must hold exactly one 1.
Value occupancy_ce(const Value& logits, const Value& labels, std::size_t classes);

/// Mean absolute error over components.
Value action_l1(const Value& predicted, const Value& target);

struct LossWeights {
    double kl = 1.0;
    double past_ce = 1.0;
    double past_l1 = 1.0;
    double future_ce = 1.0;
    double future_l1 = 1.0;
};

/// Components are sums over steps; `total` is their weighted sum.
struct LossBreakdown {
    std::vector<double> kl_per_step;
    std::vector<double> past_ce_per_step;
    std::vector<double> past_l1_per_step;
    std::vector<double> future_ce_per_step;
    std::vector<double> future_l1_per_step;
    double kl = 0.0;
    double past_occ_ce = 0.0;
    double past_act_l1 = 0.0;
    double future_occ_ce = 0.0;
    double future_act_l1 = 0.0;
    double total = 0.0;
    LossWeights weights;
    Value total_value;  // differentiable total

    /// Weighted sum recomputed from the components.
    double recomputed_total() const;
};

LossBreakdown total_loss(const model::ObserveResult& observed, std::span<const model::ImaginedStep> imagined,
                         const world::Episode& ep, const LossWeights& weights = {});

}  // namespace mssm::objective
