// SPDX-License-Identifier: Apache-2.0
#include "mssm/pipeline/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace mssm::pipeline {

void adam_step(std::span<double> param, std::span<const double> grad, Moments& moments, std::uint64_t t,
               const AdamConfig& cfg) {
    const std::size_t n = param.size();
    if (moments.m.empty() && moments.v.empty()) {
        moments.m.assign(n, 0.0);
        moments.v.assign(n, 0.0);
    }
    if (grad.size() != n || moments.m.size() != n || moments.v.size() != n) {
        throw std::invalid_argument("adam_step: parameter, gradient and moment sizes differ (" + std::to_string(n) +
                                    ", " + std::to_string(grad.size()) + ", " + std::to_string(moments.m.size()) +
                                    ")");
    }
    if (t == 0) throw std::invalid_argument("adam_step: step counter starts at 1");
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
        double g = grad[i];
        double& m = moments.m[i];
        double& v = moments.v[i];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        param[i] -= cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
    }
}

void adam_step(nn::ParamStore& params, AdamState& state, const AdamConfig& cfg) {
    ++state.step;
    for (auto& group : params.groups()) {
        if (group->frozen()) continue;
        for (auto& entry : group->entries()) {
            auto& value = entry.value;
            auto grad = value.grad();
            if (grad.empty()) continue;
            adam_step(value.mutable_data(), grad, state.moments[group->name() + "/" + entry.name], state.step, cfg);
        }
    }
}

}  // namespace mssm::pipeline
