// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>

#include "mssm/grad/value.hpp"

namespace mssm::grad {

struct FiniteDiffReport {
    double max_relative_error = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;
};

/// Compares backward() against central differences for every entry of every
/// parameter. Relative error is |analytic - numeric| / max(1, |analytic|, |numeric|).
/// `fn` must rebuild the graph from the current parameter payloads and be
/// deterministic (seed any randomness inside it).
FiniteDiffReport finite_diff_report(const std::function<Value()>& fn, std::span<const Value> params, double eps);

double finite_diff_check(const std::function<Value()>& fn, std::span<const Value> params, double eps);

}  // namespace mssm::grad
