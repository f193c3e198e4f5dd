// SPDX-License-Identifier: Apache-2.0
#include "mssm/grad/finite_diff.hpp"

#include <algorithm>
#include <cmath>

namespace mssm::grad {

namespace {

double evaluate(const std::function<Value()>& fn) {
    double v = fn().item();
    if (!std::isfinite(v)) throw GradError("finite_diff_check: non-finite function value");
    return v;
}

}  // namespace

FiniteDiffReport finite_diff_report(const std::function<Value()>& fn, std::span<const Value> params, double eps) {
    if (!(eps > 0.0)) throw GradError("finite_diff_check: eps must be positive");
    std::vector<Value> ps(params.begin(), params.end());
    for (auto& p : ps) p.zero_grad();
    {
        Value root = fn();
        if (!std::isfinite(root.item())) throw GradError("finite_diff_check: non-finite function value");
        backward(root);
    }
    std::vector<std::vector<double>> analytic;
    for (auto& p : ps) {
        analytic.emplace_back(p.grad().begin(), p.grad().end());
        p.zero_grad();
    }

    FiniteDiffReport report;
    for (std::size_t k = 0; k < ps.size(); ++k) {
        auto data = ps[k].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            double saved = data[i];
            data[i] = saved + eps;
            double fp = evaluate(fn);
            data[i] = saved - eps;
            double fm = evaluate(fn);
            data[i] = saved;
            double numeric = (fp - fm) / (2.0 * eps);
            double a = analytic[k][i];
            double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            ++report.checked;
            if (rel > report.max_relative_error) {
                report.max_relative_error = rel;
                report.worst_param = k;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    return report;
}

double finite_diff_check(const std::function<Value()>& fn, std::span<const Value> params, double eps) {
    return finite_diff_report(fn, params, eps).max_relative_error;
}

}  // namespace mssm::grad
