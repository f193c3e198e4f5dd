// SPDX-License-Identifier: Apache-2.0
#include "mssm/pipeline/ablate.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "mssm/pipeline/trainer.hpp"

namespace mssm::pipeline {

std::vector<LatticePoint> flag_lattice() {
    using model::Combine;
    return {
        {"rssm", model::ModelFlags::rssm()},
        {"+ssp", {true, false, false, false, Combine::kConcat}},
        {"+ssp+dmb", {true, true, false, false, Combine::kConcat}},
        {"+ssp+dmb+mln", {true, true, true, false, Combine::kConcat}},
        {"+all+prompt", model::ModelFlags::full()},
    };
}

std::vector<AblationRow> ablate(const RunConfig& base, std::span<const world::Episode> train,
                                std::span<const world::Episode> val, const AblationOptions& opts) {
    std::vector<AblationRow> rows;
    for (double fraction : opts.data_fractions) {
        for (const auto& point : flag_lattice()) {
            for (auto seed : opts.seeds) {
                RunConfig cfg = base;
                cfg.model.flags = point.flags;
                cfg.model.flags.combine = base.model.flags.combine;
                cfg.seed = seed;
                cfg.data_fraction = fraction;
                cfg.steps = std::max<std::size_t>(
                    1, static_cast<std::size_t>(std::llround(static_cast<double>(base.steps) * fraction)));
                auto trained = pretrain(cfg, train);
                auto model = model_from_checkpoint(trained.checkpoint);
                AblationRow row;
                row.label = point.label;
                row.path = cfg.model.flags.is_rssm() ? "rssm_variant" : "observe_sequence";
                row.data_fraction = fraction;
                row.seed = seed;
                row.parameters = model.params().parameter_count();
                row.metrics = evaluate(model, val);
                if (opts.on_row) opts.on_row(row);
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

std::string ablation_json(std::span<const AblationRow> rows) {
    nlohmann::ordered_json out;
    out["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json row;
        row["label"] = r.label;
        row["path"] = r.path;
        row["data_fraction"] = r.data_fraction;
        row["seed"] = r.seed;
        row["parameters"] = r.parameters;
        nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
        for (const auto& [k, v] : r.metrics.named()) metrics[k] = v;
        row["metrics"] = metrics;
        out["rows"].push_back(row);
    }
    return out.dump(2);
}

}  // namespace mssm::pipeline
