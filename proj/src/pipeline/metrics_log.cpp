// SPDX-License-Identifier: Apache-2.0
#include "mssm/pipeline/metrics_log.hpp"

#include <json.hpp>
#include <stdexcept>

#include "mssm/common/digest.hpp"

namespace mssm::pipeline {

std::string run_id(const RunConfig& cfg) { return common::sha256_hex(cfg.to_text()).substr(0, 12); }

MetricsLog::MetricsLog(const std::filesystem::path& path, std::string id)
    : path_(path), run_id_(std::move(id)), out_(std::make_unique<std::ofstream>(path, std::ios::trunc)) {
    if (!*out_) throw std::runtime_error("cannot open metrics file " + path.string());
}

void MetricsLog::record(std::uint64_t step, const std::string& kind, const NamedValues& values) {
    nlohmann::ordered_json line;
    line["run_id"] = run_id_;
    line["step"] = step;
    line["kind"] = kind;
    nlohmann::ordered_json vals = nlohmann::ordered_json::object();
    for (const auto& [k, v] : values) vals[k] = v;
    line["values"] = vals;
    last_ = line.dump();
    if (out_) {
        *out_ << last_ << '\n';
        out_->flush();
        if (!*out_) throw std::runtime_error("write failed on metrics file " + path_.string());
    }
}

}  // namespace mssm::pipeline
