// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mssm/pipeline/run_config.hpp"

namespace mssm::pipeline {

using NamedValues = std::vector<std::pair<std::string, double>>;

/// Derived from the full config text, so it changes with the seed.
std::string run_id(const RunConfig& cfg);

/// Append-only JSON-lines stream: {"run_id", "step", "kind", "values": {...}}.
/// Lines carry no timestamps, so identical runs produce identical files.
class MetricsLog {
public:
    MetricsLog() = default;  // discards records
    MetricsLog(const std::filesystem::path& path, std::string run_id);

    void record(std::uint64_t step, const std::string& kind, const NamedValues& values);
    /// The most recent record, formatted as written.
    const std::string& last_line() const { return last_; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::string run_id_;
    std::unique_ptr<std::ofstream> out_;
    std::string last_;
};

}  // namespace mssm::pipeline
