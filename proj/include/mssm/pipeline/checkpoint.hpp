// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container:
//
//   "MSSMCKPT"            8 bytes
//   version               u16
//   index length          u64
//   index                 JSON: metadata plus "tensors": {name: {offset, shape}}
//   payload               little-endian f64, offsets relative to payload start
//   crc32                 u32 over every preceding byte
//
// Tensor names are "params/<group>/<entry>", "adam.m/<group>/<entry>" and
// "adam.v/<group>/<entry>".
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mssm/model/mssm.hpp"
#include "mssm/nn/params.hpp"
#include "mssm/pipeline/adam.hpp"
#include "mssm/pipeline/run_config.hpp"

namespace mssm::pipeline {

inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class CheckpointMagicError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class CheckpointChecksumError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
/// A malformed index entry; entry() names it.
class CheckpointIndexError : public CheckpointError {
public:
    CheckpointIndexError(std::string entry, const std::string& what)
        : CheckpointError("checkpoint index entry '" + entry + "': " + what), entry_(std::move(entry)) {}
    const std::string& entry() const { return entry_; }

private:
    std::string entry_;
};
class FingerprintMismatchError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

struct Checkpoint {
    nn::ParamStore params;
    AdamState adam;
    std::string fingerprint;
    std::uint64_t step = 0;
    std::string config_text;  // RunConfig::to_text() of the producing run
    std::string metrics_ref;  // path of the metric stream, if any

    RunConfig config() const { return RunConfig::parse(config_text); }
};

struct LoadOptions {
    std::optional<std::string> expected_fingerprint;
    bool allow_fingerprint_mismatch = false;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const LoadOptions& opts = {});

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path, const LoadOptions& opts = {});

/// Builds a checkpoint around a copy of the model's parameters.
Checkpoint make_checkpoint(const model::MssmModel& model, const RunConfig& cfg, const AdamState& adam,
                           std::uint64_t step, std::string metrics_ref = "");

/// Rebuilds the model described by the checkpoint's config, adopting a copy
/// of its parameters.
model::MssmModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mssm::pipeline
