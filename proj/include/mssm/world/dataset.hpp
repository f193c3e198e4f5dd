// SPDX-License-Identifier: Apache-2.0
//
// A dataset directory holds episode files plus `manifest.tsv`:
//
//   fingerprint<TAB><sha256 of the world config>
//   <relative path><TAB><train|val><TAB><sha256 of the file>   (one per episode)
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mssm/world/episode.hpp"

namespace mssm::world {

inline constexpr const char* kManifestName = "manifest.tsv";

struct ManifestEntry {
    std::string path;  // relative to the manifest directory
    std::string split;
    std::string sha256;
    bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
    std::filesystem::path root;
    std::string fingerprint;
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> split(const std::string& tag) const;
    std::filesystem::path resolve(const ManifestEntry& e) const { return root / e.path; }
};

/// Episode i uses seed + i; every fourth episode (i % 4 == 3) is validation.
Manifest make_dataset(const WorldConfig& cfg, std::size_t n, std::uint64_t seed, const std::filesystem::path& dir);

void write_manifest(const Manifest& m);
Manifest read_manifest(const std::filesystem::path& dir_or_file);

/// Reads the episodes of one split, verifying each file's digest.
std::vector<Episode> load_split(const Manifest& m, const std::string& tag);

}  // namespace mssm::world
