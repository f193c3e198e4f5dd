// SPDX-License-Identifier: Apache-2.0
#include "mssm/world/dataset.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "mssm/common/binary_io.hpp"
#include "mssm/common/digest.hpp"
#include "mssm/world/episode_io.hpp"
#include "mssm/world/simulator.hpp"

namespace mssm::world {

std::vector<ManifestEntry> Manifest::split(const std::string& tag) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (e.split == tag) out.push_back(e);
    return out;
}

Manifest make_dataset(const WorldConfig& cfg, std::size_t n, std::uint64_t seed, const std::filesystem::path& dir) {
    if (n < 1) throw std::invalid_argument("make_dataset: need at least one episode");
    cfg.validate();
    Manifest m;
    m.root = dir;
    m.fingerprint = cfg.fingerprint();
    for (std::size_t i = 0; i < n; ++i) {
        auto ep = simulate_episode(cfg, seed + i);
        auto bytes = encode_episode(ep);
        std::ostringstream name;
        name << "episode_" << std::setw(5) << std::setfill('0') << i << ".twld";
        common::write_file(dir / name.str(), bytes);
        m.entries.push_back({name.str(), i % 4 == 3 ? "val" : "train", common::sha256_hex(bytes)});
    }
    write_manifest(m);
    return m;
}

void write_manifest(const Manifest& m) {
    std::ostringstream os;
    os << "fingerprint\t" << m.fingerprint << "\n";
    for (const auto& e : m.entries) os << e.path << "\t" << e.split << "\t" << e.sha256 << "\n";
    std::string text = os.str();
    common::write_file(m.root / kManifestName,
                       std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Manifest read_manifest(const std::filesystem::path& dir_or_file) {
    auto file = std::filesystem::is_directory(dir_or_file) ? dir_or_file / kManifestName : dir_or_file;
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open manifest " + file.string());
    Manifest m;
    m.root = file.parent_path();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::istringstream ls(line);
        for (std::string col; std::getline(ls, col, '\t');) cols.push_back(col);
        if (cols.size() == 2 && cols[0] == "fingerprint") {
            m.fingerprint = cols[1];
        } else if (cols.size() == 3) {
            m.entries.push_back({cols[0], cols[1], cols[2]});
        } else {
            throw std::runtime_error(file.string() + ":" + std::to_string(lineno) + ": malformed manifest line");
        }
    }
    if (m.fingerprint.empty()) throw std::runtime_error(file.string() + ": missing fingerprint line");
    return m;
}

std::vector<Episode> load_split(const Manifest& m, const std::string& tag) {
    std::vector<Episode> out;
    for (const auto& e : m.split(tag)) {
        auto bytes = common::read_file(m.resolve(e));
        if (common::sha256_hex(bytes) != e.sha256) throw std::runtime_error("digest mismatch for " + e.path);
        out.push_back(decode_episode(bytes));
    }
    return out;
}

}  // namespace mssm::world
