// SPDX-License-Identifier: Apache-2.0
#include "mssm/pipeline/checkpoint.hpp"

#include <algorithm>

#include <json.hpp>

#include "mssm/common/binary_io.hpp"
#include "mssm/common/digest.hpp"

namespace mssm::pipeline {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'S', 'M', 'C', 'K', 'P', 'T'};
constexpr std::size_t kHeaderBytes = 8 + 2 + 8;
constexpr std::uint64_t kMaxElements = 1ull << 32;

using json = nlohmann::json;

struct Tensor {
    std::string name;
    grad::Shape shape;
    std::span<const double> data;
};

std::vector<Tensor> collect(const Checkpoint& ckpt) {
    std::vector<Tensor> out;
    for (const auto& g : ckpt.params.groups()) {
        for (const auto& e : g->entries()) {
            out.push_back({"params/" + g->name() + "/" + e.name, e.value.shape(), e.value.data()});
        }
    }
    for (const char* which : {"adam.m/", "adam.v/"}) {
        for (const auto& [name, mom] : ckpt.adam.moments) {
            const auto& vec = which[5] == 'm' ? mom.m : mom.v;
            out.push_back({which + name, {vec.size()}, vec});
        }
    }
    return out;
}

std::pair<std::string, std::string> split_name(const std::string& qualified, const std::string& tensor) {
    auto slash = qualified.find('/');
    if (slash == std::string::npos || slash == 0 || slash + 1 == qualified.size()) {
        throw CheckpointIndexError(tensor, "name is not <group>/<entry>");
    }
    return {qualified.substr(0, slash), qualified.substr(slash + 1)};
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    auto tensors = collect(ckpt);
    json index;
    index["fingerprint"] = ckpt.fingerprint;
    index["step"] = ckpt.step;
    index["adam_step"] = ckpt.adam.step;
    index["config"] = ckpt.config_text;
    index["metrics"] = ckpt.metrics_ref;
    json frozen = json::array();
    for (const auto& g : ckpt.params.groups()) {
        if (g->frozen()) frozen.push_back(g->name());
    }
    index["frozen"] = frozen;
    json entries = json::object();
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        entries[t.name] = {{"offset", offset}, {"shape", t.shape}};
        offset += 8 * t.data.size();
    }
    index["tensors"] = entries;
    std::string text = index.dump();

    common::ByteWriter w;
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(kMagic), sizeof kMagic});
    w.put_u16(kCheckpointVersion);
    w.put_u64(text.size());
    w.put_string(text);
    for (const auto& t : tensors) {
        for (double v : t.data) w.put_f64(v);
    }
    w.put_u32(common::crc32(w.bytes()));
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const LoadOptions& opts) {
    if (bytes.size() < sizeof kMagic || !std::equal(kMagic, kMagic + sizeof kMagic, bytes.begin())) {
        throw CheckpointMagicError("not a checkpoint: bad magic");
    }
    if (bytes.size() < kHeaderBytes + 4) throw CheckpointTruncatedError("checkpoint header is truncated");
    common::ByteReader r(bytes.subspan(sizeof kMagic));
    auto version = r.get_u16();
    if (version != kCheckpointVersion) {
        throw CheckpointVersionError("checkpoint version " + std::to_string(version) + ", expected " +
                                     std::to_string(kCheckpointVersion));
    }
    auto index_len = r.get_u64();
    if (index_len > bytes.size() - kHeaderBytes - 4) throw CheckpointTruncatedError("checkpoint index is truncated");
    auto index_bytes = r.get_bytes(static_cast<std::size_t>(index_len));
    const std::size_t payload_begin = kHeaderBytes + static_cast<std::size_t>(index_len);
    const std::size_t payload_size = bytes.size() - 4 - payload_begin;

    json index;
    try {
        index = json::parse(index_bytes.begin(), index_bytes.end());
    } catch (const json::exception& e) {
        throw CheckpointIndexError("<index>", std::string("not valid JSON: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.fingerprint = index.at("fingerprint").get<std::string>();
        ckpt.step = index.at("step").get<std::uint64_t>();
        ckpt.adam.step = index.at("adam_step").get<std::uint64_t>();
        ckpt.config_text = index.at("config").get<std::string>();
        ckpt.metrics_ref = index.at("metrics").get<std::string>();
    } catch (const json::exception& e) {
        throw CheckpointIndexError("<metadata>", e.what());
    }
    const json* tensors = index.contains("tensors") ? &index["tensors"] : nullptr;
    if (!tensors || !tensors->is_object()) throw CheckpointIndexError("tensors", "missing or not an object");

    // Validate every entry against the payload before trusting the checksum,
    // so a damaged index names the entry it broke.
    struct Located {
        std::uint64_t offset;
        std::string name;
        grad::Shape shape;
    };
    std::vector<Located> located;
    std::uint64_t covered = 0;
    for (const auto& [name, entry] : tensors->items()) {
        if (!entry.is_object() || !entry.contains("offset") || !entry.contains("shape")) {
            throw CheckpointIndexError(name, "needs offset and shape");
        }
        const auto& off = entry["offset"];
        const auto& shp = entry["shape"];
        if (!off.is_number_unsigned()) throw CheckpointIndexError(name, "offset is not an unsigned integer");
        if (!shp.is_array()) throw CheckpointIndexError(name, "shape is not an array");
        grad::Shape shape;
        std::uint64_t count = 1;
        for (const auto& d : shp) {
            if (!d.is_number_unsigned() || d.get<std::uint64_t>() == 0 || d.get<std::uint64_t>() > kMaxElements) {
                throw CheckpointIndexError(name, "bad dimension " + d.dump());
            }
            shape.push_back(d.get<std::size_t>());
            count *= d.get<std::uint64_t>();
            if (count > kMaxElements) throw CheckpointIndexError(name, "too many elements");
        }
        std::uint64_t offset = off.get<std::uint64_t>();
        if (offset % 8 != 0) throw CheckpointIndexError(name, "offset is not 8-byte aligned");
        if (offset > payload_size || 8 * count > payload_size - offset) {
            throw CheckpointTruncatedError("checkpoint entry '" + name + "' extends past the payload (offset " + std::to_string(offset) + ", " +
                                                 std::to_string(count) + " values, payload " +
                                                 std::to_string(payload_size) + " bytes)");
        }
        covered += 8 * count;
        located.push_back({offset, name, std::move(shape)});
    }
    if (covered != payload_size) {
        throw CheckpointTruncatedError("checkpoint payload holds " + std::to_string(payload_size) +
                                       " bytes, index describes " + std::to_string(covered));
    }
    std::sort(located.begin(), located.end(), [](const Located& a, const Located& b) { return a.offset < b.offset; });
    for (std::size_t i = 0; i + 1 < located.size(); ++i) {
        if (located[i].offset + 8 * grad::shape_size(located[i].shape) != located[i + 1].offset) {
            throw CheckpointIndexError(located[i + 1].name, "overlaps or leaves a gap after " + located[i].name);
        }
    }

    common::ByteReader tail(bytes.subspan(bytes.size() - 4));
    auto stored = tail.get_u32();
    if (stored != common::crc32(bytes.first(bytes.size() - 4))) throw CheckpointChecksumError("checkpoint CRC mismatch");

    if (opts.expected_fingerprint && *opts.expected_fingerprint != ckpt.fingerprint &&
        !opts.allow_fingerprint_mismatch) {
        throw FingerprintMismatchError("checkpoint fingerprint " + ckpt.fingerprint + " does not match configuration " +
                                       *opts.expected_fingerprint);
    }

    auto read_values = [&](const Located& l) {
        common::ByteReader pr(bytes.subspan(payload_begin + l.offset, 8 * grad::shape_size(l.shape)));
        std::vector<double> v(grad::shape_size(l.shape));
        for (auto& x : v) x = pr.get_f64();
        return v;
    };
    for (const auto& l : located) {
        auto slash = l.name.find('/');
        std::string kind = slash == std::string::npos ? l.name : l.name.substr(0, slash);
        std::string rest = slash == std::string::npos ? "" : l.name.substr(slash + 1);
        if (kind == "params") {
            auto [group, entry] = split_name(rest, l.name);
            if (!ckpt.params.has_group(group)) ckpt.params.add_group(group);
            auto& g = ckpt.params.group(group);
            if (g.has(entry)) throw CheckpointIndexError(l.name, "duplicate entry");
            g.entries().push_back({entry, grad::Value::from(l.shape, read_values(l), true), nn::InitSpec::zeros()});
        } else if (kind == "adam.m" || kind == "adam.v") {
            split_name(rest, l.name);
            if (l.shape.size() != 1) throw CheckpointIndexError(l.name, "moments must be one-dimensional");
            auto& mom = ckpt.adam.moments[rest];
            (kind == "adam.m" ? mom.m : mom.v) = read_values(l);
        } else {
            throw CheckpointIndexError(l.name, "unknown tensor kind '" + kind + "'");
        }
    }
    for (const auto& [name, mom] : ckpt.adam.moments) {
        if (mom.m.size() != mom.v.size()) throw CheckpointIndexError("adam.m/" + name, "first and second moments differ");
    }
    if (index.contains("frozen")) {
        for (const auto& name : index["frozen"]) {
            std::string n = name.is_string() ? name.get<std::string>() : name.dump();
            if (!ckpt.params.has_group(n)) throw CheckpointIndexError(n, "frozen group not present");
            ckpt.params.group(n).set_frozen(true);
        }
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    auto bytes = encode_checkpoint(ckpt);
    common::write_file(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const LoadOptions& opts) {
    return decode_checkpoint(common::read_file(path), opts);
}

Checkpoint make_checkpoint(const model::MssmModel& model, const RunConfig& cfg, const AdamState& adam,
                           std::uint64_t step, std::string metrics_ref) {
    Checkpoint ckpt;
    ckpt.params = model.params().clone();
    ckpt.adam = adam;
    ckpt.fingerprint = cfg.fingerprint();
    ckpt.step = step;
    ckpt.config_text = cfg.to_text();
    ckpt.metrics_ref = std::move(metrics_ref);
    return ckpt;
}

model::MssmModel model_from_checkpoint(const Checkpoint& ckpt) {
    RunConfig cfg = ckpt.config();
    if (cfg.fingerprint() != ckpt.fingerprint) {
        throw FingerprintMismatchError("checkpoint config does not reproduce its fingerprint");
    }
    return model::MssmModel(cfg.world, cfg.model, ckpt.params.clone());
}

}  // namespace mssm::pipeline
