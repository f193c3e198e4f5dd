// SPDX-License-Identifier: Apache-2.0
#include "mssm/world/episode_io.hpp"

#include <cstring>
#include <string>

#include "mssm/common/binary_io.hpp"
#include "mssm/common/digest.hpp"

namespace mssm::world {

namespace {

constexpr std::size_t kHeaderBytes = 4 + 2 + 7 * 4;

std::size_t payload_bytes(const Episode& ep) {
    std::size_t steps = ep.steps();
    return 2 * steps * ep.voxels() + steps * 2 * 4 + steps * 3 * 4;
}

}  // namespace

std::vector<std::uint8_t> encode_episode(const Episode& ep) {
    std::size_t grid = static_cast<std::size_t>(ep.steps()) * ep.voxels();
    if (ep.labels.size() != grid || ep.observations.size() != grid || ep.actions.size() != ep.steps() ||
        ep.motion.size() != ep.steps()) {
        throw std::invalid_argument("encode_episode: array sizes disagree with episode dimensions");
    }
    common::ByteWriter w;
    for (char c : kEpisodeMagic) w.put_u8(static_cast<std::uint8_t>(c));
    w.put_u16(kEpisodeVersion);
    for (std::uint32_t v : {ep.H, ep.W, ep.Z, ep.C, ep.T, ep.L, ep.n_agents}) w.put_u32(v);
    w.put_bytes(ep.labels);
    w.put_bytes(ep.observations);
    for (const auto& a : ep.actions) {
        w.put_f32(a.velocity);
        w.put_f32(a.steering);
    }
    for (const auto& m : ep.motion) {
        w.put_f32(m.v_forward);
        w.put_f32(m.v_lateral);
        w.put_f32(m.dt);
    }
    auto bytes = w.take();
    std::uint32_t crc = common::crc32(std::span<const std::uint8_t>(bytes).subspan(kHeaderBytes));
    common::ByteWriter tail;
    tail.put_u32(crc);
    bytes.insert(bytes.end(), tail.bytes().begin(), tail.bytes().end());
    return bytes;
}

Episode decode_episode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kEpisodeMagic, 4) != 0) {
        throw BadMagicError("episode: bad magic (expected \"TWLD\")");
    }
    if (bytes.size() < kHeaderBytes) throw TruncatedPayloadError("episode: header truncated");
    common::ByteReader r(bytes.subspan(4));
    std::uint16_t version = r.get_u16();
    if (version != kEpisodeVersion) {
        throw VersionMismatchError("episode: version " + std::to_string(version) + ", expected " +
                                   std::to_string(kEpisodeVersion));
    }
    Episode ep;
    ep.H = r.get_u32();
    ep.W = r.get_u32();
    ep.Z = r.get_u32();
    ep.C = r.get_u32();
    ep.T = r.get_u32();
    ep.L = r.get_u32();
    ep.n_agents = r.get_u32();

    for (std::uint32_t d : {ep.H, ep.W, ep.Z, ep.T, ep.L}) {
        if (d > (1u << 16)) throw TruncatedPayloadError("episode: header dimension " + std::to_string(d) + " exceeds file");
    }
    std::size_t expected = payload_bytes(ep);
    std::size_t available = bytes.size() - kHeaderBytes;
    if (available != expected + 4) {
        throw TruncatedPayloadError("episode: header implies " + std::to_string(expected) + " payload bytes plus CRC, file has " +
                                    std::to_string(available));
    }
    auto payload = bytes.subspan(kHeaderBytes, expected);
    common::ByteReader crc_reader(bytes.subspan(kHeaderBytes + expected));
    std::uint32_t stored = crc_reader.get_u32();
    std::uint32_t actual = common::crc32(payload);
    if (stored != actual) throw ChecksumError("episode: payload checksum mismatch");

    common::ByteReader p(payload);
    std::size_t grid = static_cast<std::size_t>(ep.steps()) * ep.voxels();
    auto y = p.get_bytes(grid);
    ep.labels.assign(y.begin(), y.end());
    auto o = p.get_bytes(grid);
    ep.observations.assign(o.begin(), o.end());
    ep.actions.resize(ep.steps());
    for (auto& a : ep.actions) {
        a.velocity = p.get_f32();
        a.steering = p.get_f32();
    }
    ep.motion.resize(ep.steps());
    for (auto& m : ep.motion) {
        m.v_forward = p.get_f32();
        m.v_lateral = p.get_f32();
        m.dt = p.get_f32();
    }
    return ep;
}

void write_episode(const Episode& ep, const std::filesystem::path& path) {
    common::write_file(path, encode_episode(ep));
}

Episode read_episode(const std::filesystem::path& path) { return decode_episode(common::read_file(path)); }

}  // namespace mssm::world
