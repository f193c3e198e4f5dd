// SPDX-License-Identifier: Apache-2.0
//
// Episode file layout, all integers little-endian:
//
//   "TWLD"  u16 version  u32 H W Z C T L n_agents
//   payload: y[steps*Z*H*W] u8, o[steps*Z*H*W] u8,
//            a[steps] (f32 velocity, f32 steering),
//            motion[steps] (f32 v_forward, f32 v_lateral, f32 dt)
//   u32 CRC32 of the payload
#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

#include "mssm/world/episode.hpp"

namespace mssm::world {

inline constexpr char kEpisodeMagic[4] = {'T', 'W', 'L', 'D'};
inline constexpr std::uint16_t kEpisodeVersion = 1;

class EpisodeFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class BadMagicError : public EpisodeFormatError {
public:
    using EpisodeFormatError::EpisodeFormatError;
};
class VersionMismatchError : public EpisodeFormatError {
public:
    using EpisodeFormatError::EpisodeFormatError;
};
/// Payload length disagrees with the header dimensions.
class TruncatedPayloadError : public EpisodeFormatError {
public:
    using EpisodeFormatError::EpisodeFormatError;
};
class ChecksumError : public EpisodeFormatError {
public:
    using EpisodeFormatError::EpisodeFormatError;
};

std::vector<std::uint8_t> encode_episode(const Episode& ep);
Episode decode_episode(std::span<const std::uint8_t> bytes);

void write_episode(const Episode& ep, const std::filesystem::path& path);
Episode read_episode(const std::filesystem::path& path);

}  // namespace mssm::world
