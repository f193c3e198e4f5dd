// SPDX-License-Identifier: Apache-2.0
#include "mssm/world/episode.hpp"

#include <stdexcept>
#include <string>

namespace mssm::world {

std::span<const std::uint8_t> Episode::label(std::size_t t) const {
    if (t >= steps()) throw std::out_of_range("episode step " + std::to_string(t) + " out of range");
    return std::span<const std::uint8_t>(labels).subspan(t * voxels(), voxels());
}

std::span<const std::uint8_t> Episode::observation(std::size_t t) const {
    if (t >= steps()) throw std::out_of_range("episode step " + std::to_string(t) + " out of range");
    return std::span<const std::uint8_t>(observations).subspan(t * voxels(), voxels());
}

Episode Episode::truncated(std::uint32_t n) const {
    if (n > steps()) throw std::out_of_range("cannot truncate episode to more steps than it has");
    Episode out = *this;
    out.T = std::min(T, n);
    out.L = n - out.T;
    out.labels.resize(n * voxels());
    out.observations.resize(n * voxels());
    out.actions.resize(n);
    out.motion.resize(n);
    return out;
}

grad::Value one_hot(std::span<const std::uint8_t> classes, std::uint32_t Z, std::uint32_t C, std::uint32_t H,
                    std::uint32_t W) {
    std::size_t plane = static_cast<std::size_t>(H) * W;
    if (classes.size() != Z * plane) {
        throw std::invalid_argument("one_hot: expected " + std::to_string(Z * plane) + " voxels, got " +
                                    std::to_string(classes.size()));
    }
    std::vector<double> data(static_cast<std::size_t>(Z) * C * plane, 0.0);
    for (std::size_t z = 0; z < Z; ++z) {
        for (std::size_t p = 0; p < plane; ++p) {
            std::uint8_t c = classes[z * plane + p];
            if (c == kUnknown) continue;
            if (c >= C) throw std::invalid_argument("one_hot: class index " + std::to_string(c) + " >= C");
            data[(z * C + c) * plane + p] = 1.0;
        }
    }
    return grad::Value::from({static_cast<std::size_t>(Z) * C, H, W}, std::move(data));
}

}  // namespace mssm::world
