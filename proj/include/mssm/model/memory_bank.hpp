// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <vector>

#include "mssm/grad/value.hpp"

namespace mssm::model {

/// Bounded FIFO of past deterministic histories; the oldest entry is evicted first.
class MemoryBank {
public:
    explicit MemoryBank(std::size_t capacity = 8);

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    void push(const grad::Value& h);
    void clear() { entries_.clear(); }
    /// Oldest first.
    std::vector<grad::Value> entries() const { return {entries_.begin(), entries_.end()}; }

private:
    std::size_t capacity_;
    std::deque<grad::Value> entries_;
};

}  // namespace mssm::model
