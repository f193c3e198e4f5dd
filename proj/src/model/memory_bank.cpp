// SPDX-License-Identifier: Apache-2.0
#include "mssm/model/memory_bank.hpp"

#include <stdexcept>

namespace mssm::model {

MemoryBank::MemoryBank(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("memory bank capacity must be >= 1");
}

void MemoryBank::push(const grad::Value& h) {
    if (entries_.size() == capacity_) entries_.pop_front();
    entries_.push_back(h);
}

}  // namespace mssm::model
