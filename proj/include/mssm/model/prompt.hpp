// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mssm::model {

class UnknownPromptError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct TaskPrompt {
    std::string text;  // normalized
    std::size_t token = 0;
    bool operator==(const TaskPrompt&) const = default;
};

/// Lowercases, trims, collapses internal whitespace, drops one trailing period.
std::string normalize_prompt(std::string_view text);

/// Fixed prompt vocabulary; the token is the row of the embedding table.
class PromptRegistry {
public:
    struct Entry {
        std::string task;
        std::string text;
    };

    static const PromptRegistry& builtin();

    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }
    /// Looks up by prompt text (any casing or spacing) or by task name.
    TaskPrompt resolve(std::string_view text_or_task) const;
    TaskPrompt for_task(std::string_view task) const;

private:
    std::vector<Entry> entries_;
};

inline constexpr const char* kOccupancyTask = "occupancy";

}  // namespace mssm::model
