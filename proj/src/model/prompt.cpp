// SPDX-License-Identifier: Apache-2.0
#include "mssm/model/prompt.hpp"

#include <cctype>

namespace mssm::model {

std::string normalize_prompt(std::string_view text) {
    std::string out;
    bool pending_space = false;
    for (char ch : text) {
        auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    if (!out.empty() && out.back() == '.') out.pop_back();
    return out;
}

const PromptRegistry& PromptRegistry::builtin() {
    static const PromptRegistry reg = [] {
        PromptRegistry r;
        r.entries_ = {
            {"occupancy", "the task is to predict the 3d occupancy of the current scene"},
            {"detect-dynamic", "the task is to detect the moving objects at the next step"},
            {"map-static", "the task is to segment the static layout of the current scene"},
            {"planning", "the task is to plan the next action of the ego vehicle"},
        };
        return r;
    }();
    return reg;
}

TaskPrompt PromptRegistry::resolve(std::string_view text_or_task) const {
    std::string norm = normalize_prompt(text_or_task);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].text == norm || entries_[i].task == norm) return {entries_[i].text, i};
    }
    throw UnknownPromptError("unknown task prompt: \"" + std::string(text_or_task) + "\"");
}

TaskPrompt PromptRegistry::for_task(std::string_view task) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].task == task) return {entries_[i].text, i};
    }
    throw UnknownPromptError("unknown task: \"" + std::string(task) + "\"");
}

}  // namespace mssm::model
