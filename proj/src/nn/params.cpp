// SPDX-License-Identifier: Apache-2.0
#include "mssm/nn/params.hpp"

#include <cmath>
#include <sstream>

namespace mssm::nn {

std::string InitSpec::describe() const {
    std::ostringstream os;
    switch (kind) {
        case Kind::kUniformFanIn: os << "uniform_fan_in(" << fan_in << ")"; break;
        case Kind::kZeros: os << "zeros"; break;
        case Kind::kConstant: os << "constant(" << arg << ")"; break;
        case Kind::kNormal: os << "normal(0," << arg << ")"; break;
    }
    return os.str();
}

const grad::Value& ParamGroup::add(const std::string& entry, grad::Shape shape, InitSpec init, grad::RngState& rng) {
    if (has(entry)) throw ParamError("duplicate entry '" + entry + "' in group '" + name_ + "'");
    grad::Value v;
    switch (init.kind) {
        case InitSpec::Kind::kUniformFanIn: {
            double bound = std::sqrt(1.0 / static_cast<double>(init.fan_in));
            v = grad::sample_uniform(rng, shape, -bound, bound);
            break;
        }
        case InitSpec::Kind::kZeros: v = grad::Value::zeros(shape); break;
        case InitSpec::Kind::kConstant: v = grad::Value::full(shape, init.arg); break;
        case InitSpec::Kind::kNormal: {
            v = grad::sample_normal(rng, shape);
            for (auto& x : v.mutable_data()) x *= init.arg;
            break;
        }
    }
    v.set_requires_grad(!frozen_);
    entries_.push_back({entry, v, init});
    return entries_.back().value;
}

const grad::Value& ParamGroup::at(std::string_view entry) const {
    for (const auto& e : entries_) {
        if (e.name == entry) return e.value;
    }
    throw ParamError("group '" + name_ + "' has no entry '" + std::string(entry) + "'");
}

bool ParamGroup::has(std::string_view entry) const {
    for (const auto& e : entries_) {
        if (e.name == entry) return true;
    }
    return false;
}

void ParamGroup::set_frozen(bool frozen) {
    frozen_ = frozen;
    for (auto& e : entries_) e.value.set_requires_grad(!frozen);
}

std::size_t ParamGroup::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

ParamGroup& ParamStore::add_group(std::string name) {
    if (has_group(name)) throw ParamError("duplicate parameter group '" + name + "'");
    groups_.push_back(std::make_unique<ParamGroup>(std::move(name)));
    return *groups_.back();
}

bool ParamStore::has_group(std::string_view name) const {
    for (const auto& g : groups_) {
        if (g->name() == name) return true;
    }
    return false;
}

const ParamGroup& ParamStore::group(std::string_view name) const {
    for (const auto& g : groups_) {
        if (g->name() == name) return *g;
    }
    throw ParamError("no parameter group '" + std::string(name) + "'");
}

ParamGroup& ParamStore::group(std::string_view name) {
    return const_cast<ParamGroup&>(static_cast<const ParamStore&>(*this).group(name));
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& g : groups_) n += g->parameter_count();
    return n;
}

std::vector<grad::Value> ParamStore::trainable() const {
    std::vector<grad::Value> out;
    for (const auto& g : groups_) {
        if (g->frozen()) continue;
        for (const auto& e : g->entries()) out.push_back(e.value);
    }
    return out;
}

void ParamStore::zero_grad() {
    for (auto& g : groups_)
        for (auto& e : g->entries()) e.value.zero_grad();
}

ParamStore ParamStore::clone() const {
    ParamStore out;
    for (const auto& g : groups_) {
        auto& ng = out.add_group(g->name());
        for (const auto& e : g->entries()) {
            auto v = e.value.detach();
            v.set_requires_grad(!g->frozen());
            ng.entries().push_back({e.name, v, e.init});
        }
        ng.set_frozen(g->frozen());
    }
    return out;
}

std::vector<std::string> ParamStore::qualified_names() const {
    std::vector<std::string> out;
    for (const auto& g : groups_)
        for (const auto& e : g->entries()) out.push_back(g->name() + "/" + e.name);
    return out;
}

const grad::Value& ParamStore::lookup(std::string_view qualified) const {
    auto slash = qualified.rfind('/');
    if (slash == std::string_view::npos) throw ParamError("bad parameter name '" + std::string(qualified) + "'");
    return group(qualified.substr(0, slash)).at(qualified.substr(slash + 1));
}

}  // namespace mssm::nn
