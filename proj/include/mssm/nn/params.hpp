// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "mssm/grad/rng.hpp"
#include "mssm/grad/value.hpp"

namespace mssm::nn {

struct InitSpec {
    enum class Kind { kUniformFanIn, kZeros, kConstant, kNormal };
    Kind kind = Kind::kZeros;
    double arg = 0.0;        // constant value, or normal stddev
    std::size_t fan_in = 1;  // for kUniformFanIn: bound sqrt(1 / fan_in)

    static InitSpec uniform_fan_in(std::size_t fan_in) { return {Kind::kUniformFanIn, 0.0, fan_in}; }
    static InitSpec zeros() { return {Kind::kZeros, 0.0, 1}; }
    static InitSpec constant(double v) { return {Kind::kConstant, v, 1}; }
    static InitSpec normal(double stddev) { return {Kind::kNormal, stddev, 1}; }

    std::string describe() const;
};

struct ParamEntry {
    std::string name;
    grad::Value value;
    InitSpec init;
};

class ParamError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Named set of learned arrays, e.g. "posterior.mlp" holding "w0", "b0", ...
class ParamGroup {
public:
    explicit ParamGroup(std::string name) : name_(std::move(name)) {}

    const std::string& name() const { return name_; }

    /// Allocates and initializes a new entry from `rng`.
    const grad::Value& add(const std::string& entry, grad::Shape shape, InitSpec init, grad::RngState& rng);
    const grad::Value& at(std::string_view entry) const;
    bool has(std::string_view entry) const;

    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::vector<ParamEntry>& entries() { return entries_; }

    bool frozen() const { return frozen_; }
    void set_frozen(bool frozen);

    std::size_t parameter_count() const;

private:
    std::string name_;
    std::vector<ParamEntry> entries_;
    bool frozen_ = false;
};

/// Ordered collection of groups. Move-only: copies would alias the arrays,
/// use clone() for an independent deep copy.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(ParamStore&&) = default;
    ParamStore& operator=(ParamStore&&) = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    ParamGroup& add_group(std::string name);
    bool has_group(std::string_view name) const;
    const ParamGroup& group(std::string_view name) const;
    ParamGroup& group(std::string_view name);

    std::vector<std::unique_ptr<ParamGroup>>& groups() { return groups_; }
    const std::vector<std::unique_ptr<ParamGroup>>& groups() const { return groups_; }

    std::size_t parameter_count() const;
    /// Values of all non-frozen groups, in declaration order.
    std::vector<grad::Value> trainable() const;
    void zero_grad();
    ParamStore clone() const;

    /// "<group>/<entry>" for every entry, in declaration order.
    std::vector<std::string> qualified_names() const;
    const grad::Value& lookup(std::string_view qualified) const;

private:
    std::vector<std::unique_ptr<ParamGroup>> groups_;
};

}  // namespace mssm::nn
