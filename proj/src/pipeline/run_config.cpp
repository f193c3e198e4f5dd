// SPDX-License-Identifier: Apache-2.0
#include "mssm/pipeline/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "mssm/common/digest.hpp"

namespace mssm::pipeline {

using world::ConfigError;

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": not an integer: '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError(key + ": not a number: '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError(key + ": not a boolean: '" + v + "'");
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define MSSM_INT_FIELD(expr, type)                                                                   \
    Field {                                                                                          \
        [](const RunConfig& c) { return std::to_string(c.expr); },                                  \
            [](RunConfig& c, const std::string& v) { c.expr = parse_integer<type>(#expr, v); }      \
    }
#define MSSM_REAL_FIELD(expr)                                                                        \
    Field {                                                                                          \
        [](const RunConfig& c) { return format_double(c.expr); },                                   \
            [](RunConfig& c, const std::string& v) { c.expr = parse_double(#expr, v); }             \
    }
#define MSSM_BOOL_FIELD(expr)                                                                        \
    Field {                                                                                          \
        [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); },                  \
            [](RunConfig& c, const std::string& v) { c.expr = parse_bool(#expr, v); }               \
    }

const std::vector<std::pair<std::string, Field>>& table() {
    static const std::vector<std::pair<std::string, Field>> fields = {
        {"world.H", MSSM_INT_FIELD(world.H, std::uint32_t)},
        {"world.W", MSSM_INT_FIELD(world.W, std::uint32_t)},
        {"world.Z", MSSM_INT_FIELD(world.Z, std::uint32_t)},
        {"world.n_agents", MSSM_INT_FIELD(world.n_agents, std::uint32_t)},
        {"world.n_obstacles", MSSM_INT_FIELD(world.n_obstacles, std::uint32_t)},
        {"world.ego_speed_min", MSSM_REAL_FIELD(world.ego_speed_min)},
        {"world.ego_speed_max", MSSM_REAL_FIELD(world.ego_speed_max)},
        {"world.steer_max", MSSM_REAL_FIELD(world.steer_max)},
        {"world.turn_prob", MSSM_REAL_FIELD(world.turn_prob)},
        {"world.occlusion_radius", MSSM_REAL_FIELD(world.occlusion_radius)},
        {"world.noise", MSSM_REAL_FIELD(world.noise)},
        {"world.T", MSSM_INT_FIELD(world.T, std::uint32_t)},
        {"world.L", MSSM_INT_FIELD(world.L, std::uint32_t)},
        {"model.D_h", MSSM_INT_FIELD(model.D_h, std::size_t)},
        {"model.D_s", MSSM_INT_FIELD(model.D_s, std::size_t)},
        {"model.D_x", MSSM_INT_FIELD(model.D_x, std::size_t)},
        {"model.C_e", MSSM_INT_FIELD(model.C_e, std::size_t)},
        {"model.C_b", MSSM_INT_FIELD(model.C_b, std::size_t)},
        {"model.C_m", MSSM_INT_FIELD(model.C_m, std::size_t)},
        {"model.C_f", MSSM_INT_FIELD(model.C_f, std::size_t)},
        {"model.C_u", MSSM_INT_FIELD(model.C_u, std::size_t)},
        {"model.hidden", MSSM_INT_FIELD(model.hidden, std::size_t)},
        {"model.prompt_dim", MSSM_INT_FIELD(model.prompt_dim, std::size_t)},
        {"model.bank_capacity", MSSM_INT_FIELD(model.bank_capacity, std::size_t)},
        {"model.sigma_floor", MSSM_REAL_FIELD(model.sigma_floor)},
        {"flags.ssp", MSSM_BOOL_FIELD(model.flags.ssp)},
        {"flags.dmb", MSSM_BOOL_FIELD(model.flags.dmb)},
        {"flags.mln", MSSM_BOOL_FIELD(model.flags.mln)},
        {"flags.prompt", MSSM_BOOL_FIELD(model.flags.prompt)},
        {"flags.combine",
         Field{[](const RunConfig& c) {
                   return std::string(c.model.flags.combine == model::Combine::kAdd ? "add" : "concat");
               },
               [](RunConfig& c, const std::string& v) {
                   if (v == "add") c.model.flags.combine = model::Combine::kAdd;
                   else if (v == "concat") c.model.flags.combine = model::Combine::kConcat;
                   else throw ConfigError("flags.combine: expected add or concat, got '" + v + "'");
               }}},
        {"optim.lr", MSSM_REAL_FIELD(optim.lr)},
        {"optim.beta1", MSSM_REAL_FIELD(optim.beta1)},
        {"optim.beta2", MSSM_REAL_FIELD(optim.beta2)},
        {"optim.eps", MSSM_REAL_FIELD(optim.eps)},
        {"train.steps", MSSM_INT_FIELD(steps, std::size_t)},
        {"train.batch_size", MSSM_INT_FIELD(batch_size, std::size_t)},
        {"train.kl_weight", MSSM_REAL_FIELD(kl_weight)},
        {"train.seed", MSSM_INT_FIELD(seed, std::uint64_t)},
        {"train.data_fraction", MSSM_REAL_FIELD(data_fraction)},
    };
    return fields;
}

#undef MSSM_INT_FIELD
#undef MSSM_REAL_FIELD
#undef MSSM_BOOL_FIELD

const Field& field(const std::string& key) {
    for (const auto& [k, f] : table()) {
        if (k == key) return f;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
    world.validate();
    model.validate(world);
    if (!(optim.lr > 0.0)) throw ConfigError("optim.lr must be > 0");
    if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0)) throw ConfigError("optim.beta1 must be in [0, 1)");
    if (!(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) throw ConfigError("optim.beta2 must be in [0, 1)");
    if (!(optim.eps > 0.0)) throw ConfigError("optim.eps must be > 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(kl_weight >= 0.0)) throw ConfigError("train.kl_weight must be >= 0");
    if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw ConfigError("train.data_fraction must be in (0, 1]");
}

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> out = [] {
        std::vector<std::string> k;
        for (const auto& [name, f] : table()) k.push_back(name);
        return k;
    }();
    return out;
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [k, f] : table()) out += k + " = " + f.get(*this) + "\n";
    return out;
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        try {
            cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string RunConfig::fingerprint() const {
    return common::sha256_hex(world.canonical() + "--\n" + model.canonical());
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
        cfg.set(trim(o.substr(0, eq)), o.substr(eq + 1));
    }
}

}  // namespace mssm::pipeline
