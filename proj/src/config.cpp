// SPDX-License-Identifier: Apache-2.0
#include "treesr/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "treesr/error.hpp"

namespace treesr {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size() || x < INT32_MIN || x > INT32_MAX) throw std::invalid_argument(v);
        return static_cast<int>(x);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
        const unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Field {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define INT_FIELD(key, member)                                                                                 \
    {key,                                                                                                      \
     {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_int(k, v); },              \
      [](const RunConfig& c) { return std::to_string(c.member); }}}
#define DOUBLE_FIELD(key, member)                                                                              \
    {key,                                                                                                      \
     {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); },           \
      [](const RunConfig& c) { return num(c.member); }}}
#define BOOL_FIELD(key, member)                                                                                \
    {key,                                                                                                      \
     {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); },             \
      [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }}}
#define PATH_FIELD(key, member)                                                                                \
    {key,                                                                                                      \
     {[](RunConfig& c, const std::string&, const std::string& v) { c.member = v; },                           \
      [](const RunConfig& c) { return c.member.string(); }}}

const std::vector<std::pair<std::string, Field>>& schema() {
    static const std::vector<std::pair<std::string, Field>> fields = {
        INT_FIELD("model.tree_depth", model.tree_depth),
        INT_FIELD("model.branching", model.branching),
        INT_FIELD("model.residual_groups", model.residual_groups),
        INT_FIELD("model.blocks_per_group", model.blocks_per_group),
        INT_FIELD("model.channels", model.channels),
        INT_FIELD("model.scale", model.scale),
        INT_FIELD("model.reduction", model.reduction),
        BOOL_FIELD("model.deep_residual", model.deep_residual),
        DOUBLE_FIELD("loss.alpha", train.loss.alpha),
        DOUBLE_FIELD("loss.margin", train.loss.margin),
        DOUBLE_FIELD("loss.theta", train.loss.theta),
        {"loss.distance",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v != "mse") throw ConfigError(k + ": only 'mse' is supported, got '" + v + "'");
              c.train.loss.distance = Distance::MeanSquared;
          },
          [](const RunConfig&) { return std::string("mse"); }}},
        BOOL_FIELD("loss.use_abs", train.loss.use_abs),
        DOUBLE_FIELD("loss.sigma_epsilon", train.loss.sigma_epsilon),
        INT_FIELD("train.batch_size", train.batch_size),
        INT_FIELD("train.lr_patch", train.lr_patch),
        DOUBLE_FIELD("train.initial_lr", train.initial_lr),
        INT_FIELD("train.halve_every", train.halve_every),
        DOUBLE_FIELD("train.adam_beta1", train.adam_beta1),
        DOUBLE_FIELD("train.adam_beta2", train.adam_beta2),
        DOUBLE_FIELD("train.adam_epsilon", train.adam_epsilon),
        INT_FIELD("train.max_epochs", train.max_epochs),
        INT_FIELD("train.max_steps", train.max_steps),
        INT_FIELD("train.checkpoint_every", train.checkpoint_every),
        DOUBLE_FIELD("train.clip_grad", train.clip_grad),
        PATH_FIELD("data.train_manifest", train_manifest),
        PATH_FIELD("data.test_manifest", test_manifest),
        PATH_FIELD("run.output_root", output_root),
        {"run.name",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v.empty() || v.find('/') != std::string::npos) throw ConfigError(k + ": must be a plain name");
              c.run_name = v;
          },
          [](const RunConfig& c) { return c.run_name; }}},
        {"run.seed",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); },
          [](const RunConfig& c) { return std::to_string(c.seed); }}},
    };
    return fields;
}

#undef INT_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD
#undef PATH_FIELD

const Field& field(const std::string& key) {
    for (const auto& [k, f] : schema())
        if (k == key) return f;
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, f] : schema()) k.push_back(name);
        return k;
    }();
    return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    field(key).set(cfg, key, value);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) { return field(key).get(cfg); }

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::set<std::string> seen;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
        try {
            set_config_value(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path.string());
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
    for (const std::string& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
        set_config_value(cfg, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
}

std::string echo_run_config(const RunConfig& cfg) {
    std::ostringstream os;
    for (const auto& [key, f] : schema()) os << key << " = " << f.get(cfg) << "\n";
    return os.str();
}

}  // namespace treesr
