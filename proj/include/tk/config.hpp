// Run configuration: flat key=value text with section prefixes.
#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "tk/model.hpp"
#include "tk/trainer.hpp"
#include "tk/trec_io.hpp"

namespace tk {

enum class ValueKind { String, Int, Double, DoubleList, SizeList };

struct ConfigKey {
    const char* name;
    ValueKind kind;
    const char* default_value;
};

// Every accepted key. Anything else is rejected.
inline const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> keys = {
        {"paths.collection", ValueKind::String, ""},
        {"paths.queries", ValueKind::String, ""},
        {"paths.qrels", ValueKind::String, ""},
        {"paths.triples", ValueKind::String, ""},
        {"paths.embeddings", ValueKind::String, ""},
        {"paths.vocab", ValueKind::String, ""},
        {"paths.run", ValueKind::String, ""},
        {"paths.validation_run", ValueKind::String, ""},
        {"paths.validation_qrels", ValueKind::String, ""},
        {"paths.checkpoint", ValueKind::String, ""},
        {"paths.output", ValueKind::String, ""},
        {"model.n_layers", ValueKind::Int, "2"},
        {"model.n_heads", ValueKind::Int, "16"},
        {"model.head_dim", ValueKind::Int, "32"},
        {"model.ff_dim", ValueKind::Int, "100"},
        {"model.model_dim", ValueKind::Int, "300"},
        {"model.kernel_mus", ValueKind::DoubleList, "-1,-0.8,-0.6,-0.4,-0.2,0,0.2,0.4,0.6,0.8,1"},
        {"model.kernel_sigma", ValueKind::Double, "0.1"},
        {"model.query_cap", ValueKind::Int, "30"},
        {"model.doc_cap", ValueKind::Int, "200"},
        {"vocab.min_occurrence", ValueKind::Int, "5"},
        {"train.margin", ValueKind::Double, "1"},
        {"train.batch_size", ValueKind::Int, "64"},
        {"train.validate_every", ValueKind::Int, "4096"},
        {"train.patience", ValueKind::Int, "8"},
        {"train.max_epochs", ValueKind::Int, "1"},
        {"train.lr_embedding_context", ValueKind::Double, "0.0001"},
        {"train.lr_other", ValueKind::Double, "0.001"},
        {"train.validation_depth", ValueKind::Int, "1000"},
        {"eval.batch_size", ValueKind::Int, "256"},
        {"eval.depth", ValueKind::Int, "1000"},
        {"eval.depths", ValueKind::SizeList, "25,50,100,200,500,1000"},
        {"eval.budgets", ValueKind::DoubleList, "0,25,50,100,250"},
        {"eval.throughput_runs", ValueKind::Int, "3"},
        {"eval.docs_per_ms", ValueKind::Double, "0"},  // 0 means measure
        {"index.k", ValueKind::Int, "1000"},
        {"index.k1", ValueKind::Double, "0.9"},
        {"index.b", ValueKind::Double, "0.4"},
        {"explain.top_kernels", ValueKind::Int, "5"},
        {"cluster.k", ValueKind::Int, "30"},
        {"cluster.max_iterations", ValueKind::Int, "300"},
        {"run.seed", ValueKind::Int, "42"},
        {"run.threads", ValueKind::Int, "1"},
    };
    return keys;
}

namespace detail {

inline const ConfigKey* find_key(const std::string& name) {
    for (const auto& k : config_schema())
        if (name == k.name) return &k;
    return nullptr;
}

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto comma = s.find(',', start);
        out.push_back(trim(s.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

inline long long parse_int(const std::string& s, const std::string& key) {
    long long v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw UsageError("config " + key + ": not an integer: '" + s + "'");
    return v;
}

inline double parse_real(const std::string& s, const std::string& key) {
    try {
        return parse_double(s, key);
    } catch (const DataError&) {
        throw UsageError("config " + key + ": not a number: '" + s + "'");
    }
}

// Canonical text for a value, so that equal configurations print equally.
inline std::string canonical(const ConfigKey& k, const std::string& raw) {
    switch (k.kind) {
        case ValueKind::String: return raw;
        case ValueKind::Int: return std::to_string(parse_int(trim(raw), k.name));
        case ValueKind::Double: return format_double(parse_real(trim(raw), k.name));
        case ValueKind::DoubleList:
        case ValueKind::SizeList: {
            std::string out;
            for (const auto& part : split_commas(trim(raw))) {
                if (!out.empty()) out += ',';
                if (k.kind == ValueKind::SizeList) {
                    const auto v = parse_int(part, k.name);
                    if (v < 0) throw UsageError(std::string("config ") + k.name + ": negative entry");
                    out += std::to_string(v);
                } else {
                    out += format_double(parse_real(part, k.name));
                }
            }
            return out;
        }
    }
    return raw;
}

}  // namespace detail

/// Effective configuration. Values are held in canonical text form, keyed by
/// the schema; typed accessors convert on read.
class RunConfig {
public:
    RunConfig() {
        for (const auto& k : config_schema()) values_[k.name] = detail::canonical(k, k.default_value);
    }

    /// Sets one key; unknown keys and malformed values are usage errors.
    void set(const std::string& key, const std::string& value) {
        const ConfigKey* k = detail::find_key(key);
        if (!k) throw UsageError("unknown config key: " + key);
        values_[key] = detail::canonical(*k, value);
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw UsageError("unknown config key: " + key);
        return it->second;
    }

    long long integer(const std::string& key) const { return detail::parse_int(str(key), key); }
    double real(const std::string& key) const { return detail::parse_real(str(key), key); }

    std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        for (const auto& p : detail::split_commas(str(key))) out.push_back(detail::parse_real(p, key));
        return out;
    }

    std::vector<std::size_t> sizes(const std::string& key) const {
        std::vector<std::size_t> out;
        for (const auto& p : detail::split_commas(str(key))) out.push_back(static_cast<std::size_t>(detail::parse_int(p, key)));
        return out;
    }

    /// Path-valued key that must be set for the current subcommand.
    const std::string& required_path(const std::string& key) const {
        const auto& v = str(key);
        if (v.empty()) throw UsageError("missing required setting " + key);
        return v;
    }

    ModelConfig model() const {
        ModelConfig c;
        c.context.n_layers = static_cast<int>(integer("model.n_layers"));
        c.context.n_heads = static_cast<int>(integer("model.n_heads"));
        c.context.head_dim = static_cast<int>(integer("model.head_dim"));
        c.context.ff_dim = static_cast<int>(integer("model.ff_dim"));
        c.context.model_dim = static_cast<int>(integer("model.model_dim"));
        c.kernels.mus = reals("model.kernel_mus");
        c.kernels.sigma = real("model.kernel_sigma");
        c.query_cap = static_cast<std::size_t>(integer("model.query_cap"));
        c.doc_cap = static_cast<std::size_t>(integer("model.doc_cap"));
        return c;
    }

    TrainConfig train() const {
        TrainConfig t;
        t.margin = real("train.margin");
        t.batch_size = static_cast<std::size_t>(integer("train.batch_size"));
        t.validate_every = static_cast<std::size_t>(integer("train.validate_every"));
        t.patience = static_cast<int>(integer("train.patience"));
        t.max_epochs = static_cast<int>(integer("train.max_epochs"));
        t.seed = static_cast<std::uint64_t>(integer("run.seed"));
        t.threads = static_cast<int>(integer("run.threads"));
        t.optimizer.lr_embedding_context = real("train.lr_embedding_context");
        t.optimizer.lr_other = real("train.lr_other");
        return t;
    }

    /// One key=value line per setting, in key order.
    std::string to_text() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
        return out;
    }

    /// Reads key=value lines. Blank lines and lines starting with '#' are
    /// skipped; keys not mentioned keep their defaults.
    static RunConfig parse(const std::string& text) {
        RunConfig c;
        std::istringstream in(text);
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            const std::string t = detail::trim(line);
            if (t.empty() || t[0] == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos) throw UsageError(fmt::format("config line {}: expected key=value", n));
            c.set(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
        }
        return c;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw UsageError("cannot read config file: " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str());
    }

    bool operator==(const RunConfig&) const = default;

private:
    std::map<std::string, std::string> values_;
};

/// 64-bit FNV-1a, used to fingerprint the effective configuration.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string config_hash(const RunConfig& c) { return fmt::format("{:016x}", fnv1a64(c.to_text())); }

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Header carried by every output artifact: one summary line, then the
/// effective configuration as "# config key=value" lines. The timestamp is
/// the last field of the first line so comparisons can strip it.
inline std::string metadata_header(const RunConfig& c, const std::string& timestamp) {
    std::string out = fmt::format("# tk seed={} config_hash={} timestamp={}\n", c.integer("run.seed"), config_hash(c), timestamp);
    std::istringstream in(c.to_text());
    std::string line;
    while (std::getline(in, line)) out += "# config " + line + '\n';
    return out;
}

/// Recovers the configuration echoed by metadata_header from an artifact.
inline RunConfig config_from_header(const std::string& artifact) {
    constexpr std::string_view prefix = "# config ";
    std::istringstream in(artifact);
    std::string line, text;
    while (std::getline(in, line))
        if (line.starts_with(prefix)) text += line.substr(prefix.size()) + '\n';
    return RunConfig::parse(text);
}

}  // namespace tk
