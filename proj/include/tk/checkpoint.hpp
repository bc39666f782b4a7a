// Parameter snapshot files.
//
// Layout (little-endian):
//   "TKCKPT01" | u32 scalar bytes | u32 config length | config text
//   | u32 tensor count | per tensor: u32 name length, name, u64 rows,
//   u64 cols, raw values
// The config text is the model configuration as key=value lines; it is
// echoed so a checkpoint is self-describing.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <json.hpp>

#include "tk/model.hpp"
#include "tk/trec_io.hpp"

#ifndef TK_GIT_DESCRIBE
#define TK_GIT_DESCRIBE "unknown"
#endif

namespace tk {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline std::string model_config_text(const ModelConfig& c) {
    std::string mus;
    for (std::size_t i = 0; i < c.kernels.mus.size(); ++i) mus += (i ? "," : "") + format_double(c.kernels.mus[i]);
    std::string out;
    out += fmt::format("model.n_layers={}\n", c.context.n_layers);
    out += fmt::format("model.n_heads={}\n", c.context.n_heads);
    out += fmt::format("model.head_dim={}\n", c.context.head_dim);
    out += fmt::format("model.ff_dim={}\n", c.context.ff_dim);
    out += fmt::format("model.model_dim={}\n", c.context.model_dim);
    out += fmt::format("model.kernel_mus={}\n", mus);
    out += fmt::format("model.kernel_sigma={}\n", format_double(c.kernels.sigma));
    out += fmt::format("model.query_cap={}\n", c.query_cap);
    out += fmt::format("model.doc_cap={}\n", c.doc_cap);
    return out;
}

inline ModelConfig parse_model_config_text(const std::string& text) {
    ModelConfig c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("checkpoint config: bad line '" + line + "'");
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "model.n_layers") c.context.n_layers = std::stoi(val);
        else if (key == "model.n_heads") c.context.n_heads = std::stoi(val);
        else if (key == "model.head_dim") c.context.head_dim = std::stoi(val);
        else if (key == "model.ff_dim") c.context.ff_dim = std::stoi(val);
        else if (key == "model.model_dim") c.context.model_dim = std::stoi(val);
        else if (key == "model.kernel_sigma") c.kernels.sigma = parse_double(val, key);
        else if (key == "model.query_cap") c.query_cap = std::stoul(val);
        else if (key == "model.doc_cap") c.doc_cap = std::stoul(val);
        else if (key == "model.kernel_mus") {
            c.kernels.mus.clear();
            std::size_t start = 0;
            while (start <= val.size()) {
                const auto comma = val.find(',', start);
                c.kernels.mus.push_back(parse_double(val.substr(start, comma - start), key));
                if (comma == std::string::npos) break;
                start = comma + 1;
            }
        } else {
            throw DataError("checkpoint config: unknown key " + key);
        }
    }
    return c;
}

namespace detail {

template <class V>
void put(std::ostream& out, V v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class V>
V get(std::istream& in, const std::string& path) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw DataError("truncated checkpoint: " + path);
    return v;
}

inline constexpr char kMagic[8] = {'T', 'K', 'C', 'K', 'P', 'T', '0', '1'};

}  // namespace detail

template <class T>
void save_checkpoint(const TkModel<T>& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(detail::kMagic, sizeof detail::kMagic);
    detail::put<std::uint32_t>(out, sizeof(T));
    const std::string cfg = model_config_text(model.config());
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    std::uint32_t count = 0;
    for_each_tensor(model.params(), [&](const std::string&, const T*, Eigen::Index, Eigen::Index, ParamGroup) { ++count; });
    detail::put<std::uint32_t>(out, count);
    for_each_tensor(model.params(), [&](const std::string& name, const T* data, Eigen::Index rows, Eigen::Index cols, ParamGroup) {
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(rows));
        detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(cols));
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(sizeof(T) * rows * cols));
    });
    if (!out) throw DataError("failed writing checkpoint: " + path);
}

template <class T>
TkModel<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, detail::kMagic, sizeof magic) != 0) throw DataError("not a TK checkpoint: " + path);
    if (detail::get<std::uint32_t>(in, path) != sizeof(T)) throw DataError("checkpoint scalar type mismatch: " + path);
    std::string cfg(detail::get<std::uint32_t>(in, path), '\0');
    in.read(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    const ModelConfig config = parse_model_config_text(cfg);
    const auto count = detail::get<std::uint32_t>(in, path);

    std::map<std::string, std::pair<std::pair<std::uint64_t, std::uint64_t>, std::vector<T>>> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(detail::get<std::uint32_t>(in, path), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        const auto rows = detail::get<std::uint64_t>(in, path);
        const auto cols = detail::get<std::uint64_t>(in, path);
        std::vector<T> values(rows * cols);
        in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(sizeof(T) * values.size()));
        if (!in) throw DataError("truncated checkpoint: " + path);
        tensors[name] = {{rows, cols}, std::move(values)};
    }

    // Shape the parameter set from the config, then fill it by name.
    TkParameters<T> p;
    const auto& emb = tensors.at("embeddings");
    p.embeddings.resize(static_cast<Eigen::Index>(emb.first.first), static_cast<Eigen::Index>(emb.first.second));
    for (int l = 0; l < config.context.n_layers; ++l) p.layers.push_back(LayerParameters<T>::zeros(config.context));
    p.head = ScoringHead<T>::zeros(config.kernels.size());
    std::size_t filled = 0;
    for_each_tensor(p, [&](const std::string& name, T* data, Eigen::Index rows, Eigen::Index cols, ParamGroup) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw DataError("checkpoint lacks tensor " + name);
        if (it->second.first.first != static_cast<std::uint64_t>(rows) || it->second.first.second != static_cast<std::uint64_t>(cols))
            throw DataError(fmt::format("checkpoint tensor {} has shape {}x{}, expected {}x{}", name,
                                        it->second.first.first, it->second.first.second, rows, cols));
        std::memcpy(data, it->second.second.data(), sizeof(T) * static_cast<std::size_t>(rows * cols));
        ++filled;
    });
    if (filled != tensors.size()) throw DataError("checkpoint has unexpected extra tensors: " + path);
    return TkModel<T>(config, std::move(p));
}

/// Sidecar metadata written next to a checkpoint.
struct CheckpointMetadata {
    std::string config_text;
    std::uint64_t seed = 0;
    double log_floor = kLogFloor;
    double margin = 1.0;
    std::string code_version = TK_GIT_DESCRIBE;
    nlohmann::json training;  // free-form: history, best step, alpha trajectory

    nlohmann::json to_json() const {
        return {{"config", config_text}, {"seed", seed},         {"log_floor", log_floor},
                {"margin", margin},      {"code_version", code_version}, {"training", training}};
    }
};

inline void save_metadata(const CheckpointMetadata& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write metadata: " + path);
    out << m.to_json().dump(2) << '\n';
}

}  // namespace tk
