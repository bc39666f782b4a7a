// Shared test fixtures: small model configurations, random tensors, temp
// directories, a CLI runner and the synthetic marker collection.
#pragma once

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "tk/tk.hpp"

namespace fixtures {

namespace fs = std::filesystem;

/// vocab 20, width 8, 1 layer, 2 heads of 4, ff 6, 11 kernels.
inline tk::ModelConfig mini_config(int n_layers = 1) {
    tk::ModelConfig c;
    c.context.n_layers = n_layers;
    c.context.n_heads = 2;
    c.context.head_dim = 4;
    c.context.ff_dim = 6;
    c.context.model_dim = 8;
    c.query_cap = 6;
    c.doc_cap = 10;
    return c;
}

template <class T>
tk::Mat<T> random_mat(Eigen::Index r, Eigen::Index c, tk::Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    tk::Mat<T> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(n(rng));
    return m;
}

template <class T>
tk::LayerParameters<T> random_layer(const tk::ContextConfig& cfg, tk::Rng& rng, double scale = 0.5) {
    auto l = tk::LayerParameters<T>::zeros(cfg);
    l.wq = random_mat<T>(l.wq.rows(), l.wq.cols(), rng, scale);
    l.wk = random_mat<T>(l.wk.rows(), l.wk.cols(), rng, scale);
    l.wv = random_mat<T>(l.wv.rows(), l.wv.cols(), rng, scale);
    l.wo = random_mat<T>(l.wo.rows(), l.wo.cols(), rng, scale);
    l.w1 = random_mat<T>(l.w1.rows(), l.w1.cols(), rng, scale);
    l.w2 = random_mat<T>(l.w2.rows(), l.w2.cols(), rng, scale);
    l.b1 = random_mat<T>(1, l.b1.size(), rng, scale);
    l.b2 = random_mat<T>(1, l.b2.size(), rng, scale);
    return l;
}

/// Model with every parameter random (head weights and alpha included), so
/// that no gradient is trivially zero.
template <class T>
tk::TkModel<T> random_model(const tk::ModelConfig& cfg, std::size_t vocab_size, std::uint64_t seed) {
    tk::Rng rng(seed);
    tk::TkParameters<T> p;
    p.embeddings = random_mat<T>(static_cast<Eigen::Index>(vocab_size), cfg.context.model_dim, rng, 1.0);
    p.embeddings.row(tk::kPadId).setZero();
    for (int l = 0; l < cfg.context.n_layers; ++l) p.layers.push_back(random_layer<T>(cfg.context, rng));
    p.alpha = static_cast<T>(0.3 + 0.4 * std::uniform_real_distribution<double>(0, 1)(rng));
    p.head = tk::ScoringHead<T>::zeros(cfg.kernels.size());
    p.head.w_log = random_mat<T>(1, static_cast<Eigen::Index>(cfg.kernels.size()), rng, 0.5);
    p.head.w_len = random_mat<T>(1, static_cast<Eigen::Index>(cfg.kernels.size()), rng, 0.5);
    p.head.beta = static_cast<T>(0.8);
    p.head.gamma = static_cast<T>(1.3);
    return tk::TkModel<T>(cfg, std::move(p));
}

/// Random sequence of `length` non-padding ids drawn from [2, vocab).
inline tk::TokenSequence random_sequence(std::size_t length, std::size_t cap, std::size_t vocab, tk::Rng& rng) {
    tk::TokenSequence s;
    s.ids.assign(cap, tk::kPadId);
    s.length = length;
    std::uniform_int_distribution<int> id(2, static_cast<int>(vocab) - 1);
    for (std::size_t i = 0; i < length; ++i) s.ids[i] = id(rng);
    return s;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag = "tk") {
        std::random_device rd;
        path_ = fs::temp_directory_path() / fmt::format("{}-{:x}", tag, (static_cast<unsigned long long>(rd()) << 32) ^ rd());
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string operator/(const std::string& name) const { return (path_ / name).string(); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

/// Drops every line that starts with '#'.
inline std::string body(const std::string& text) {
    std::istringstream in(text);
    std::string line, out;
    while (std::getline(in, line))
        if (line.empty() || line[0] != '#') out += line + '\n';
    return out;
}

/// Replaces the value of "timestamp=" with a fixed token.
inline std::string without_timestamps(std::string text) {
    std::size_t pos = 0;
    while ((pos = text.find("timestamp", pos)) != std::string::npos) {
        pos += 9;
        const std::size_t start = pos;
        while (pos < text.size() && (text[pos] == '=' || text[pos] == '"' || text[pos] == ':' || text[pos] == ' ')) ++pos;
        const std::size_t value = pos;
        while (pos < text.size() && text[pos] != '\n' && text[pos] != '"' && text[pos] != ',') ++pos;
        text.replace(value, pos - value, "T");
        pos = start;
    }
    return text;
}

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

/// Runs the tk binary with `args` (already shell-quoted where needed).
inline CliResult run_cli(const std::string& binary, const std::string& args, const std::string& env = "") {
    TempDir tmp("tk-cli-out");
    const std::string cmd = fmt::format("{} {} {} > {} 2> {}", env, binary, args, tmp / "out", tmp / "err");
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(tmp / "out");
    r.err = read_file(tmp / "err");
    return r;
}

// ---- synthetic marker collection ----
//
// Each query owns a unique marker term; exactly one document contains it and
// is the only relevant document. Everything else is shared filler text, so
// relevance is decided by a single lexical match. Queries read "find m<q>";
// "find" never occurs in a document and maps to the OOV id.

struct Synthetic {
    std::vector<tk::TextRecord> docs;
    std::vector<tk::TextRecord> queries;
    std::vector<std::string> train_queries;
    std::vector<std::string> validation_queries;
    std::vector<tk::TrainTriple> triples;
    tk::Qrels qrels;
    tk::Ranking validation_run;  // shuffled candidates, relevant one included
    tk::Ranking train_run;
};

inline Synthetic make_synthetic(std::uint64_t seed, std::size_t n_docs = 500, std::size_t n_train = 100,
                                std::size_t n_validation = 20, std::size_t negatives_per_query = 10,
                                std::size_t candidates = 50, std::size_t n_filler = 300) {
    tk::Rng rng(seed);
    const std::size_t n_queries = n_train + n_validation;
    auto filler = [&] { return fmt::format("f{}", std::uniform_int_distribution<std::size_t>(0, n_filler - 1)(rng)); };
    std::vector<std::size_t> doc_order(n_docs);
    for (std::size_t i = 0; i < n_docs; ++i) doc_order[i] = i;
    std::shuffle(doc_order.begin(), doc_order.end(), rng);
    auto doc_id = [](std::size_t i) { return fmt::format("d{:04}", i); };

    Synthetic s;
    std::vector<std::string> relevant_of(n_queries);
    std::vector<std::string> texts(n_docs);
    for (std::size_t i = 0; i < n_docs; ++i) {
        const std::size_t len = std::uniform_int_distribution<std::size_t>(15, 30)(rng);
        std::vector<std::string> words;
        for (std::size_t w = 0; w < len; ++w) words.push_back(filler());
        texts[i] = fmt::format("{}", fmt::join(words, " "));
    }
    for (std::size_t q = 0; q < n_queries; ++q) {
        const std::size_t d = doc_order[q];
        auto words = tk::tokenize(texts[d]);
        const std::size_t at = std::uniform_int_distribution<std::size_t>(0, words.size())(rng);
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), fmt::format("m{}", q));
        texts[d] = fmt::format("{}", fmt::join(words, " "));
        relevant_of[q] = doc_id(d);
        const std::string qid = fmt::format("q{:03}", q);
        s.queries.push_back({qid, fmt::format("find m{}", q)});
        s.qrels.add(qid, relevant_of[q], 1);
        (q < n_train ? s.train_queries : s.validation_queries).push_back(qid);
    }
    for (std::size_t i = 0; i < n_docs; ++i) s.docs.push_back({doc_id(i), texts[i]});

    std::uniform_int_distribution<std::size_t> any_doc(0, n_docs - 1);
    auto negative_for = [&](std::size_t q) {
        while (true) {
            const auto id = doc_id(any_doc(rng));
            if (id != relevant_of[q]) return id;
        }
    };
    for (std::size_t q = 0; q < n_train; ++q)
        for (std::size_t n = 0; n < negatives_per_query; ++n)
            s.triples.push_back({s.queries[q].id, relevant_of[q], negative_for(q)});

    auto candidate_list = [&](std::size_t q) {
        std::vector<std::string> ids{relevant_of[q]};
        while (ids.size() < candidates) {
            auto id = negative_for(q);
            if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
        }
        std::shuffle(ids.begin(), ids.end(), rng);
        std::vector<tk::RankedDoc> list;
        for (std::size_t r = 0; r < ids.size(); ++r)
            list.push_back({ids[r], static_cast<double>(ids.size() - r), static_cast<int>(r) + 1});
        return list;
    };
    s.validation_run.tag = "synthetic";
    s.train_run.tag = "synthetic";
    for (std::size_t q = 0; q < n_queries; ++q)
        (q < n_train ? s.train_run : s.validation_run).lists[s.queries[q].id] = candidate_list(q);
    return s;
}

/// GloVe-style text file with N(0, 0.4) components for every term of `vocab`.
inline void write_embeddings(const std::string& path, const tk::Vocabulary& vocab, int dim, std::uint64_t seed) {
    tk::Rng rng(seed);
    std::normal_distribution<double> n(0.0, 0.4);
    std::ofstream out(path);
    for (const auto& term : vocab.terms()) {
        out << term;
        for (int c = 0; c < dim; ++c) out << ' ' << tk::format_double(static_cast<float>(n(rng)));
        out << '\n';
    }
}

inline void write_records(const std::string& path, const std::vector<tk::TextRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    for (const auto& r : records) out << r.id << '\t' << r.text << '\n';
}

inline void write_triples(const std::string& path, const std::vector<tk::TrainTriple>& triples) {
    std::ofstream out(path, std::ios::binary);
    for (const auto& t : triples) out << t.query_id << '\t' << t.positive_doc_id << '\t' << t.negative_doc_id << '\n';
}

inline void write_qrels(const std::string& path, const tk::Qrels& qrels) {
    std::ofstream out(path, std::ios::binary);
    for (const auto& [q, docs] : qrels.all())
        for (const auto& [d, g] : docs) out << q << " 0 " << d << ' ' << g << '\n';
}

inline void write_run(const std::string& path, const tk::Ranking& run) {
    std::ofstream out(path, std::ios::binary);
    tk::write_run(out, run);
}

}  // namespace fixtures
