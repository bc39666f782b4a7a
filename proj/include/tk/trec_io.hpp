// TREC-style run/qrels files, training triples and the sweep TSV.
// Lines starting with '#' are metadata and skipped by every reader.
#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "tk/common.hpp"
#include "tk/evaluation.hpp"

namespace tk {

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

inline double parse_double(const std::string& s, const std::string& where) {
    double v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw DataError(where + ": not a number: '" + s + "'");
    return v;
}

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

inline bool skip_line(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line.empty() || line[0] == '#';
}

}  // namespace detail

/// `query_id Q0 doc_id rank score tag`. Entries are ordered by the rank
/// column and renumbered 1..n; the first tag seen becomes the run tag.
inline Ranking read_run(std::istream& in, const std::string& name = "run") {
    Ranking r;
    bool tag_seen = false;
    std::map<std::string, std::vector<std::pair<long, RankedDoc>>> raw;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::skip_line(line)) continue;
        const auto f = detail::split_ws(line);
        const std::string where = fmt::format("{}:{}", name, line_no);
        if (f.size() != 6) throw DataError(where + ": expected 'query_id Q0 doc_id rank score tag'");
        if (!tag_seen) {
            r.tag = f[5];
            tag_seen = true;
        }
        long rank = 0;
        auto [p, ec] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), rank);
        if (ec != std::errc()) throw DataError(where + ": bad rank");
        raw[f[0]].push_back({rank, {f[2], parse_double(f[4], where), 0}});
    }
    for (auto& [q, entries] : raw) {
        std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        auto& list = r.lists[q];
        for (auto& [rank, doc] : entries) {
            doc.rank = static_cast<int>(list.size()) + 1;
            list.push_back(std::move(doc));
        }
    }
    return r;
}

inline Ranking read_run(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read run: " + path);
    return read_run(in, path);
}

inline void write_run(std::ostream& out, const Ranking& r) {
    for (const auto& [q, list] : r.lists)
        for (const auto& d : list) out << q << " Q0 " << d.doc_id << ' ' << d.rank << ' ' << format_double(d.score) << ' ' << r.tag << '\n';
}

/// `query_id 0 doc_id grade`.
inline Qrels read_qrels(std::istream& in, const std::string& name = "qrels") {
    Qrels q;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::skip_line(line)) continue;
        const auto f = detail::split_ws(line);
        if (f.size() != 4) throw DataError(fmt::format("{}:{}: expected 'query_id 0 doc_id grade'", name, line_no));
        int g = 0;
        auto [p, ec] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), g);
        if (ec != std::errc()) throw DataError(fmt::format("{}:{}: bad grade", name, line_no));
        q.add(f[0], f[2], g);
    }
    return q;
}

inline Qrels read_qrels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read qrels: " + path);
    return read_qrels(in, path);
}

struct TrainTriple {
    std::string query_id;
    std::string positive_doc_id;
    std::string negative_doc_id;
};

/// `query_id<TAB>pos_doc_id<TAB>neg_doc_id`.
inline std::vector<TrainTriple> read_triples(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read triples: " + path);
    std::vector<TrainTriple> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::skip_line(line)) continue;
        std::vector<std::string> f;
        std::size_t start = 0;
        while (true) {
            const auto tab = line.find('\t', start);
            f.push_back(line.substr(start, tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (f.size() != 3) throw DataError(fmt::format("{}:{}: expected query<TAB>pos<TAB>neg", path, line_no));
        if (f[1] == f[2]) throw DataError(fmt::format("{}:{}: positive equals negative", path, line_no));
        out.push_back({f[0], f[1], f[2]});
    }
    return out;
}

/// `budget_ms<TAB>depth<TAB>mrr<TAB>recall<TAB>ndcg`, one line per budget.
inline void write_sweep(std::ostream& out, const BudgetSweepResult& r) {
    for (const auto& p : r.points)
        out << format_double(p.budget_ms) << '\t' << p.depth << '\t' << fmt::format("{:.6f}", p.metrics.mrr) << '\t'
            << fmt::format("{:.6f}", p.metrics.recall) << '\t' << fmt::format("{:.6f}", p.metrics.ndcg) << '\n';
}

}  // namespace tk
