// Tokenization, vocabulary construction and embedding ingestion.
#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <fmt/core.h>

#include "tk/common.hpp"

namespace tk {

inline constexpr int kPadId = 0;
inline constexpr int kOovId = 1;
inline constexpr std::size_t kQueryCap = 30;
inline constexpr std::size_t kDocumentCap = 200;
inline constexpr std::size_t kNoCap = std::numeric_limits<std::size_t>::max();

namespace detail {

inline void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// Decodes one code point starting at `pos`; invalid bytes decode as U+FFFD
// and consume a single byte.
inline char32_t next_code_point(std::string_view s, std::size_t& pos) {
    const auto b0 = static_cast<unsigned char>(s[pos]);
    auto cont = [&](std::size_t i) -> int {
        if (pos + i >= s.size()) return -1;
        const auto b = static_cast<unsigned char>(s[pos + i]);
        return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
    };
    if (b0 < 0x80) {
        pos += 1;
        return b0;
    }
    if ((b0 & 0xE0) == 0xC0) {
        if (int c1 = cont(1); c1 >= 0) {
            pos += 2;
            return (char32_t(b0 & 0x1F) << 6) | char32_t(c1);
        }
    } else if ((b0 & 0xF0) == 0xE0) {
        int c1 = cont(1), c2 = cont(2);
        if (c1 >= 0 && c2 >= 0) {
            pos += 3;
            return (char32_t(b0 & 0x0F) << 12) | (char32_t(c1) << 6) | char32_t(c2);
        }
    } else if ((b0 & 0xF8) == 0xF0) {
        int c1 = cont(1), c2 = cont(2), c3 = cont(3);
        if (c1 >= 0 && c2 >= 0 && c3 >= 0) {
            pos += 4;
            return (char32_t(b0 & 0x07) << 18) | (char32_t(c1) << 12) | (char32_t(c2) << 6) |
                   char32_t(c3);
        }
    }
    pos += 1;
    return 0xFFFD;
}

inline bool is_space(char32_t c) {
    return c == 0x20 || (c >= 0x09 && c <= 0x0D) || c == 0x85 || c == 0xA0 || c == 0x1680 ||
           (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
           c == 0x205F || c == 0x3000;
}

inline bool is_punct(char32_t c) {
    if (c < 0x80) {
        return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
               (c >= 0x7B && c <= 0x7E);
    }
    switch (c) {
        case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB: case 0xBF:
            return true;
        default:
            break;
    }
    return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) ||
           (c >= 0x3001 && c <= 0x3003) || (c >= 0x3008 && c <= 0x3011) ||
           (c >= 0xFF01 && c <= 0xFF0F);
}

// Simple case folding for Latin-1, Latin Extended-A, Greek and Cyrillic.
inline char32_t to_lower(char32_t c) {
    if (c >= 'A' && c <= 'Z') return c + 32;
    if ((c >= 0xC0 && c <= 0xDE) && c != 0xD7) return c + 32;
    if (c == 0x178) return 0xFF;
    if (c >= 0x100 && c <= 0x17F && c != 0x130 && c != 0x138 && c != 0x149 && c != 0x17F) {
        const bool even_upper = (c < 0x139) || (c >= 0x14A && c < 0x179);
        if (even_upper ? (c % 2 == 0) : (c % 2 == 1)) return c + 1;
        return c;
    }
    if (c >= 0x391 && c <= 0x3AB && c != 0x3A2) return c + 32;
    if (c >= 0x410 && c <= 0x42F) return c + 32;
    if (c >= 0x400 && c <= 0x40F) return c + 80;
    return c;
}

}  // namespace detail

/// Lowercases and splits on whitespace and punctuation. Every punctuation code
/// point becomes a token of its own. At most `cap` terms are returned.
inline std::vector<std::string> tokenize(std::string_view text, std::size_t cap = kNoCap) {
    std::vector<std::string> terms;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            terms.push_back(std::move(current));
            current.clear();
        }
    };
    std::size_t pos = 0;
    while (pos < text.size() && terms.size() < cap) {
        const char32_t cp = detail::next_code_point(text, pos);
        if (detail::is_space(cp)) {
            flush();
        } else if (detail::is_punct(cp)) {
            flush();
            if (terms.size() < cap) {
                std::string p;
                detail::append_utf8(p, cp);
                terms.push_back(std::move(p));
            }
        } else {
            detail::append_utf8(current, detail::to_lower(cp));
        }
    }
    if (terms.size() < cap) flush();
    if (terms.size() > cap) terms.resize(cap);
    return terms;
}

/// Term to id mapping. Id 0 is padding, id 1 is the shared out-of-vocabulary
/// id; stored terms follow in lexicographic order.
class Vocabulary {
public:
    Vocabulary() = default;

    /// `terms` must be sorted and unique.
    Vocabulary(std::vector<std::string> terms, std::vector<std::size_t> counts, std::size_t min_occurrence)
        : terms_(std::move(terms)), counts_(std::move(counts)), min_occurrence_(min_occurrence) {
        if (counts_.size() != terms_.size()) throw DataError("vocabulary: term/count size mismatch");
        for (std::size_t i = 0; i < terms_.size(); ++i) {
            if (i > 0 && !(terms_[i - 1] < terms_[i]))
                throw DataError(fmt::format("vocabulary: terms not sorted/unique at '{}'", terms_[i]));
            index_.emplace(terms_[i], static_cast<int>(i) + 2);
        }
    }

    std::size_t size() const { return terms_.size() + 2; }
    std::size_t min_occurrence() const { return min_occurrence_; }

    int id(std::string_view term) const {
        auto it = index_.find(std::string(term));
        return it == index_.end() ? kOovId : it->second;
    }

    /// Term for an id; "<pad>" and "<oov>" for the reserved ids.
    std::string term(int id) const {
        if (id == kPadId) return "<pad>";
        if (id == kOovId) return "<oov>";
        return terms_.at(static_cast<std::size_t>(id - 2));
    }

    const std::vector<std::string>& terms() const { return terms_; }
    const std::vector<std::size_t>& counts() const { return counts_; }

    bool operator==(const Vocabulary& o) const {
        return terms_ == o.terms_ && counts_ == o.counts_ && min_occurrence_ == o.min_occurrence_;
    }

    /// `preamble` is written verbatim first; it should consist of '#' lines.
    void save(const std::string& path, const std::string& preamble = "") const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write vocabulary: " + path);
        out << preamble << "# min_occurrence=" << min_occurrence_ << '\n';
        for (std::size_t i = 0; i < terms_.size(); ++i) out << terms_[i] << '\t' << counts_[i] << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot read vocabulary: " + path);
        std::vector<std::string> terms;
        std::vector<std::size_t> counts;
        std::size_t min_occ = 1;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            if (line[0] == '#') {
                constexpr std::string_view key = "# min_occurrence=";
                if (line.starts_with(key)) min_occ = std::stoul(line.substr(key.size()));
                continue;
            }
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw DataError(fmt::format("{}:{}: expected term<TAB>count", path, line_no));
            terms.push_back(line.substr(0, tab));
            counts.push_back(std::stoul(line.substr(tab + 1)));
        }
        return Vocabulary(std::move(terms), std::move(counts), min_occ);
    }

private:
    std::vector<std::string> terms_;
    std::vector<std::size_t> counts_;
    std::size_t min_occurrence_ = 1;
    std::unordered_map<std::string, int> index_;
};

/// Counts every term of every document (uncapped) and keeps those occurring
/// at least `min_occurrence` times.
template <class Range>
Vocabulary build_vocabulary(const Range& documents, std::size_t min_occurrence) {
    std::map<std::string, std::size_t> counts;
    for (const auto& doc : documents)
        for (auto& t : tokenize(doc)) ++counts[std::move(t)];
    std::vector<std::string> terms;
    std::vector<std::size_t> kept;
    for (auto& [term, n] : counts) {
        if (n >= min_occurrence) {
            terms.push_back(term);
            kept.push_back(n);
        }
    }
    return Vocabulary(std::move(terms), std::move(kept), min_occurrence);
}

/// Fixed-length id sequence; ids past `length` are padding.
struct TokenSequence {
    std::vector<int> ids;
    std::size_t length = 0;

    std::size_t cap() const { return ids.size(); }
    std::span<const int> valid() const { return {ids.data(), length}; }
    bool operator==(const TokenSequence&) const = default;
};

inline TokenSequence encode(std::span<const std::string> terms, const Vocabulary& vocab, std::size_t cap) {
    TokenSequence seq;
    seq.ids.assign(cap, kPadId);
    seq.length = std::min(cap, terms.size());
    for (std::size_t i = 0; i < seq.length; ++i) seq.ids[i] = vocab.id(terms[i]);
    return seq;
}

inline TokenSequence encode_text(std::string_view text, const Vocabulary& vocab, std::size_t cap) {
    const auto terms = tokenize(text, cap);
    return encode(terms, vocab, cap);
}

/// Reads a GloVe text file into a size x dim matrix. Vocabulary rows missing
/// from the file (and the OOV row) are drawn from U[-0.05, 0.05]; the PAD row
/// is zero.
template <class T>
Mat<T> load_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim, Rng& rng) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read embeddings: " + path);
    Mat<T> rows = Mat<T>::Zero(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(dim));
    std::vector<char> found(vocab.size(), 0);
    std::string line;
    std::size_t line_no = 0;
    std::vector<T> values;
    values.reserve(dim);
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto sp = line.find(' ');
        if (sp == std::string::npos) throw DataError(fmt::format("line {}: expected {} dims", line_no, dim));
        const std::string_view word(line.data(), sp);
        const int id = vocab.id(word);
        values.clear();
        const char* p = line.data() + sp;
        const char* end = line.data() + line.size();
        while (p < end) {
            while (p < end && *p == ' ') ++p;
            if (p == end) break;
            double v = 0;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc())
                throw DataError(fmt::format("line {}: malformed number", line_no));
            values.push_back(static_cast<T>(v));
            p = next;
        }
        if (values.size() != dim)
            throw DataError(fmt::format("line {}: expected {} dims, got {}", line_no, dim, values.size()));
        if (id == kOovId || found[static_cast<std::size_t>(id)]) continue;
        found[static_cast<std::size_t>(id)] = 1;
        for (std::size_t c = 0; c < dim; ++c) rows(id, static_cast<Eigen::Index>(c)) = values[c];
    }
    std::uniform_real_distribution<double> dist(-0.05, 0.05);
    for (std::size_t id = 1; id < vocab.size(); ++id) {
        if (found[id]) continue;
        for (std::size_t c = 0; c < dim; ++c)
            rows(static_cast<Eigen::Index>(id), static_cast<Eigen::Index>(c)) = static_cast<T>(dist(rng));
    }
    return rows;
}

/// Embedding matrix for a vocabulary without pre-trained vectors.
template <class T>
Mat<T> random_embeddings(const Vocabulary& vocab, std::size_t dim, Rng& rng) {
    Mat<T> rows(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(dim));
    std::uniform_real_distribution<double> dist(-0.05, 0.05);
    rows.row(kPadId).setZero();
    for (Eigen::Index id = 1; id < rows.rows(); ++id)
        for (Eigen::Index c = 0; c < rows.cols(); ++c) rows(id, c) = static_cast<T>(dist(rng));
    return rows;
}

/// One `id<TAB>text` record of a collection or query file.
struct TextRecord {
    std::string id;
    std::string text;
};

/// Reads `id<TAB>text` lines. Blank lines are skipped.
inline std::vector<TextRecord> read_tsv_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path);
    std::vector<TextRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw DataError(fmt::format("{}:{}: expected id<TAB>text", path, line_no));
        out.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    return out;
}

/// id -> text lookup; duplicate ids are rejected.
inline std::unordered_map<std::string, std::string> to_text_map(const std::vector<TextRecord>& records) {
    std::unordered_map<std::string, std::string> map;
    map.reserve(records.size());
    for (const auto& r : records)
        if (!map.emplace(r.id, r.text).second) throw DataError("duplicate id: " + r.id);
    return map;
}

}  // namespace tk
