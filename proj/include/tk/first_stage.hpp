// Minimal BM25 retrieval producing candidate lists for re-ranking.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tk/common.hpp"
#include "tk/evaluation.hpp"
#include "tk/text.hpp"

namespace tk {

struct Posting {
    std::uint32_t doc = 0;  // index into InvertedIndex::doc_ids
    std::uint32_t tf = 0;

    bool operator==(const Posting&) const = default;
};

/// Documents are numbered in ascending doc id order, so postings are sorted
/// by doc id and the index does not depend on input order.
struct InvertedIndex {
    std::vector<std::string> doc_ids;
    std::vector<std::uint32_t> doc_lengths;
    std::unordered_map<std::string, std::vector<Posting>> postings;
    double avg_doc_length = 0;

    std::size_t n_docs() const { return doc_ids.size(); }

    const std::vector<Posting>* find(const std::string& term) const {
        auto it = postings.find(term);
        return it == postings.end() ? nullptr : &it->second;
    }
};

inline InvertedIndex build_index(const std::vector<TextRecord>& collection) {
    std::vector<const TextRecord*> order;
    order.reserve(collection.size());
    for (const auto& r : collection) order.push_back(&r);
    std::sort(order.begin(), order.end(), [](const TextRecord* a, const TextRecord* b) { return a->id < b->id; });
    for (std::size_t i = 1; i < order.size(); ++i)
        if (order[i - 1]->id == order[i]->id) throw DataError("duplicate doc_id: " + order[i]->id);

    InvertedIndex index;
    double total = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto terms = tokenize(order[i]->text);
        index.doc_ids.push_back(order[i]->id);
        index.doc_lengths.push_back(static_cast<std::uint32_t>(terms.size()));
        total += static_cast<double>(terms.size());
        std::map<std::string, std::uint32_t> tf;
        for (const auto& t : terms) ++tf[t];
        for (const auto& [t, n] : tf) index.postings[t].push_back({static_cast<std::uint32_t>(i), n});
    }
    index.avg_doc_length = order.empty() ? 0.0 : total / static_cast<double>(order.size());
    return index;
}

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;
};

/// idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)).
inline double bm25_idf(std::size_t n_docs, std::size_t df) {
    return std::log(1.0 + (static_cast<double>(n_docs) - static_cast<double>(df) + 0.5) / (static_cast<double>(df) + 0.5));
}

/// Top-k documents for one query. Every query token contributes, repeated
/// tokens included. Documents without any query term are not returned.
inline std::vector<RankedDoc> bm25_search(const InvertedIndex& index, const std::string& query, std::size_t k,
                                          Bm25Params params = {}) {
    if (k == 0) throw UsageError("bm25: k must be >= 1");
    std::unordered_map<std::uint32_t, double> acc;
    const double avgdl = index.avg_doc_length > 0 ? index.avg_doc_length : 1.0;
    for (const auto& term : tokenize(query)) {
        const auto* plist = index.find(term);
        if (!plist) continue;
        const double idf = bm25_idf(index.n_docs(), plist->size());
        for (const auto& p : *plist) {
            const double tf = p.tf;
            const double norm = params.k1 * (1.0 - params.b + params.b * index.doc_lengths[p.doc] / avgdl);
            acc[p.doc] += idf * tf * (params.k1 + 1.0) / (tf + norm);
        }
    }
    std::vector<RankedDoc> hits;
    hits.reserve(acc.size());
    for (const auto& [doc, s] : acc) hits.push_back({index.doc_ids[doc], s, 0});
    auto better = [](const RankedDoc& a, const RankedDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    };
    if (hits.size() > k) {
        std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), better);
        hits.resize(k);
    } else {
        std::sort(hits.begin(), hits.end(), better);
    }
    for (std::size_t i = 0; i < hits.size(); ++i) hits[i].rank = static_cast<int>(i) + 1;
    return hits;
}

/// Candidate run for a set of queries.
inline Ranking bm25_run(const InvertedIndex& index, const std::vector<TextRecord>& queries, std::size_t k,
                        Bm25Params params = {}, std::string tag = "bm25") {
    Ranking r;
    r.tag = std::move(tag);
    for (const auto& q : queries) r.lists[q.id] = bm25_search(index, q.text, k, params);
    return r;
}

}  // namespace tk
