// Glue between text records, the model and the evaluation harness.
#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <fmt/core.h>

#include "tk/evaluation.hpp"
#include "tk/model.hpp"
#include "tk/text.hpp"

namespace tk {

/// Queries and documents encoded once, ahead of any timing or training.
struct EncodedCollection {
    std::unordered_map<std::string, TokenSequence> queries;
    std::unordered_map<std::string, TokenSequence> documents;

    static EncodedCollection build(const std::vector<TextRecord>& queries, const std::vector<TextRecord>& docs,
                                   const Vocabulary& vocab, std::size_t query_cap, std::size_t doc_cap) {
        EncodedCollection e;
        for (const auto& q : queries) e.queries[q.id] = encode_text(q.text, vocab, query_cap);
        for (const auto& d : docs) e.documents[d.id] = encode_text(d.text, vocab, doc_cap);
        return e;
    }

    const TokenSequence& query(const std::string& id) const {
        auto it = queries.find(id);
        if (it == queries.end()) throw DataError("query text missing for id " + id);
        if (it->second.length == 0) throw DataError("query " + id + " has no tokens");
        return it->second;
    }

    const TokenSequence& document(const std::string& id) const {
        auto it = documents.find(id);
        if (it == documents.end()) throw DataError("document text missing for id " + id);
        if (it->second.length == 0) throw DataError("document " + id + " has no tokens");
        return it->second;
    }
};

/// Batch scorer backed by a TK model. Missing texts raise DataError naming
/// the id.
template <class T>
BatchScorer make_model_scorer(const TkModel<T>& model, const EncodedCollection& encoded, int threads = 1) {
    return [&model, &encoded, threads](const std::string& qid, std::span<const std::string> ids) {
        const TokenSequence& q = encoded.query(qid);
        std::vector<TokenSequence> docs;
        docs.reserve(ids.size());
        for (const auto& id : ids) docs.push_back(encoded.document(id));
        return model.score_documents(q, docs, threads);
    };
}

/// One query with pre-encoded candidates, the unit of throughput timing.
struct ScoringBatch {
    TokenSequence query;
    std::vector<TokenSequence> documents;
};

template <class T>
ThroughputProfile measure_model_throughput(const TkModel<T>& model, std::span<const ScoringBatch> batches,
                                           int runs = 3, int threads = 1) {
    std::size_t pairs = 0;
    for (const auto& b : batches) pairs += b.documents.size();
    double sink = 0;
    auto pass = [&] {
        for (const auto& b : batches)
            for (double s : model.score_documents(b.query, b.documents, threads)) sink += s;
    };
    auto profile = measure_throughput(pairs, pass, runs);
    if (sink != sink) profile.measurement_scope += " (non-finite scores observed)";
    return profile;
}

/// Candidates of the first `depth` entries of a run, encoded for timing.
inline std::vector<ScoringBatch> batches_from_run(const Ranking& run, const EncodedCollection& encoded,
                                                  std::size_t depth) {
    std::vector<ScoringBatch> out;
    for (const auto& [q, list] : run.lists) {
        ScoringBatch b;
        b.query = encoded.query(q);
        for (std::size_t i = 0; i < std::min(depth, list.size()); ++i)
            b.documents.push_back(encoded.document(list[i].doc_id));
        if (!b.documents.empty()) out.push_back(std::move(b));
    }
    return out;
}

}  // namespace tk
