// Ranking metrics at a cutoff, re-ranking, depth tuning and the
// time-budget evaluation harness.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <fmt/core.h>

#include "tk/common.hpp"

namespace tk {

/// Relevance judgments: (query, doc) -> grade >= 0.
class Qrels {
public:
    void add(const std::string& query_id, const std::string& doc_id, int grade) {
        if (grade < 0) throw DataError(fmt::format("negative grade for {} {}", query_id, doc_id));
        grades_[query_id][doc_id] = grade;
    }

    int grade(const std::string& query_id, const std::string& doc_id) const {
        auto q = grades_.find(query_id);
        if (q == grades_.end()) return 0;
        auto d = q->second.find(doc_id);
        return d == q->second.end() ? 0 : d->second;
    }

    std::size_t relevant_count(const std::string& query_id) const {
        auto q = grades_.find(query_id);
        if (q == grades_.end()) return 0;
        return static_cast<std::size_t>(
            std::count_if(q->second.begin(), q->second.end(), [](const auto& kv) { return kv.second > 0; }));
    }

    /// Grades of a query in descending order.
    std::vector<int> sorted_grades(const std::string& query_id) const {
        std::vector<int> out;
        if (auto q = grades_.find(query_id); q != grades_.end())
            for (const auto& [d, g] : q->second) out.push_back(g);
        std::sort(out.rbegin(), out.rend());
        return out;
    }

    bool empty() const { return grades_.empty(); }
    const std::map<std::string, std::map<std::string, int>>& all() const { return grades_; }

private:
    std::map<std::string, std::map<std::string, int>> grades_;
};

struct RankedDoc {
    std::string doc_id;
    double score = 0;
    int rank = 0;

    bool operator==(const RankedDoc&) const = default;
};

/// Per-query ordered candidate lists. Ranks are 1..n; scores are
/// non-increasing; equal scores are ordered by ascending doc id.
struct Ranking {
    std::map<std::string, std::vector<RankedDoc>> lists;
    std::string tag = "tk";

    /// Builds lists by sorting (doc, score) pairs.
    static Ranking from_scores(const std::map<std::string, std::vector<std::pair<std::string, double>>>& scored,
                               std::string tag = "tk") {
        Ranking r;
        r.tag = std::move(tag);
        for (const auto& [q, docs] : scored) {
            auto& list = r.lists[q];
            for (const auto& [d, s] : docs) list.push_back({d, s, 0});
            sort_and_rank(list);
        }
        return r;
    }

    static void sort_and_rank(std::vector<RankedDoc>& list) {
        std::sort(list.begin(), list.end(), [](const RankedDoc& a, const RankedDoc& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.doc_id < b.doc_id;
        });
        for (std::size_t i = 0; i < list.size(); ++i) list[i].rank = static_cast<int>(i) + 1;
    }

    std::size_t max_depth() const {
        std::size_t m = 0;
        for (const auto& [q, l] : lists) m = std::max(m, l.size());
        return m;
    }

    bool operator==(const Ranking&) const = default;
};

namespace detail {

inline void require_qrels(const Qrels& qrels) {
    if (qrels.empty()) throw DataError("qrels are empty");
}

template <class PerQuery>
double mean_over_judged(const Ranking& ranking, const Qrels& qrels, PerQuery&& per_query) {
    require_qrels(qrels);
    double sum = 0;
    std::size_t n = 0;
    for (const auto& [q, list] : ranking.lists) {
        if (qrels.relevant_count(q) == 0) continue;
        sum += per_query(q, list);
        ++n;
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

inline void require_cutoff(std::size_t k) {
    if (k == 0) throw UsageError("metric cutoff must be >= 1");
}

}  // namespace detail

/// Queries without any relevant judgment are excluded from every mean.
inline double mrr_at_k(const Ranking& ranking, const Qrels& qrels, std::size_t k = 10) {
    detail::require_cutoff(k);
    return detail::mean_over_judged(ranking, qrels, [&](const std::string& q, const std::vector<RankedDoc>& list) {
        for (std::size_t i = 0; i < std::min(k, list.size()); ++i)
            if (qrels.grade(q, list[i].doc_id) > 0) return 1.0 / static_cast<double>(i + 1);
        return 0.0;
    });
}

inline double recall_at_k(const Ranking& ranking, const Qrels& qrels, std::size_t k = 10) {
    detail::require_cutoff(k);
    return detail::mean_over_judged(ranking, qrels, [&](const std::string& q, const std::vector<RankedDoc>& list) {
        std::size_t hit = 0;
        for (std::size_t i = 0; i < std::min(k, list.size()); ++i)
            if (qrels.grade(q, list[i].doc_id) > 0) ++hit;
        return static_cast<double>(hit) / static_cast<double>(qrels.relevant_count(q));
    });
}

/// Gain 2^grade - 1, discount log2(rank + 1), normalized by the ideal
/// ordering of the query's judged grades.
inline double ndcg_at_k(const Ranking& ranking, const Qrels& qrels, std::size_t k = 10) {
    detail::require_cutoff(k);
    auto gain = [](int g) { return std::pow(2.0, g) - 1.0; };
    return detail::mean_over_judged(ranking, qrels, [&](const std::string& q, const std::vector<RankedDoc>& list) {
        double dcg = 0;
        for (std::size_t i = 0; i < std::min(k, list.size()); ++i)
            dcg += gain(qrels.grade(q, list[i].doc_id)) / std::log2(static_cast<double>(i) + 2.0);
        const auto ideal = qrels.sorted_grades(q);
        double idcg = 0;
        for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i)
            idcg += gain(ideal[i]) / std::log2(static_cast<double>(i) + 2.0);
        return idcg > 0 ? dcg / idcg : 0.0;
    });
}

struct Metrics {
    double mrr = 0;
    double recall = 0;
    double ndcg = 0;
};

inline Metrics evaluate(const Ranking& ranking, const Qrels& qrels, std::size_t k = 10) {
    return {mrr_at_k(ranking, qrels, k), recall_at_k(ranking, qrels, k), ndcg_at_k(ranking, qrels, k)};
}

/// Scores a batch of candidate documents for one query.
using BatchScorer = std::function<std::vector<double>(const std::string& query_id, std::span<const std::string> doc_ids)>;

/// Re-scores the top `depth` candidates of every query and sorts them by
/// model score. Candidates below the depth keep their first-stage order and
/// are appended after the re-scored block with scores stepping down by 1 from
/// the block minimum, so scores stay non-increasing. Depth 0 is the identity.
inline Ranking rerank(const Ranking& first_stage, std::size_t depth, const BatchScorer& scorer) {
    if (depth == 0) return first_stage;
    Ranking out;
    out.tag = first_stage.tag;
    for (const auto& [q, list] : first_stage.lists) {
        const std::size_t d = std::min(depth, list.size());
        std::vector<std::string> ids;
        ids.reserve(d);
        for (std::size_t i = 0; i < d; ++i) ids.push_back(list[i].doc_id);
        const auto scores = scorer(q, ids);
        if (scores.size() != d) throw DataError(fmt::format("scorer returned {} scores for {} candidates", scores.size(), d));
        std::vector<RankedDoc> block;
        block.reserve(list.size());
        for (std::size_t i = 0; i < d; ++i) block.push_back({ids[i], scores[i], 0});
        Ranking::sort_and_rank(block);
        double floor_score = block.empty() ? 0.0 : block.back().score;
        for (std::size_t i = d; i < list.size(); ++i) {
            floor_score -= 1.0;
            block.push_back({list[i].doc_id, floor_score, static_cast<int>(i) + 1});
        }
        out.lists.emplace(q, std::move(block));
    }
    return out;
}

/// Scores every candidate up to `max_depth` once so that re-ranking at any
/// smaller depth is a prefix lookup.
class ScoreCache {
public:
    ScoreCache(const Ranking& first_stage, std::size_t max_depth, const BatchScorer& scorer) {
        for (const auto& [q, list] : first_stage.lists) {
            const std::size_t d = std::min(max_depth, list.size());
            std::vector<std::string> ids;
            for (std::size_t i = 0; i < d; ++i) ids.push_back(list[i].doc_id);
            const auto scores = d > 0 ? scorer(q, ids) : std::vector<double>{};
            auto& m = scores_[q];
            for (std::size_t i = 0; i < d; ++i) m.emplace(ids[i], scores.at(i));
        }
    }

    BatchScorer scorer() const {
        return [this](const std::string& q, std::span<const std::string> ids) {
            std::vector<double> out;
            out.reserve(ids.size());
            const auto& m = scores_.at(q);
            for (const auto& id : ids) {
                auto it = m.find(id);
                if (it == m.end()) throw DataError(fmt::format("no cached score for {} {}", q, id));
                out.push_back(it->second);
            }
            return out;
        };
    }

private:
    std::map<std::string, std::unordered_map<std::string, double>> scores_;
};

/// Depth maximizing validation MRR@10; ties go to the smaller depth.
inline std::size_t tune_depth(const Ranking& first_stage, const Qrels& qrels, const BatchScorer& scorer,
                              std::vector<std::size_t> candidate_depths, std::size_t k = 10) {
    if (candidate_depths.empty()) throw UsageError("no candidate depths");
    std::sort(candidate_depths.begin(), candidate_depths.end());
    const ScoreCache cache(first_stage, candidate_depths.back(), scorer);
    const auto cached = cache.scorer();
    std::size_t best = candidate_depths.front();
    double best_mrr = -1;
    for (std::size_t d : candidate_depths) {
        const double m = mrr_at_k(rerank(first_stage, d, cached), qrels, k);
        if (m > best_mrr) {
            best_mrr = m;
            best = d;
        }
    }
    return best;
}

/// Scoring throughput; the clock covers score computation only.
struct ThroughputProfile {
    double docs_per_ms = 0;
    int n_runs_averaged = 0;
    std::string measurement_scope = "scoring only, pre-processing excluded";

    /// Pooled average: total pairs over total milliseconds.
    static ThroughputProfile from_timings(std::size_t pairs_per_run, std::span<const double> ms_per_run) {
        if (pairs_per_run == 0) throw DataError("throughput: zero scored pairs");
        if (ms_per_run.empty()) throw DataError("throughput: no timed runs");
        double total_ms = 0;
        for (double ms : ms_per_run) total_ms += ms;
        if (!(total_ms > 0)) throw DataError("throughput: non-positive elapsed time");
        ThroughputProfile p;
        p.docs_per_ms = static_cast<double>(pairs_per_run) * static_cast<double>(ms_per_run.size()) / total_ms;
        p.n_runs_averaged = static_cast<int>(ms_per_run.size());
        return p;
    }

    static ThroughputProfile injected(double docs_per_ms) {
        if (!(docs_per_ms > 0)) throw UsageError("docs_per_ms must be positive");
        ThroughputProfile p;
        p.docs_per_ms = docs_per_ms;
        p.n_runs_averaged = 0;
        p.measurement_scope = "injected";
        return p;
    }
};

/// Times `run_pass()` (which must score `pairs_per_pass` pre-encoded pairs)
/// `runs` times after one untimed warm-up pass.
template <class F>
ThroughputProfile measure_throughput(std::size_t pairs_per_pass, F&& run_pass, int runs = 3) {
    if (pairs_per_pass == 0) throw DataError("throughput: zero scored pairs");
    if (runs < 3) throw UsageError("throughput needs at least 3 timed passes");
    run_pass();
    std::vector<double> ms;
    for (int r = 0; r < runs; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        run_pass();
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return ThroughputProfile::from_timings(pairs_per_pass, ms);
}

/// floor(budget * docs_per_ms), capped at `cap`.
inline std::size_t depth_for_budget(double budget_ms, double docs_per_ms, std::size_t cap) {
    if (budget_ms < 0) throw UsageError("negative time budget");
    const double raw = std::floor(budget_ms * docs_per_ms);
    if (raw >= static_cast<double>(cap)) return cap;
    return static_cast<std::size_t>(raw);
}

struct BudgetPoint {
    double budget_ms = 0;
    std::size_t depth = 0;
    Metrics metrics;
};

struct BudgetSweepResult {
    std::vector<BudgetPoint> points;
    std::optional<std::size_t> best_index;        // highest MRR@10, earliest budget on ties
    std::optional<std::size_t> saturation_index;  // first budget whose depth hits the candidate cap
};

/// Per budget: depth from throughput, re-rank at that depth, evaluate.
inline BudgetSweepResult budget_sweep(const Ranking& first_stage, const Qrels& qrels, const BatchScorer& scorer,
                                      const ThroughputProfile& profile, std::span<const double> budgets_ms,
                                      std::size_t k = 10) {
    if (!std::is_sorted(budgets_ms.begin(), budgets_ms.end())) throw UsageError("budgets must be sorted ascending");
    const std::size_t cap = first_stage.max_depth();
    BudgetSweepResult result;
    std::size_t max_depth = 0;
    for (double b : budgets_ms) max_depth = std::max(max_depth, depth_for_budget(b, profile.docs_per_ms, cap));
    const ScoreCache cache(first_stage, max_depth, scorer);
    const auto cached = cache.scorer();
    double best = -1;
    for (std::size_t i = 0; i < budgets_ms.size(); ++i) {
        BudgetPoint p;
        p.budget_ms = budgets_ms[i];
        p.depth = depth_for_budget(budgets_ms[i], profile.docs_per_ms, cap);
        p.metrics = evaluate(rerank(first_stage, p.depth, cached), qrels, k);
        if (p.metrics.mrr > best) {
            best = p.metrics.mrr;
            result.best_index = i;
        }
        if (!result.saturation_index && p.depth == cap) result.saturation_index = i;
        result.points.push_back(p);
    }
    return result;
}

/// Median over `query_subset` of the rank of the first relevant document; a
/// query whose relevant documents were not retrieved counts as list length + 1.
inline double median_first_relevant(const Ranking& ranking, const Qrels& qrels,
                                    std::span<const std::string> query_subset) {
    if (query_subset.empty()) throw DataError("median over an empty query set");
    std::vector<std::size_t> ranks;
    ranks.reserve(query_subset.size());
    for (const auto& q : query_subset) {
        if (qrels.relevant_count(q) == 0) throw DataError("query without relevant judgments: " + q);
        auto it = ranking.lists.find(q);
        if (it == ranking.lists.end()) throw DataError("query missing from ranking: " + q);
        std::size_t r = it->second.size() + 1;
        for (std::size_t i = 0; i < it->second.size(); ++i)
            if (qrels.grade(q, it->second[i].doc_id) > 0) {
                r = i + 1;
                break;
            }
        ranks.push_back(r);
    }
    std::sort(ranks.begin(), ranks.end());
    const std::size_t n = ranks.size();
    if (n % 2 == 1) return static_cast<double>(ranks[n / 2]);
    return (static_cast<double>(ranks[n / 2 - 1]) + static_cast<double>(ranks[n / 2])) / 2.0;
}

}  // namespace tk
