// Clustering queries by their mean contextualized embedding and comparing
// first-relevant ranks per cluster.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "tk/evaluation.hpp"
#include "tk/model.hpp"
#include "tk/parallel.hpp"
#include "tk/trec_io.hpp"

namespace tk {

/// Mean of the contextualized rows over the valid query positions.
template <class T>
Eigen::VectorXd query_embedding(const TkModel<T>& model, const TokenSequence& query) {
    if (query.length == 0) throw DataError("cannot embed an empty query");
    const Mat<T> out = model.contextualize_sequence(query);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(out.cols());
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(query.length); ++i)
        for (Eigen::Index c = 0; c < out.cols(); ++c) mean[c] += static_cast<double>(out(i, c));
    return mean / static_cast<double>(query.length);
}

struct KMeansResult {
    std::vector<int> assignment;
    Eigen::MatrixXd centroids;       // k x dim
    std::vector<double> inertia;     // after each assignment step
    int iterations = 0;
    bool converged = false;
};

namespace detail {

inline double squared_distance(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b, Eigen::Index j) {
    double s = 0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double d = a(i, c) - b(j, c);
        s += d * d;
    }
    return s;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Rows of `points` are the
/// vectors. Stops when assignments are stable or after `max_iterations`.
/// A cluster that empties is re-seeded with the point farthest from its
/// current centroid.
inline KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iterations = 300) {
    const Eigen::Index n = points.rows();
    if (k < 1) throw UsageError("k must be >= 1");
    if (n < k) throw DataError(fmt::format("k-means needs at least k={} vectors, got {}", k, n));

    Rng rng(seed);
    KMeansResult r;
    r.centroids.resize(k, points.cols());
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Eigen::Index first = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
    r.centroids.row(0) = points.row(first);
    for (int c = 1; c < k; ++c) {
        double total = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], detail::squared_distance(points, i, r.centroids, c - 1));
            total += d2[static_cast<std::size_t>(i)];
        }
        Eigen::Index pick = n - 1;
        if (total > 0) {
            double target = unit(rng) * total, acc = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2[static_cast<std::size_t>(i)];
                if (acc > target && d2[static_cast<std::size_t>(i)] > 0) {
                    pick = i;
                    break;
                }
            }
        } else {
            // Every remaining point coincides with a chosen centroid.
            pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
        }
        r.centroids.row(c) = points.row(pick);
    }

    r.assignment.assign(static_cast<std::size_t>(n), -1);
    for (r.iterations = 1; r.iterations <= max_iterations; ++r.iterations) {
        bool changed = false;
        double inertia = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = detail::squared_distance(points, i, r.centroids, 0);
            for (int c = 1; c < k; ++c) {
                const double d = detail::squared_distance(points, i, r.centroids, c);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (r.assignment[static_cast<std::size_t>(i)] != best) changed = true;
            r.assignment[static_cast<std::size_t>(i)] = best;
            inertia += best_d;
        }
        r.inertia.push_back(inertia);
        if (!changed) {
            r.converged = true;
            break;
        }

        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
        std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int c = r.assignment[static_cast<std::size_t>(i)];
            sums.row(c) += points.row(i);
            ++counts[static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                r.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
                continue;
            }
            Eigen::Index far = 0;
            double far_d = -1;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double d = detail::squared_distance(points, i, r.centroids, r.assignment[static_cast<std::size_t>(i)]);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            r.centroids.row(c) = points.row(far);
        }
    }
    r.iterations = std::min(r.iterations, max_iterations);
    return r;
}

struct QueryCluster {
    int cluster_id = 0;
    Eigen::VectorXd centroid;
    std::vector<std::string> query_ids;
    std::vector<std::string> exemplars;  // up to 5 queries nearest to the centroid
};

/// Groups `query_ids` (rows of `embeddings`) by the k-means assignment.
/// Exemplars are ordered by distance to the centroid, ties by query id.
inline std::vector<QueryCluster> make_clusters(const std::vector<std::string>& query_ids,
                                               const Eigen::MatrixXd& embeddings, const KMeansResult& km,
                                               std::size_t n_exemplars = 5) {
    std::vector<QueryCluster> out(static_cast<std::size_t>(km.centroids.rows()));
    std::vector<std::vector<std::pair<double, std::size_t>>> near(out.size());
    for (std::size_t c = 0; c < out.size(); ++c) {
        out[c].cluster_id = static_cast<int>(c);
        out[c].centroid = km.centroids.row(static_cast<Eigen::Index>(c)).transpose();
    }
    for (std::size_t i = 0; i < query_ids.size(); ++i) {
        const auto c = static_cast<std::size_t>(km.assignment[i]);
        out[c].query_ids.push_back(query_ids[i]);
        near[c].push_back({detail::squared_distance(embeddings, static_cast<Eigen::Index>(i), km.centroids,
                                                    static_cast<Eigen::Index>(c)),
                           i});
    }
    for (std::size_t c = 0; c < out.size(); ++c) {
        std::sort(near[c].begin(), near[c].end(), [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return query_ids[a.second] < query_ids[b.second];
        });
        for (std::size_t e = 0; e < std::min(n_exemplars, near[c].size()); ++e)
            out[c].exemplars.push_back(query_ids[near[c][e].second]);
    }
    return out;
}

struct NamedRanking {
    std::string name;
    const Ranking* ranking = nullptr;
};

struct ClusterRow {
    std::string cluster_id;  // "all" for the summary row
    std::size_t size = 0;
    std::vector<std::string> exemplars;
    std::vector<std::optional<double>> medians;  // one per ranking; empty when no judged query
};

/// Median first-relevant rank per cluster and ranking, plus an "all" row.
/// Only queries with at least one relevant judgment enter a median.
inline std::vector<ClusterRow> cluster_report(const std::vector<QueryCluster>& clusters,
                                              const std::vector<NamedRanking>& rankings, const Qrels& qrels) {
    auto medians_for = [&](const std::vector<std::string>& ids) {
        std::vector<std::string> judged;
        for (const auto& q : ids)
            if (qrels.relevant_count(q) > 0) judged.push_back(q);
        std::vector<std::optional<double>> out;
        for (const auto& r : rankings) {
            if (judged.empty()) out.emplace_back();
            else out.emplace_back(median_first_relevant(*r.ranking, qrels, judged));
        }
        return out;
    };
    std::vector<ClusterRow> rows;
    std::vector<std::string> all;
    for (const auto& c : clusters) {
        rows.push_back({std::to_string(c.cluster_id), c.query_ids.size(), c.exemplars, medians_for(c.query_ids)});
        all.insert(all.end(), c.query_ids.begin(), c.query_ids.end());
    }
    rows.push_back({"all", all.size(), {}, medians_for(all)});
    return rows;
}

/// Tab-separated table. Exemplars are joined with " | "; missing medians
/// print as NA.
inline std::string cluster_report_tsv(const std::vector<ClusterRow>& rows, const std::vector<NamedRanking>& rankings,
                                      const std::unordered_map<std::string, std::string>& query_text) {
    std::string out = "cluster_id\tsize\texemplar_queries";
    for (const auto& r : rankings) out += "\tmedian_rank_" + r.name;
    out += '\n';
    for (const auto& row : rows) {
        std::string ex;
        for (std::size_t i = 0; i < row.exemplars.size(); ++i) {
            auto it = query_text.find(row.exemplars[i]);
            std::string text = it == query_text.end() ? row.exemplars[i] : it->second;
            std::replace(text.begin(), text.end(), '\t', ' ');
            ex += (i ? " | " : "") + text;
        }
        out += fmt::format("{}\t{}\t{}", row.cluster_id, row.size, ex);
        for (const auto& m : row.medians) out += "\t" + (m ? format_double(*m) : std::string("NA"));
        out += '\n';
    }
    return out;
}

}  // namespace tk
