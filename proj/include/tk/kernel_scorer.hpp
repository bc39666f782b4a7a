// Interaction scoring: cosine match matrix, RBF kernel pooling over the
// document dimension, then log- and length-normalized kernel features
// combined into one relevance score.
//
// Pooled soft-TF values and everything downstream of them are accumulated in
// double regardless of the model scalar type, so a breakdown re-sums to its
// totals well inside report tolerances.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <json.hpp>

#include "tk/common.hpp"

namespace tk {

/// Floor applied before the logarithm of a pooled kernel value.
inline constexpr double kLogFloor = 1e-10;

/// Gaussian kernel centers and shared width.
struct KernelBank {
    std::vector<double> mus;
    double sigma = 0.1;

    /// n evenly spaced centers over [-1, 1].
    static KernelBank evenly_spaced(int n = 11, double sigma = 0.1) {
        if (n < 2) throw UsageError("kernel bank needs at least two kernels");
        KernelBank b;
        b.sigma = sigma;
        for (int k = 0; k < n; ++k) b.mus.push_back((2.0 * k - (n - 1)) / (n - 1));
        return b;
    }

    std::size_t size() const { return mus.size(); }

    void validate() const {
        if (mus.empty()) throw UsageError("kernel bank is empty");
        if (!(sigma > 0)) throw UsageError("kernel sigma must be positive");
        for (std::size_t k = 1; k < mus.size(); ++k)
            if (!(mus[k - 1] < mus[k])) throw UsageError("kernel centers must be strictly increasing");
    }

    bool operator==(const KernelBank&) const = default;
};

/// Learned weights of the two normalization heads and their combination.
template <class T>
struct ScoringHead {
    RowVec<T> w_log;
    RowVec<T> w_len;
    T beta = T(1);
    T gamma = T(1);
    double log_base = 2.0;

    static ScoringHead zeros(std::size_t n_kernels) {
        ScoringHead h;
        h.w_log = RowVec<T>::Zero(static_cast<Eigen::Index>(n_kernels));
        h.w_len = RowVec<T>::Zero(static_cast<Eigen::Index>(n_kernels));
        h.beta = T(0);
        h.gamma = T(0);
        return h;
    }

    void set_zero() {
        w_log.setZero();
        w_len.setZero();
        beta = T(0);
        gamma = T(0);
    }

    bool operator==(const ScoringHead& o) const {
        return w_log == o.w_log && w_len == o.w_len && beta == o.beta && gamma == o.gamma &&
               log_base == o.log_base;
    }
};

/// Cosine similarities of contextualized query and document terms. Cells
/// outside the masks are zero and invalid.
template <class T>
struct MatchMatrix {
    Mat<T> values;
    std::size_t q_mask = 0;
    std::size_t d_mask = 0;

    bool valid(std::size_t i, std::size_t j) const { return i < q_mask && j < d_mask; }
};

/// Full set of intermediate scoring results for one query-document pair.
struct ScoreBreakdown {
    Eigen::MatrixXd per_kernel_soft_tf;  // n_kernels x q_len
    std::vector<double> s_log_per_kernel;
    std::vector<double> s_len_per_kernel;
    std::vector<double> weighted_log_contributions;
    double s_log = 0;
    double s_len = 0;
    double score = 0;
    std::size_t d_len_used = 0;
};

inline nlohmann::json to_json(const ScoreBreakdown& b) {
    nlohmann::json soft = nlohmann::json::array();
    for (Eigen::Index k = 0; k < b.per_kernel_soft_tf.rows(); ++k) {
        std::vector<double> row(static_cast<std::size_t>(b.per_kernel_soft_tf.cols()));
        for (Eigen::Index i = 0; i < b.per_kernel_soft_tf.cols(); ++i) row[static_cast<std::size_t>(i)] = b.per_kernel_soft_tf(k, i);
        soft.push_back(row);
    }
    return {{"per_kernel_soft_tf", soft},
            {"s_log_per_kernel", b.s_log_per_kernel},
            {"s_len_per_kernel", b.s_len_per_kernel},
            {"weighted_log_contributions", b.weighted_log_contributions},
            {"s_log", b.s_log},
            {"s_len", b.s_len},
            {"score", b.score},
            {"d_len_used", b.d_len_used}};
}

inline ScoreBreakdown breakdown_from_json(const nlohmann::json& j) {
    ScoreBreakdown b;
    const auto& soft = j.at("per_kernel_soft_tf");
    const auto rows = static_cast<Eigen::Index>(soft.size());
    const auto cols = rows > 0 ? static_cast<Eigen::Index>(soft[0].size()) : 0;
    b.per_kernel_soft_tf.resize(rows, cols);
    for (Eigen::Index k = 0; k < rows; ++k)
        for (Eigen::Index i = 0; i < cols; ++i) b.per_kernel_soft_tf(k, i) = soft[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)].get<double>();
    b.s_log_per_kernel = j.at("s_log_per_kernel").get<std::vector<double>>();
    b.s_len_per_kernel = j.at("s_len_per_kernel").get<std::vector<double>>();
    b.weighted_log_contributions = j.at("weighted_log_contributions").get<std::vector<double>>();
    b.s_log = j.at("s_log").get<double>();
    b.s_len = j.at("s_len").get<double>();
    b.score = j.at("score").get<double>();
    b.d_len_used = j.at("d_len_used").get<std::size_t>();
    return b;
}

/// Row-normalized inputs and the resulting valid match block.
template <class T>
struct CosineCache {
    Mat<T> qn, dn;
    Vec<T> q_norm, d_norm;
    Mat<T> m;
};

namespace detail {

// Plain sequential loops: the result for a pair of rows never depends on
// where the rows sit in their matrices.
template <class T>
T dot_rows(const Mat<T>& a, Eigen::Index i, const Mat<T>& b, Eigen::Index j) {
    const T* pa = a.data() + i * a.cols();
    const T* pb = b.data() + j * b.cols();
    T acc = 0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) acc += pa[c] * pb[c];
    return acc;
}

template <class T>
void normalize_rows(const Mat<T>& x, const char* side, Mat<T>& unit, Vec<T>& norms) {
    unit.resize(x.rows(), x.cols());
    norms.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const T n = std::sqrt(dot_rows(x, r, x, r));
        if (!(n > T(0))) throw DataError(fmt::format("{} position {} has a zero-norm representation", side, r));
        norms(r) = n;
        for (Eigen::Index c = 0; c < x.cols(); ++c) unit(r, c) = x(r, c) / n;
    }
}

}  // namespace detail

/// Cosine block between valid query rows and valid document rows.
template <class T>
Mat<T> cosine_valid(const Mat<T>& qhat, const Mat<T>& dhat, CosineCache<T>* cache = nullptr) {
    CosineCache<T> local;
    CosineCache<T>& c = cache ? *cache : local;
    detail::normalize_rows(qhat, "query", c.qn, c.q_norm);
    detail::normalize_rows(dhat, "document", c.dn, c.d_norm);
    c.m.resize(qhat.rows(), dhat.rows());
    for (Eigen::Index i = 0; i < c.m.rows(); ++i)
        for (Eigen::Index j = 0; j < c.m.cols(); ++j) c.m(i, j) = detail::dot_rows(c.qn, i, c.dn, j);
    return c.m;
}

/// M_ij = cos(q_i, d_j) for valid cells; zero elsewhere.
template <class T>
MatchMatrix<T> match_matrix(const Mat<T>& qhat, const Mat<T>& dhat, std::size_t q_mask, std::size_t d_mask) {
    if (q_mask == 0 || d_mask == 0) throw DataError("empty sequence");
    MatchMatrix<T> mm;
    mm.q_mask = q_mask;
    mm.d_mask = d_mask;
    mm.values = Mat<T>::Zero(qhat.rows(), dhat.rows());
    const Mat<T> q = qhat.topRows(static_cast<Eigen::Index>(q_mask));
    const Mat<T> d = dhat.topRows(static_cast<Eigen::Index>(d_mask));
    mm.values.topLeftCorner(static_cast<Eigen::Index>(q_mask), static_cast<Eigen::Index>(d_mask)) = cosine_valid<T>(q, d);
    return mm;
}

template <class T>
T kernel_value(T m, double mu, double sigma) {
    const T diff = m - static_cast<T>(mu);
    return std::exp(-(diff * diff) / static_cast<T>(2.0 * sigma * sigma));
}

/// One q_len x d_len activation matrix per kernel; invalid cells are 0.
template <class T>
std::vector<Mat<T>> kernel_transform(const MatchMatrix<T>& m, const KernelBank& bank) {
    std::vector<Mat<T>> out;
    out.reserve(bank.size());
    for (double mu : bank.mus) {
        Mat<T> k = Mat<T>::Zero(m.values.rows(), m.values.cols());
        for (std::size_t i = 0; i < m.q_mask; ++i)
            for (std::size_t j = 0; j < m.d_mask; ++j)
                k(i, j) = kernel_value(m.values(i, j), mu, bank.sigma);
        out.push_back(std::move(k));
    }
    return out;
}

/// K^k_i = sum over valid document positions j of K^k_ij.
template <class T>
Eigen::MatrixXd pool_document(const std::vector<Mat<T>>& kernels, std::size_t d_mask) {
    if (kernels.empty()) return {};
    const Eigen::Index q_len = kernels[0].rows();
    Eigen::MatrixXd soft = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kernels.size()), q_len);
    for (std::size_t k = 0; k < kernels.size(); ++k)
        for (Eigen::Index i = 0; i < q_len; ++i) {
            double acc = 0;
            for (std::size_t j = 0; j < d_mask; ++j) acc += static_cast<double>(kernels[k](i, static_cast<Eigen::Index>(j)));
            soft(static_cast<Eigen::Index>(k), i) = acc;
        }
    return soft;
}

struct NormalizedKernels {
    std::vector<double> per_kernel;
    double total = 0;
};

/// s^k_log = sum_i log_b(max(K^k_i, 1e-10)) over valid query positions;
/// s_log = sum_k s^k_log * W_log[k].
template <class T>
NormalizedKernels log_norm(const Eigen::MatrixXd& soft_tf, std::size_t q_mask, const ScoringHead<T>& head) {
    NormalizedKernels r;
    const double inv_ln_base = 1.0 / std::log(head.log_base);
    for (Eigen::Index k = 0; k < soft_tf.rows(); ++k) {
        double acc = 0;
        for (std::size_t i = 0; i < q_mask; ++i)
            acc += std::log(std::max(soft_tf(k, static_cast<Eigen::Index>(i)), kLogFloor)) * inv_ln_base;
        r.per_kernel.push_back(acc);
        r.total += acc * static_cast<double>(head.w_log(k));
    }
    return r;
}

/// s^k_len = sum_i K^k_i / d_len over valid query positions;
/// s_len = sum_k s^k_len * W_len[k].
template <class T>
NormalizedKernels len_norm(const Eigen::MatrixXd& soft_tf, std::size_t q_mask, std::size_t d_len,
                           const ScoringHead<T>& head) {
    if (d_len == 0) throw DataError("document length must be >= 1");
    NormalizedKernels r;
    const double inv_len = 1.0 / static_cast<double>(d_len);
    for (Eigen::Index k = 0; k < soft_tf.rows(); ++k) {
        double acc = 0;
        for (std::size_t i = 0; i < q_mask; ++i) acc += soft_tf(k, static_cast<Eigen::Index>(i)) * inv_len;
        r.per_kernel.push_back(acc);
        r.total += acc * static_cast<double>(head.w_len(k));
    }
    return r;
}

/// Kernel pooling, both normalizations and the final combination applied to
/// a valid (q_len x d_len) match block.
template <class T>
ScoreBreakdown score_match(const Mat<T>& m, const KernelBank& bank, const ScoringHead<T>& head) {
    const auto q_len = static_cast<std::size_t>(m.rows());
    const auto d_len = static_cast<std::size_t>(m.cols());
    if (q_len == 0 || d_len == 0) throw DataError("empty sequence");
    ScoreBreakdown b;
    b.d_len_used = d_len;
    b.per_kernel_soft_tf = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(bank.size()), m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (std::size_t k = 0; k < bank.size(); ++k) {
            double acc = 0;
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                acc += static_cast<double>(kernel_value(m(i, j), bank.mus[k], bank.sigma));
            b.per_kernel_soft_tf(static_cast<Eigen::Index>(k), i) = acc;
        }
    auto lg = log_norm(b.per_kernel_soft_tf, q_len, head);
    auto ln = len_norm(b.per_kernel_soft_tf, q_len, d_len, head);
    b.s_log_per_kernel = std::move(lg.per_kernel);
    b.s_len_per_kernel = std::move(ln.per_kernel);
    b.weighted_log_contributions.resize(bank.size());
    for (std::size_t k = 0; k < bank.size(); ++k)
        b.weighted_log_contributions[k] = b.s_log_per_kernel[k] * static_cast<double>(head.w_log(static_cast<Eigen::Index>(k)));
    b.s_log = lg.total;
    b.s_len = ln.total;
    b.score = combine_score(static_cast<double>(head.beta), b.s_log, static_cast<double>(head.gamma), b.s_len);
    return b;
}

/// Gradient of `d_score * score` with respect to the match block; head
/// gradients are accumulated into `grad`.
template <class T>
Mat<T> score_match_backward(const Mat<T>& m, const ScoreBreakdown& b, const KernelBank& bank,
                            const ScoringHead<T>& head, double d_score, ScoringHead<T>& grad) {
    const Eigen::Index q_len = m.rows();
    const Eigen::Index d_len = m.cols();
    const auto nk = static_cast<Eigen::Index>(bank.size());
    grad.beta += static_cast<T>(d_score * b.s_log);
    grad.gamma += static_cast<T>(d_score * b.s_len);
    const double d_slog = d_score * static_cast<double>(head.beta);
    const double d_slen = d_score * static_cast<double>(head.gamma);
    const double inv_ln_base = 1.0 / std::log(head.log_base);
    Eigen::MatrixXd d_soft(nk, q_len);
    for (Eigen::Index k = 0; k < nk; ++k) {
        grad.w_log(k) += static_cast<T>(d_slog * b.s_log_per_kernel[static_cast<std::size_t>(k)]);
        grad.w_len(k) += static_cast<T>(d_slen * b.s_len_per_kernel[static_cast<std::size_t>(k)]);
        const double d_log_k = d_slog * static_cast<double>(head.w_log(k));
        const double d_len_k = d_slen * static_cast<double>(head.w_len(k)) / static_cast<double>(d_len);
        for (Eigen::Index i = 0; i < q_len; ++i) {
            const double s = b.per_kernel_soft_tf(k, i);
            d_soft(k, i) = (s > kLogFloor ? d_log_k * inv_ln_base / s : 0.0) + d_len_k;
        }
    }
    Mat<T> dm(q_len, d_len);
    const double inv_var = 1.0 / (bank.sigma * bank.sigma);
    for (Eigen::Index i = 0; i < q_len; ++i)
        for (Eigen::Index j = 0; j < d_len; ++j) {
            double acc = 0;
            for (Eigen::Index k = 0; k < nk; ++k) {
                const double mu = bank.mus[static_cast<std::size_t>(k)];
                const double kv = static_cast<double>(kernel_value(m(i, j), mu, bank.sigma));
                acc += d_soft(k, i) * kv * (-(static_cast<double>(m(i, j)) - mu) * inv_var);
            }
            dm(i, j) = static_cast<T>(acc);
        }
    return dm;
}

/// Backward of cosine_valid: gradients with respect to the unnormalized
/// query and document rows.
template <class T>
void cosine_backward(const CosineCache<T>& c, const Mat<T>& dm, Mat<T>& dq, Mat<T>& dd) {
    const Mat<T> dqn = dm * c.dn;
    const Mat<T> ddn = dm.transpose() * c.qn;
    dq.resize(c.qn.rows(), c.qn.cols());
    dd.resize(c.dn.rows(), c.dn.cols());
    for (Eigen::Index i = 0; i < dq.rows(); ++i) {
        const T proj = dqn.row(i).dot(c.qn.row(i));
        dq.row(i) = (dqn.row(i) - proj * c.qn.row(i)) / c.q_norm(i);
    }
    for (Eigen::Index j = 0; j < dd.rows(); ++j) {
        const T proj = ddn.row(j).dot(c.dn.row(j));
        dd.row(j) = (ddn.row(j) - proj * c.dn.row(j)) / c.d_norm(j);
    }
}

}  // namespace tk
