// The TK re-ranking model: parameters, pair scoring and the backward pass.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <fmt/core.h>

#include "tk/common.hpp"
#include "tk/contextualizer.hpp"
#include "tk/kernel_scorer.hpp"
#include "tk/parallel.hpp"
#include "tk/text.hpp"

namespace tk {

/// Architecture and input shape of a model; everything that is not learned.
struct ModelConfig {
    ContextConfig context;
    KernelBank kernels = KernelBank::evenly_spaced();
    std::size_t query_cap = kQueryCap;
    std::size_t doc_cap = kDocumentCap;

    void validate() const {
        context.validate();
        kernels.validate();
        if (query_cap == 0 || doc_cap == 0) throw UsageError("sequence caps must be >= 1");
    }

    bool operator==(const ModelConfig&) const = default;
};

enum class ParamGroup { EmbeddingContext, Other };

/// Every learnable tensor of the model.
template <class T>
struct TkParameters {
    Mat<T> embeddings;  // vocab x model_dim, row 0 is padding
    std::vector<LayerParameters<T>> layers;
    T alpha = T(0.5);
    ScoringHead<T> head;

    static TkParameters zeros_like(const TkParameters& p) {
        TkParameters z = p;
        z.set_zero();
        return z;
    }

    void set_zero() {
        embeddings.setZero();
        for (auto& l : layers) l.set_zero();
        alpha = T(0);
        head.set_zero();
    }

    bool operator==(const TkParameters& o) const {
        return embeddings == o.embeddings && layers == o.layers && alpha == o.alpha && head == o.head;
    }
};

/// Calls f(name, data, rows, cols, group) for every tensor; scalars are 1x1.
/// Works for const and non-const parameter sets.
template <class P, class F>
void for_each_tensor(P& p, F&& f) {
    f(std::string("embeddings"), p.embeddings.data(), p.embeddings.rows(), p.embeddings.cols(),
      ParamGroup::EmbeddingContext);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        auto& L = p.layers[l];
        const std::string pre = "layer" + std::to_string(l) + ".";
        auto mat = [&](const char* n, auto& m) {
            f(pre + n, m.data(), m.rows(), m.cols(), ParamGroup::EmbeddingContext);
        };
        mat("wq", L.wq);
        mat("wk", L.wk);
        mat("wv", L.wv);
        mat("wo", L.wo);
        mat("w1", L.w1);
        mat("b1", L.b1);
        mat("w2", L.w2);
        mat("b2", L.b2);
    }
    f(std::string("alpha"), &p.alpha, Eigen::Index{1}, Eigen::Index{1}, ParamGroup::Other);
    f(std::string("head.w_log"), p.head.w_log.data(), p.head.w_log.rows(), p.head.w_log.cols(), ParamGroup::Other);
    f(std::string("head.w_len"), p.head.w_len.data(), p.head.w_len.rows(), p.head.w_len.cols(), ParamGroup::Other);
    f(std::string("head.beta"), &p.head.beta, Eigen::Index{1}, Eigen::Index{1}, ParamGroup::Other);
    f(std::string("head.gamma"), &p.head.gamma, Eigen::Index{1}, Eigen::Index{1}, ParamGroup::Other);
}

/// Gradient buffer. Embedding rows are tracked so clearing is proportional
/// to the rows a batch touched.
template <class T>
struct Gradients {
    TkParameters<T> g;
    std::vector<int> touched;
    std::vector<char> mark;

    explicit Gradients(const TkParameters<T>& like) : g(TkParameters<T>::zeros_like(like)), mark(static_cast<std::size_t>(like.embeddings.rows()), 0) {}

    void clear() {
        for (int r : touched) {
            g.embeddings.row(r).setZero();
            mark[static_cast<std::size_t>(r)] = 0;
        }
        touched.clear();
        for (auto& l : g.layers) l.set_zero();
        g.alpha = T(0);
        g.head.set_zero();
    }

    template <class Row>
    void add_embedding_row(int id, const Row& row) {
        if (!mark[static_cast<std::size_t>(id)]) {
            mark[static_cast<std::size_t>(id)] = 1;
            touched.push_back(id);
        }
        g.embeddings.row(id) += row;
    }

    /// this += other, in a fixed order.
    void add(const Gradients& other) {
        for (int r : other.touched) add_embedding_row(r, other.g.embeddings.row(r));
        for (std::size_t l = 0; l < g.layers.size(); ++l) {
            auto& a = g.layers[l];
            const auto& b = other.g.layers[l];
            a.wq += b.wq; a.wk += b.wk; a.wv += b.wv; a.wo += b.wo;
            a.w1 += b.w1; a.b1 += b.b1; a.w2 += b.w2; a.b2 += b.b2;
        }
        g.alpha += other.g.alpha;
        g.head.w_log += other.g.head.w_log;
        g.head.w_len += other.g.head.w_len;
        g.head.beta += other.g.head.beta;
        g.head.gamma += other.g.head.gamma;
    }
};

/// A sequence pushed through the contextualizer with its cache retained.
template <class T>
struct SequenceForward {
    std::vector<int> ids;  // valid ids only
    ContextCache<T> cache;

    const Mat<T>& output() const { return cache.output; }
};

template <class T>
struct PairForward {
    CosineCache<T> cosine;
    ScoreBreakdown breakdown;
};

template <class T>
class TkModel {
public:
    TkModel() = default;

    TkModel(ModelConfig config, TkParameters<T> params) : config_(std::move(config)), params_(std::move(params)) {
        config_.validate();
        check_shapes();
        rebuild_positions();
    }

    /// Fresh model: fan-scaled uniform layer weights, alpha = 0.5, head
    /// weights U[-0.014, 0.014], beta = gamma = 1.
    static TkModel initialize(const ModelConfig& config, Mat<T> embeddings, std::uint64_t seed) {
        config.validate();
        Rng rng(seed);
        TkParameters<T> p;
        p.embeddings = std::move(embeddings);
        p.embeddings.row(kPadId).setZero();
        for (int l = 0; l < config.context.n_layers; ++l)
            p.layers.push_back(LayerParameters<T>::random(config.context, rng));
        p.alpha = T(0.5);
        p.head = ScoringHead<T>::zeros(config.kernels.size());
        Mat<T> w(2, static_cast<Eigen::Index>(config.kernels.size()));
        fill_uniform(w, 0.014, rng);
        p.head.w_log = w.row(0);
        p.head.w_len = w.row(1);
        p.head.beta = T(1);
        p.head.gamma = T(1);
        return TkModel(config, std::move(p));
    }

    static TkModel initialize(const ModelConfig& config, std::size_t vocab_size, std::uint64_t seed) {
        Rng rng(seed ^ 0x9E3779B97F4A7C15ULL);
        Mat<T> e(static_cast<Eigen::Index>(vocab_size), config.context.model_dim);
        fill_uniform(e, 0.05, rng);
        return initialize(config, std::move(e), seed);
    }

    const ModelConfig& config() const { return config_; }
    const TkParameters<T>& params() const { return params_; }
    /// Mutable access; callers that change shapes must not.
    TkParameters<T>& params() { return params_; }

    /// Embedding rows of the valid prefix of `seq`.
    Mat<T> embed(std::span<const int> ids) const {
        Mat<T> t(static_cast<Eigen::Index>(ids.size()), params_.embeddings.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const int id = ids[i];
            if (id < 0 || id >= params_.embeddings.rows())
                throw DataError(fmt::format("token id {} outside vocabulary of {}", id, params_.embeddings.rows()));
            t.row(static_cast<Eigen::Index>(i)) = params_.embeddings.row(id);
        }
        return t;
    }

    /// Contextualized valid rows of a sequence.
    Mat<T> contextualize_sequence(const TokenSequence& seq) const {
        return contextualize_valid<T>(embed(seq.valid()), pe_, params_.layers, params_.alpha, config_.context, nullptr);
    }

    SequenceForward<T> forward(const TokenSequence& seq) const {
        SequenceForward<T> f;
        f.ids.assign(seq.valid().begin(), seq.valid().end());
        contextualize_valid<T>(embed(f.ids), pe_, params_.layers, params_.alpha, config_.context, &f.cache);
        return f;
    }

    ScoreBreakdown score_contextualized(const Mat<T>& qhat, const Mat<T>& dhat) const {
        return score_match<T>(cosine_valid<T>(qhat, dhat), config_.kernels, params_.head);
    }

    ScoreBreakdown score_pair(const TokenSequence& q, const TokenSequence& d) const {
        return score_contextualized(contextualize_sequence(q), contextualize_sequence(d));
    }

    /// Scores many documents against one query; the query is contextualized
    /// once. Each score is independent of batch composition.
    std::vector<double> score_documents(const TokenSequence& q, std::span<const TokenSequence> docs,
                                        int threads = 1) const {
        const Mat<T> qhat = contextualize_sequence(q);
        std::vector<double> out(docs.size());
        parallel_for(docs.size(), threads, [&](std::size_t i) {
            out[i] = score_contextualized(qhat, contextualize_sequence(docs[i])).score;
        });
        return out;
    }

    PairForward<T> score_forward(const SequenceForward<T>& q, const SequenceForward<T>& d) const {
        PairForward<T> pf;
        cosine_valid<T>(q.output(), d.output(), &pf.cosine);
        pf.breakdown = score_match<T>(pf.cosine.m, config_.kernels, params_.head);
        return pf;
    }

    /// Backward of `d_score * s` for one pair. Head gradients go to `grads`;
    /// gradients w.r.t. the contextualized rows are added to dq and dd.
    void pair_backward(const PairForward<T>& pf, double d_score, Gradients<T>& grads, Mat<T>& dq, Mat<T>& dd) const {
        const Mat<T> dm = score_match_backward<T>(pf.cosine.m, pf.breakdown, config_.kernels, params_.head, d_score,
                                                  grads.g.head);
        Mat<T> gq, gd;
        cosine_backward<T>(pf.cosine, dm, gq, gd);
        if (dq.size() == 0) dq = Mat<T>::Zero(gq.rows(), gq.cols());
        if (dd.size() == 0) dd = Mat<T>::Zero(gd.rows(), gd.cols());
        dq += gq;
        dd += gd;
    }

    /// Backward through the contextualizer and the embedding lookup.
    void sequence_backward(const SequenceForward<T>& f, const Mat<T>& d_out, Gradients<T>& grads) const {
        const Mat<T> d_t = contextualize_backward<T>(f.cache, d_out, params_.layers, params_.alpha, config_.context,
                                                     grads.g.layers, grads.g.alpha);
        for (std::size_t i = 0; i < f.ids.size(); ++i)
            if (f.ids[i] != kPadId) grads.add_embedding_row(f.ids[i], d_t.row(static_cast<Eigen::Index>(i)));
    }

    void check_shapes() const {
        const auto& c = config_.context;
        if (params_.embeddings.cols() != c.model_dim)
            throw DataError(fmt::format("embedding width {} != model_dim {}", params_.embeddings.cols(), c.model_dim));
        if (params_.embeddings.rows() < 2) throw DataError("embedding matrix needs PAD and OOV rows");
        if (static_cast<int>(params_.layers.size()) != c.n_layers)
            throw DataError(fmt::format("{} layers stored, config says {}", params_.layers.size(), c.n_layers));
        const auto expect = LayerParameters<T>::zeros(c);
        for (const auto& l : params_.layers) {
            if (l.wq.rows() != expect.wq.rows() || l.wq.cols() != expect.wq.cols() || l.wo.rows() != expect.wo.rows() ||
                l.w1.cols() != expect.w1.cols() || l.w2.rows() != expect.w2.rows() || l.b1.size() != expect.b1.size() ||
                l.b2.size() != expect.b2.size() || l.wk.cols() != expect.wk.cols() || l.wv.cols() != expect.wv.cols())
                throw DataError("layer parameter shapes do not match the configuration");
        }
        const auto nk = static_cast<Eigen::Index>(config_.kernels.size());
        if (params_.head.w_log.size() != nk || params_.head.w_len.size() != nk)
            throw DataError("head weights do not match the kernel count");
    }

private:
    void rebuild_positions() {
        pe_ = positional_encoding<T>(std::max(config_.query_cap, config_.doc_cap),
                                     static_cast<std::size_t>(config_.context.model_dim));
    }

    ModelConfig config_;
    TkParameters<T> params_;
    Mat<T> pe_;
};

/// Converts a model between scalar types (e.g. float weights to double for
/// gradient checking).
template <class To, class From>
TkModel<To> cast_model(const TkModel<From>& m) {
    TkParameters<To> p;
    const auto& s = m.params();
    p.embeddings = s.embeddings.template cast<To>();
    for (const auto& l : s.layers) {
        LayerParameters<To> t;
        t.wq = l.wq.template cast<To>();
        t.wk = l.wk.template cast<To>();
        t.wv = l.wv.template cast<To>();
        t.wo = l.wo.template cast<To>();
        t.w1 = l.w1.template cast<To>();
        t.b1 = l.b1.template cast<To>();
        t.w2 = l.w2.template cast<To>();
        t.b2 = l.b2.template cast<To>();
        p.layers.push_back(std::move(t));
    }
    p.alpha = static_cast<To>(s.alpha);
    p.head.w_log = s.head.w_log.template cast<To>();
    p.head.w_len = s.head.w_len.template cast<To>();
    p.head.beta = static_cast<To>(s.head.beta);
    p.head.gamma = static_cast<To>(s.head.gamma);
    p.head.log_base = s.head.log_base;
    return TkModel<To>(m.config(), std::move(p));
}

}  // namespace tk
