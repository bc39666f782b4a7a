// Hybrid contextualization: embeddings fused with a sinusoidal position
// signal, passed through a small stack of Transformer layers and mixed back
// with the raw embeddings by a learned alpha.
//
// Layer order follows the TK formulation: the feed-forward block runs first
// and its output feeds both the self-attention and the residual,
//   layer(p) = MultiHead(FF(p)) + FF(p).
// There is no layer normalization and no dropout.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <fmt/core.h>

#include "tk/common.hpp"

namespace tk {

struct ContextConfig {
    int n_layers = 2;
    int n_heads = 16;
    int head_dim = 32;
    int ff_dim = 100;
    int model_dim = 300;

    int concat_dim() const { return n_heads * head_dim; }

    void validate() const {
        if (n_layers < 1) throw UsageError("n_layers must be >= 1");
        if (n_heads < 1 || head_dim < 1 || ff_dim < 1) throw UsageError("attention/ff sizes must be >= 1");
        if (model_dim < 2 || model_dim % 2 != 0) throw UsageError("model_dim must be even and >= 2");
    }

    bool operator==(const ContextConfig&) const = default;
};

/// Weights of one Transformer layer. Heads are stored side by side: the
/// columns [h*head_dim, (h+1)*head_dim) of wq/wk/wv belong to head h.
template <class T>
struct LayerParameters {
    Mat<T> wq, wk, wv;  // model_dim x concat_dim
    Mat<T> wo;          // concat_dim x model_dim
    Mat<T> w1;          // model_dim x ff_dim
    RowVec<T> b1;       // ff_dim
    Mat<T> w2;          // ff_dim x model_dim
    RowVec<T> b2;       // model_dim

    static LayerParameters zeros(const ContextConfig& c) {
        LayerParameters p;
        p.wq = Mat<T>::Zero(c.model_dim, c.concat_dim());
        p.wk = Mat<T>::Zero(c.model_dim, c.concat_dim());
        p.wv = Mat<T>::Zero(c.model_dim, c.concat_dim());
        p.wo = Mat<T>::Zero(c.concat_dim(), c.model_dim);
        p.w1 = Mat<T>::Zero(c.model_dim, c.ff_dim);
        p.b1 = RowVec<T>::Zero(c.ff_dim);
        p.w2 = Mat<T>::Zero(c.ff_dim, c.model_dim);
        p.b2 = RowVec<T>::Zero(c.model_dim);
        return p;
    }

    static LayerParameters random(const ContextConfig& c, Rng& rng) {
        auto p = zeros(c);
        for (Mat<T>* m : {&p.wq, &p.wk, &p.wv, &p.wo, &p.w1, &p.w2})
            fill_uniform(*m, fan_limit(m->rows(), m->cols()), rng);
        return p;
    }

    void set_zero() {
        wq.setZero(); wk.setZero(); wv.setZero(); wo.setZero();
        w1.setZero(); b1.setZero(); w2.setZero(); b2.setZero();
    }

    bool operator==(const LayerParameters& o) const {
        return wq == o.wq && wk == o.wk && wv == o.wv && wo == o.wo && w1 == o.w1 && b1 == o.b1 &&
               w2 == o.w2 && b2 == o.b2;
    }
};

/// Sinusoidal encoding; (pos, 2i) = sin(pos / 10000^(2i/dim)),
/// (pos, 2i+1) = cos(same angle).
template <class T>
Mat<T> positional_encoding(std::size_t seq_cap, std::size_t dim) {
    if (dim % 2 != 0) throw UsageError("positional encoding needs an even dimension");
    Mat<T> pe(static_cast<Eigen::Index>(seq_cap), static_cast<Eigen::Index>(dim));
    for (std::size_t pos = 0; pos < seq_cap; ++pos) {
        for (std::size_t i = 0; i < dim / 2; ++i) {
            const double angle =
                static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
            pe(pos, 2 * i) = static_cast<T>(std::sin(angle));
            pe(pos, 2 * i + 1) = static_cast<T>(std::cos(angle));
        }
    }
    return pe;
}

/// Intermediate values of one layer, kept for the backward pass.
template <class T>
struct LayerCache {
    Mat<T> x;     // layer input
    Mat<T> hpre;  // x W1 + b1
    Mat<T> u;     // FF(x)
    Mat<T> q, k, v;
    std::vector<Mat<T>> attn;  // per head, rows sum to 1
    Mat<T> o;                  // concatenated head outputs
};

namespace detail {

inline void require_nonempty(std::size_t mask) {
    if (mask == 0) throw DataError("empty sequence");
}

template <class T>
void softmax_rows(Mat<T>& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        auto row = s.row(r);
        const T mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
    }
}

template <class T>
Mat<T> feed_forward_valid(const Mat<T>& x, const LayerParameters<T>& w, Mat<T>* hpre_out) {
    Mat<T> hpre = x * w.w1;
    hpre.rowwise() += w.b1;
    Mat<T> u = hpre.cwiseMax(T(0)) * w.w2;
    u.rowwise() += w.b2;
    if (hpre_out) *hpre_out = std::move(hpre);
    return u;
}

template <class T>
Mat<T> attention_valid(const Mat<T>& u, const LayerParameters<T>& w, const ContextConfig& cfg, LayerCache<T>* cache) {
    const Eigen::Index n = u.rows();
    const Eigen::Index dk = cfg.head_dim;
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));
    Mat<T> q = u * w.wq;
    Mat<T> k = u * w.wk;
    Mat<T> v = u * w.wv;
    Mat<T> o(n, cfg.concat_dim());
    if (cache) cache->attn.resize(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
        const Eigen::Index c0 = h * dk;
        Mat<T> s = (q.middleCols(c0, dk) * k.middleCols(c0, dk).transpose()) * scale;
        softmax_rows(s);
        o.middleCols(c0, dk).noalias() = s * v.middleCols(c0, dk);
        if (cache) cache->attn[static_cast<std::size_t>(h)] = std::move(s);
    }
    Mat<T> out = o * w.wo;
    if (cache) {
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->o = std::move(o);
    }
    return out;
}

template <class T>
Mat<T> layer_valid(const Mat<T>& x, const LayerParameters<T>& w, const ContextConfig& cfg, LayerCache<T>* cache) {
    Mat<T> hpre;
    Mat<T> u = feed_forward_valid(x, w, cache ? &hpre : nullptr);
    Mat<T> y = attention_valid(u, w, cfg, cache);
    y += u;
    if (cache) {
        cache->x = x;
        cache->hpre = std::move(hpre);
        cache->u = std::move(u);
    }
    return y;
}

template <class T>
Mat<T> pad_rows(const Mat<T>& valid, Eigen::Index total_rows) {
    Mat<T> out = Mat<T>::Zero(total_rows, valid.cols());
    out.topRows(valid.rows()) = valid;
    return out;
}

// Backward of one layer: accumulates weight gradients into `g` and returns
// the gradient with respect to the layer input.
template <class T>
Mat<T> layer_backward(const LayerCache<T>& c, const Mat<T>& dy, const LayerParameters<T>& w,
                      const ContextConfig& cfg, LayerParameters<T>& g) {
    const Eigen::Index dk = cfg.head_dim;
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));

    Mat<T> du = dy;
    g.wo.noalias() += c.o.transpose() * dy;
    const Mat<T> d_o = dy * w.wo.transpose();

    Mat<T> dq(c.q.rows(), c.q.cols());
    Mat<T> dkm(c.k.rows(), c.k.cols());
    Mat<T> dv(c.v.rows(), c.v.cols());
    for (int h = 0; h < cfg.n_heads; ++h) {
        const Eigen::Index c0 = h * dk;
        const Mat<T>& a = c.attn[static_cast<std::size_t>(h)];
        const auto doh = d_o.middleCols(c0, dk);
        Mat<T> da = doh * c.v.middleCols(c0, dk).transpose();
        dv.middleCols(c0, dk).noalias() = a.transpose() * doh;
        const Vec<T> row_dot = (da.array() * a.array()).rowwise().sum();
        Mat<T> ds = (a.array() * (da.colwise() - row_dot).array()).matrix();
        dq.middleCols(c0, dk).noalias() = (ds * c.k.middleCols(c0, dk)) * scale;
        dkm.middleCols(c0, dk).noalias() = (ds.transpose() * c.q.middleCols(c0, dk)) * scale;
    }
    g.wq.noalias() += c.u.transpose() * dq;
    g.wk.noalias() += c.u.transpose() * dkm;
    g.wv.noalias() += c.u.transpose() * dv;
    du.noalias() += dq * w.wq.transpose();
    du.noalias() += dkm * w.wk.transpose();
    du.noalias() += dv * w.wv.transpose();

    const Mat<T> hr = c.hpre.cwiseMax(T(0));
    g.w2.noalias() += hr.transpose() * du;
    g.b2 += du.colwise().sum();
    Mat<T> dh = du * w.w2.transpose();
    dh = (c.hpre.array() > T(0)).select(dh.array(), T(0)).matrix();
    g.w1.noalias() += c.x.transpose() * dh;
    g.b1 += dh.colwise().sum();
    return dh * w.w1.transpose();
}

}  // namespace detail

/// FF(x) = relu(x W1 + b1) W2 + b2 applied to every row.
template <class T>
Mat<T> feed_forward(const Mat<T>& p, const LayerParameters<T>& w) {
    return detail::feed_forward_valid<T>(p, w, nullptr);
}

/// Scaled dot-product self-attention over the first `mask` rows of `p`.
/// Padding rows neither attend nor are attended to, and their output is 0.
template <class T>
Mat<T> multi_head_attention(const Mat<T>& p, std::size_t mask, const LayerParameters<T>& w, const ContextConfig& cfg) {
    detail::require_nonempty(mask);
    const Mat<T> valid = p.topRows(static_cast<Eigen::Index>(mask));
    return detail::pad_rows(detail::attention_valid<T>(valid, w, cfg, nullptr), p.rows());
}

template <class T>
Mat<T> transformer_layer(const Mat<T>& p, std::size_t mask, const LayerParameters<T>& w, const ContextConfig& cfg) {
    detail::require_nonempty(mask);
    const Mat<T> valid = p.topRows(static_cast<Eigen::Index>(mask));
    return detail::pad_rows(detail::layer_valid<T>(valid, w, cfg, nullptr), p.rows());
}

/// Everything the contextualizer computed for one sequence.
template <class T>
struct ContextCache {
    Mat<T> embedded;  // raw embedding rows t (valid rows only)
    std::vector<LayerCache<T>> layers;
    Mat<T> context;  // output of the layer stack
    Mat<T> output;   // alpha * t + (1 - alpha) * context
};

/// Contextualizes the valid rows `t` (already truncated to the mask).
/// Fills `cache` when given.
template <class T>
Mat<T> contextualize_valid(const Mat<T>& t, const Mat<T>& pe, std::span<const LayerParameters<T>> layers, T alpha,
                           const ContextConfig& cfg, ContextCache<T>* cache) {
    detail::require_nonempty(static_cast<std::size_t>(t.rows()));
    if (t.rows() > pe.rows())
        throw DataError(fmt::format("sequence of {} rows exceeds positional table of {}", t.rows(), pe.rows()));
    Mat<T> x = t + pe.topRows(t.rows());
    if (cache) cache->layers.resize(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l)
        x = detail::layer_valid<T>(x, layers[l], cfg, cache ? &cache->layers[l] : nullptr);
    Mat<T> out = t * alpha + x * (T(1) - alpha);
    if (cache) {
        cache->embedded = t;
        cache->context = std::move(x);
        cache->output = out;
    }
    return out;
}

/// t-hat_i = alpha * t_i + (1 - alpha) * context(t)_i for the first `mask`
/// rows of `t`; padded rows come back as zero vectors.
template <class T>
Mat<T> contextualize(const Mat<T>& t, std::size_t mask, const ContextConfig& cfg,
                     std::span<const LayerParameters<T>> layers, T alpha) {
    detail::require_nonempty(mask);
    const auto pe = positional_encoding<T>(static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(cfg.model_dim));
    const Mat<T> valid = t.topRows(static_cast<Eigen::Index>(mask));
    return detail::pad_rows(contextualize_valid<T>(valid, pe, layers, alpha, cfg, nullptr), t.rows());
}

/// Backward through contextualize_valid. Accumulates layer gradients into
/// `layer_grads` and alpha's gradient into `d_alpha`; returns the gradient
/// with respect to the raw embedding rows.
template <class T>
Mat<T> contextualize_backward(const ContextCache<T>& cache, const Mat<T>& d_out,
                              std::span<const LayerParameters<T>> layers, T alpha, const ContextConfig& cfg,
                              std::span<LayerParameters<T>> layer_grads, T& d_alpha) {
    d_alpha += (d_out.array() * (cache.embedded - cache.context).array()).sum();
    Mat<T> d_t = d_out * alpha;
    Mat<T> dx = d_out * (T(1) - alpha);
    for (std::size_t l = layers.size(); l-- > 0;)
        dx = detail::layer_backward<T>(cache.layers[l], dx, layers[l], cfg, layer_grads[l]);
    d_t += dx;  // the positional table is constant
    return d_t;
}

}  // namespace tk
