// Pairwise hinge-loss training with grouped Adam learning rates and early
// stopping on validation MRR@10.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "tk/evaluation.hpp"
#include "tk/model.hpp"
#include "tk/parallel.hpp"
#include "tk/pipeline.hpp"
#include "tk/trec_io.hpp"

namespace tk {

inline double hinge_loss(double s_pos, double s_neg, double margin = 1.0) {
    return std::max(0.0, margin - s_pos + s_neg);
}

struct OptimizerGroups {
    double lr_embedding_context = 1e-4;
    double lr_other = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    double lr(ParamGroup g) const { return g == ParamGroup::EmbeddingContext ? lr_embedding_context : lr_other; }
};

/// Adam with one learning rate per parameter group.
template <class T>
class Adam {
public:
    Adam(const TkParameters<T>& like, OptimizerGroups groups)
        : groups_(groups), m_(TkParameters<T>::zeros_like(like)), v_(TkParameters<T>::zeros_like(like)) {
        if (groups.lr_embedding_context < 0 || groups.lr_other < 0) throw UsageError("learning rates must be >= 0");
    }

    void step(TkParameters<T>& params, const TkParameters<T>& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(groups_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(groups_.beta2, static_cast<double>(t_));
        std::vector<T*> m_ptrs, v_ptrs;
        std::vector<const T*> g_ptrs;
        for_each_tensor(m_, [&](const std::string&, T* d, Eigen::Index, Eigen::Index, ParamGroup) { m_ptrs.push_back(d); });
        for_each_tensor(v_, [&](const std::string&, T* d, Eigen::Index, Eigen::Index, ParamGroup) { v_ptrs.push_back(d); });
        for_each_tensor(grads, [&](const std::string&, const T* d, Eigen::Index, Eigen::Index, ParamGroup) { g_ptrs.push_back(d); });
        std::size_t idx = 0;
        for_each_tensor(params, [&](const std::string&, T* p, Eigen::Index rows, Eigen::Index cols, ParamGroup group) {
            const double lr = groups_.lr(group);
            T* m = m_ptrs[idx];
            T* v = v_ptrs[idx];
            const T* g = g_ptrs[idx];
            ++idx;
            const T b1 = static_cast<T>(groups_.beta1), b2 = static_cast<T>(groups_.beta2);
            const T step_scale = static_cast<T>(lr / bc1);
            const T inv_bc2 = static_cast<T>(1.0 / bc2);
            const T eps = static_cast<T>(groups_.eps);
            for (Eigen::Index i = 0; i < rows * cols; ++i) {
                m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                p[i] -= step_scale * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
            }
        });
        params.embeddings.row(kPadId).setZero();
    }

    std::int64_t steps() const { return t_; }
    const OptimizerGroups& groups() const { return groups_; }

private:
    OptimizerGroups groups_;
    TkParameters<T> m_, v_;
    std::int64_t t_ = 0;
};

struct TrainConfig {
    double margin = 1.0;
    std::size_t batch_size = 64;
    std::size_t validate_every = 4096;  // steps
    int patience = 8;
    int max_epochs = 1;
    std::uint64_t seed = 42;
    int threads = 1;
    OptimizerGroups optimizer;
};

struct ValidationRecord {
    std::size_t step = 0;
    int epoch = 0;
    double mrr = 0;
    double alpha = 0;
};

template <class T>
struct TrainState {
    int epoch = 0;
    std::size_t step = 0;
    double best_mrr = -std::numeric_limits<double>::infinity();
    std::size_t best_step = 0;
    int patience_counter = 0;
    bool early_stopped = false;
    TkParameters<T> best;
    std::vector<ValidationRecord> history;
    std::vector<double> losses;
};

/// Owns the optimizer and per-chunk gradient buffers. A batch is split into
/// a fixed number of chunks independent of the thread count; chunk results
/// are summed in chunk order, so training replays bit for bit.
template <class T>
class Trainer {
public:
    static constexpr std::size_t kChunks = 8;

    Trainer(TkModel<T>& model, const EncodedCollection& encoded, TrainConfig config)
        : model_(model), encoded_(encoded), config_(config), adam_(model.params(), config.optimizer) {
        if (config_.batch_size == 0) throw UsageError("batch size must be >= 1");
        if (!(config_.margin > 0)) throw UsageError("margin must be positive");
        for (std::size_t c = 0; c < kChunks; ++c) chunks_.emplace_back(model.params());
    }

    /// One optimizer step on `batch`; returns the mean hinge loss.
    double train_step(std::span<const TrainTriple> batch) {
        if (batch.empty()) throw UsageError("empty batch");
        const std::size_t n_chunks = std::min(kChunks, batch.size());
        std::vector<double> chunk_loss(n_chunks, 0.0);
        const double weight = 1.0 / static_cast<double>(batch.size());
        parallel_for(n_chunks, config_.threads, [&](std::size_t c) {
            auto& g = chunks_[c];
            g.clear();
            const std::size_t lo = c * batch.size() / n_chunks;
            const std::size_t hi = (c + 1) * batch.size() / n_chunks;
            for (std::size_t i = lo; i < hi; ++i) chunk_loss[c] += accumulate_triple(batch[i], weight, g);
        });
        for (std::size_t c = 1; c < n_chunks; ++c) chunks_[0].add(chunks_[c]);
        double loss = 0;
        for (double l : chunk_loss) loss += l;
        loss *= weight;
        adam_.step(model_.params(), chunks_[0].g);
        return loss;
    }

    /// Iterates epochs over `triples` (shuffled once with the seed),
    /// validating every `validate_every` steps and at the end of the stream.
    /// Stops after `patience` validations without strict improvement and
    /// restores the best parameters.
    TrainState<T> train(std::vector<TrainTriple> triples, const std::function<double(const TkModel<T>&)>& validate) {
        if (triples.empty()) throw DataError("empty training triple stream");
        Rng rng(config_.seed);
        std::shuffle(triples.begin(), triples.end(), rng);
        TrainState<T> state;
        state.best = model_.params();
        bool validated_last = false;
        auto run_validation = [&] {
            const double mrr = validate(model_);
            state.history.push_back({state.step, state.epoch, mrr, static_cast<double>(model_.params().alpha)});
            validated_last = true;
            if (mrr > state.best_mrr) {
                state.best_mrr = mrr;
                state.best_step = state.step;
                state.best = model_.params();
                state.patience_counter = 0;
            } else {
                ++state.patience_counter;
            }
            return state.patience_counter >= config_.patience;
        };
        for (state.epoch = 1; state.epoch <= config_.max_epochs; ++state.epoch) {
            for (std::size_t start = 0; start < triples.size(); start += config_.batch_size) {
                const std::size_t end = std::min(triples.size(), start + config_.batch_size);
                state.losses.push_back(train_step(std::span<const TrainTriple>(triples).subspan(start, end - start)));
                ++state.step;
                validated_last = false;
                if (state.step % config_.validate_every == 0 && run_validation()) {
                    state.early_stopped = true;
                    break;
                }
            }
            if (state.early_stopped) break;
        }
        if (state.epoch > config_.max_epochs) state.epoch = config_.max_epochs;
        if (!state.early_stopped && !validated_last) run_validation();
        model_.params() = state.best;
        return state;
    }

    Adam<T>& optimizer() { return adam_; }

    /// Adds `weight` times the hinge-loss gradient of one triple to `g` and
    /// returns the unweighted loss.
    double accumulate_triple(const TrainTriple& t, double weight, Gradients<T>& g) const {
        const auto q = model_.forward(encoded_.query(t.query_id));
        const auto pos = model_.forward(encoded_.document(t.positive_doc_id));
        const auto neg = model_.forward(encoded_.document(t.negative_doc_id));
        const auto pf_pos = model_.score_forward(q, pos);
        const auto pf_neg = model_.score_forward(q, neg);
        const double loss = hinge_loss(pf_pos.breakdown.score, pf_neg.breakdown.score, config_.margin);
        if (!std::isfinite(loss))
            throw TrainingError(fmt::format("non-finite loss for triple ({}, {}, {})", t.query_id, t.positive_doc_id,
                                            t.negative_doc_id));
        if (loss > 0) {
            Mat<T> dq, dpos, dneg;
            model_.pair_backward(pf_pos, -weight, g, dq, dpos);
            model_.pair_backward(pf_neg, weight, g, dq, dneg);
            model_.sequence_backward(q, dq, g);
            model_.sequence_backward(pos, dpos, g);
            model_.sequence_backward(neg, dneg, g);
        }
        return loss;
    }

private:
    TkModel<T>& model_;
    const EncodedCollection& encoded_;
    TrainConfig config_;
    Adam<T> adam_;
    std::vector<Gradients<T>> chunks_;
};

/// Fraction of triples whose positive outscores the negative.
template <class T>
double pairwise_accuracy(const TkModel<T>& model, const EncodedCollection& encoded,
                         std::span<const TrainTriple> triples) {
    if (triples.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& t : triples) {
        const auto& q = encoded.query(t.query_id);
        const double sp = model.score_pair(q, encoded.document(t.positive_doc_id)).score;
        const double sn = model.score_pair(q, encoded.document(t.negative_doc_id)).score;
        if (sp > sn) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(triples.size());
}

/// Validation data for early stopping.
struct ValidationSet {
    Ranking first_stage;
    Qrels qrels;
    std::size_t depth = 1000;
};

template <class T>
std::function<double(const TkModel<T>&)> mrr_validator(const ValidationSet& v, const EncodedCollection& encoded,
                                                       int threads = 1) {
    return [&v, &encoded, threads](const TkModel<T>& model) {
        return mrr_at_k(rerank(v.first_stage, v.depth, make_model_scorer(model, encoded, threads)), v.qrels, 10);
    };
}

}  // namespace tk
