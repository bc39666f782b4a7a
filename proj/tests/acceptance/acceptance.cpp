// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails. Each criterion is self-contained and collects every
// violated check rather than stopping at the first.
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/instances.hpp"
#include "support/oracles.hpp"

using namespace tk;

namespace {

const std::string kCli = TK_CLI_PATH;

class Checks {
public:
    void expect(bool ok, const std::string& what) {
        ++count_;
        if (!ok && failures_.size() < 8) failures_.push_back(what);
        if (!ok) ++failed_;
    }
    void near(double got, double want, double tol, const std::string& what) {
        expect(std::abs(got - want) <= tol, fmt::format("{}: got {} want {} (tol {})", what, got, want, tol));
    }
    void note(std::string s) { notes_.push_back(std::move(s)); }

    bool ok() const { return failed_ == 0; }
    std::size_t count() const { return count_; }
    std::size_t failed() const { return failed_; }
    const std::vector<std::string>& failures() const { return failures_; }
    const std::vector<std::string>& notes() const { return notes_; }

private:
    std::size_t count_ = 0, failed_ = 0;
    std::vector<std::string> failures_, notes_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1. gradients -------------------------------------------------------

void gradients(Checks& c) {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0;
    std::size_t checked = 0;
    for (std::uint64_t seed = 101; seed < 109; ++seed) {
        for (int kind = 0; kind < 2; ++kind) {
            gradcheck::MiniProblem p(seed);
            const auto r = kind == 0 ? gradcheck::check_score(p) : gradcheck::check_hinge(p);
            checked += r.checked;
            worst = std::max(worst, r.worst_rel);
            for (const auto& f : r.failures)
                c.expect(false, fmt::format("seed {} {} {}[{}]: analytic {} numeric {} rel {:.2e}", seed,
                                            kind ? "hinge" : "score", f.tensor, f.index, f.analytic, f.numeric, f.rel));
            c.expect(r.checked > 0, "no parameters checked");
        }
    }
    const double t = seconds_since(t0);
    c.expect(t < 60.0, fmt::format("runtime {:.1f}s exceeds 60s", t));
    c.note(fmt::format("{} scalars, worst relative error {:.2e}, {:.1f}s", checked, worst, t));
}

// ---- 2. equation oracles ------------------------------------------------

void grid_near(Checks& c, const Mat<double>& got, const oracle::Grid& want, const std::string& what) {
    double worst = 0;
    for (Eigen::Index i = 0; i < got.rows(); ++i)
        for (Eigen::Index j = 0; j < got.cols(); ++j)
            worst = std::max(worst, std::abs(got(i, j) - want[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
    c.expect(worst <= 1e-6, fmt::format("{}: max deviation {:.2e}", what, worst));
}

void equation_oracles(Checks& c) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(2024);
    const auto bank = KernelBank::evenly_spaced();
    const auto ctx = fixtures::mini_config(1).context;
    std::uniform_int_distribution<int> len(1, 6);
    for (int trial = 0; trial < 25; ++trial) {
        const auto qm = static_cast<std::size_t>(len(rng)), dm = static_cast<std::size_t>(len(rng));
        const auto q = fixtures::random_mat<double>(static_cast<Eigen::Index>(qm + 1), 5, rng);
        const auto d = fixtures::random_mat<double>(static_cast<Eigen::Index>(dm + 2), 5, rng);
        auto head = ScoringHead<double>::zeros(bank.size());
        head.w_log = fixtures::random_mat<double>(1, static_cast<Eigen::Index>(bank.size()), rng);
        head.w_len = fixtures::random_mat<double>(1, static_cast<Eigen::Index>(bank.size()), rng);
        const std::vector<double> wlog(head.w_log.data(), head.w_log.data() + head.w_log.size());
        const std::vector<double> wlen(head.w_len.data(), head.w_len.data() + head.w_len.size());
        const auto tag = [&](const char* op) { return fmt::format("{} instance {}", op, trial); };

        const auto m = match_matrix(q, d, qm, dm);
        const auto om = oracle::cosine(oracle::to_grid(q), oracle::to_grid(d), qm, dm);
        grid_near(c, m.values, om, tag("match_matrix"));

        const auto k = kernel_transform(m, bank);
        const auto ok = oracle::kernels(om, qm, dm, bank.mus, bank.sigma);
        for (std::size_t kk = 0; kk < bank.size(); ++kk) grid_near(c, k[kk], ok[kk], tag("kernel_transform"));

        const auto soft = pool_document(k, dm);
        const auto osoft = oracle::pool(ok, dm);
        grid_near(c, soft, osoft, tag("pool_document"));

        const auto lg = log_norm(soft, qm, head);
        const auto olg = oracle::log_norm(osoft, qm, wlog);
        c.near(lg.total, olg.total, 1e-6, tag("log_norm"));
        for (std::size_t kk = 0; kk < bank.size(); ++kk) c.near(lg.per_kernel[kk], olg.per_kernel[kk], 1e-6, tag("log_norm"));

        const auto ln = len_norm(soft, qm, dm, head);
        const auto oln = oracle::len_norm(osoft, qm, dm, wlen);
        c.near(ln.total, oln.total, 1e-6, tag("len_norm"));
        for (std::size_t kk = 0; kk < bank.size(); ++kk) c.near(ln.per_kernel[kk], oln.per_kernel[kk], 1e-6, tag("len_norm"));

        const auto w = fixtures::random_layer<double>(ctx, rng);
        const auto p = fixtures::random_mat<double>(static_cast<Eigen::Index>(qm + 1), ctx.model_dim, rng);
        grid_near(c, multi_head_attention(p, qm, w, ctx),
                  oracle::attention(oracle::to_grid(p), qm, oracle::to_layer(w), ctx.n_heads, ctx.head_dim),
                  tag("multi_head_attention"));
        grid_near(c, feed_forward(p, w), oracle::feed_forward(oracle::to_grid(p), oracle::to_layer(w)), tag("feed_forward"));
    }
    const double t = seconds_since(t0);
    c.expect(t < 30.0, fmt::format("runtime {:.1f}s exceeds 30s", t));
    c.note(fmt::format("7 operations x 25 instances, {:.2f}s", t));
}

// ---- 3. scoring invariants ----------------------------------------------

void scoring_invariants(Checks& c) {
    auto cfg = fixtures::mini_config(2);
    cfg.doc_cap = 40;
    Rng rng(33);
    double worst_perm = 0, worst_dup = 0, worst_batch = 0;
    for (int trial = 0; trial < 10; ++trial) {
        auto model = fixtures::random_model<double>(cfg, 20, 300 + static_cast<std::uint64_t>(trial));
        model.params().alpha = 1.0;
        const auto q = fixtures::random_sequence(3, cfg.query_cap, 20, rng);
        const auto d = fixtures::random_sequence(8, cfg.doc_cap, 20, rng);
        const auto base = model.score_pair(q, d);

        auto perm = d;
        std::shuffle(perm.ids.begin(), perm.ids.begin() + 8, rng);
        worst_perm = std::max(worst_perm, std::abs(model.score_pair(q, perm).score - base.score));

        // Doubling every term doubles both soft-TF and d_len, so s_len is unchanged.
        auto dup = d;
        for (std::size_t i = 0; i < 8; ++i) dup.ids[8 + i] = d.ids[i];
        dup.length = 16;
        worst_dup = std::max(worst_dup, std::abs(model.score_pair(q, dup).s_len - base.s_len));
    }
    c.expect(worst_perm < 1e-6, fmt::format("permutation delta {:.2e}", worst_perm));
    c.expect(worst_dup < 1e-6, fmt::format("duplication s_len delta {:.2e}", worst_dup));

    // Padding extension and batch independence on the float model used in production.
    const auto fmodel = fixtures::random_model<float>(cfg, 20, 77);
    bool padding_bitwise = true;
    for (int trial = 0; trial < 20; ++trial) {
        const auto q = fixtures::random_sequence(1 + trial % 5, cfg.query_cap, 20, rng);
        const auto d = fixtures::random_sequence(1 + trial % 12, cfg.doc_cap, 20, rng);
        auto q_long = q, d_long = d;
        q_long.ids.resize(q.ids.size() + 9, kPadId);
        d_long.ids.resize(d.ids.size() + 31, kPadId);
        const double a = fmodel.score_pair(q, d).score, b = fmodel.score_pair(q_long, d_long).score;
        if (std::memcmp(&a, &b, sizeof a) != 0) padding_bitwise = false;
    }
    c.expect(padding_bitwise, "padding extension changed a score");

    const auto q = fixtures::random_sequence(4, cfg.query_cap, 20, rng);
    std::vector<TokenSequence> docs;
    for (int i = 0; i < 256; ++i) docs.push_back(fixtures::random_sequence(1 + static_cast<std::size_t>(i) % 30, cfg.doc_cap, 20, rng));
    const auto batch = fmodel.score_documents(q, docs, 1);
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto single = fmodel.score_documents(q, std::span<const TokenSequence>(&docs[i], 1), 1);
        worst_batch = std::max(worst_batch, std::abs(single[0] - batch[i]));
    }
    c.expect(worst_batch < 1e-6, fmt::format("batch-1 vs batch-256 delta {:.2e}", worst_batch));
    c.note(fmt::format("perm {:.1e}, dup {:.1e}, batch {:.1e}, padding bitwise {}", worst_perm, worst_dup, worst_batch,
                       padding_bitwise ? "yes" : "no"));
}

// ---- 4. overfit experiment ----------------------------------------------

Mat<float> pretrained_like_embeddings(const Vocabulary& vocab, int dim, std::uint64_t seed) {
    // Stand-in for pre-trained vectors: N(0, 0.4) components, as written by
    // fixtures::write_embeddings. PAD stays zero.
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, 0.4);
    Mat<float> e(static_cast<Eigen::Index>(vocab.size()), dim);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = static_cast<float>(n(rng));
    e.row(kPadId).setZero();
    return e;
}

void overfit(Checks& c) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto s = fixtures::make_synthetic(1);
    c.expect(s.docs.size() == 500 && s.train_queries.size() == 100 && s.validation_queries.size() == 20,
             "synthetic collection has the wrong shape");
    std::vector<std::string> texts;
    for (const auto& d : s.docs) texts.push_back(d.text);
    const auto vocab = build_vocabulary(texts, 1);
    const ModelConfig mc;  // full size: 2 layers, 16 heads of 32, ff 100, width 300
    auto model = TkModel<float>::initialize(mc, pretrained_like_embeddings(vocab, mc.context.model_dim, 1), 1);
    const auto encoded = EncodedCollection::build(s.queries, s.docs, vocab, mc.query_cap, mc.doc_cap);

    TrainConfig tc;  // batch 64, Adam 1e-4 / 1e-3, margin 1
    tc.max_epochs = 5;
    tc.validate_every = 4;
    tc.patience = 3;
    tc.seed = 1;
    const ValidationSet validation{s.validation_run, s.qrels, 1000};
    const auto validate = mrr_validator<float>(validation, encoded, 1);
    Trainer<float> trainer(model, encoded, tc);
    const auto state = trainer.train(s.triples, validate);

    const double acc = pairwise_accuracy(model, encoded, std::span<const TrainTriple>(s.triples));
    const double mrr = validate(model);
    const double t = seconds_since(t0);
    const int epochs_used = static_cast<int>((state.step * tc.batch_size + s.triples.size() - 1) / s.triples.size());
    c.expect(acc >= 0.95, fmt::format("pairwise accuracy {:.3f} < 0.95", acc));
    c.expect(mrr >= 0.90, fmt::format("validation MRR@10 {:.3f} < 0.90", mrr));
    c.expect(epochs_used <= 5, fmt::format("used {} epochs", epochs_used));
    c.expect(t < 600.0, fmt::format("runtime {:.1f}s exceeds 10 minutes", t));
    c.expect(state.early_stopped, "early stopping did not trigger");
    c.expect(model.params() == state.best, "restored parameters differ from the best snapshot");
    c.expect(mrr == state.best_mrr, fmt::format("restored model MRR {} differs from best {}", mrr, state.best_mrr));
    c.expect(state.best_step < state.step, "best step is not before the stopping step");
    c.note(fmt::format("acc {:.3f}, val MRR@10 {:.3f}, best step {} of {}, {:.1f}s", acc, mrr, state.best_step,
                       state.step, t));
}

// ---- 5. metric oracles --------------------------------------------------

void metric_oracles(Checks& c) {
    Rng rng(55);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m = instances::random_metric_instance(rng);
        const auto tag = [&](const char* what) { return fmt::format("{} instance {}", what, trial); };
        c.near(mrr_at_k(m.ranking, m.qrels, 10), oracle::mrr(m.run, m.judgments, 10), 1e-9, tag("MRR@10"));
        c.near(recall_at_k(m.ranking, m.qrels, 10), oracle::recall(m.run, m.judgments, 10), 1e-9, tag("Recall@10"));
        c.near(ndcg_at_k(m.ranking, m.qrels, 10), oracle::ndcg(m.run, m.judgments, 10), 1e-9, tag("nDCG@10"));
        if (!m.judged_queries.empty())
            c.near(median_first_relevant(m.ranking, m.qrels, m.judged_queries),
                   oracle::median_first_relevant(m.run, m.judgments, m.judged_queries), 1e-9, tag("median first relevant"));
    }
    c.note("50 instances x 4 metrics");
}

// ---- 6. budget harness --------------------------------------------------

void budget_harness(Checks& c) {
    // Part one: 5 queries with 1000 candidates each, random grades and a
    // deterministic pseudo-random scorer.
    Rng rng(66);
    Ranking first;
    Qrels qrels;
    std::uniform_int_distribution<int> grade(0, 12);
    for (int qi = 0; qi < 5; ++qi) {
        const std::string q = fmt::format("q{}", qi);
        for (int r = 0; r < 1000; ++r) {
            const std::string d = fmt::format("d{:04}", (r * 7919 + qi * 31) % 1000);
            first.lists[q].push_back({d, 1000.0 - r, r + 1});
            const int g = grade(rng);
            if (g <= 3) qrels.add(q, d, g);
        }
    }
    std::size_t calls = 0;
    const BatchScorer scorer = [&](const std::string& q, std::span<const std::string> ids) {
        ++calls;
        std::vector<double> out;
        for (const auto& id : ids) out.push_back(static_cast<double>(fnv1a64(q + "|" + id) % 100000) / 7.0);
        return out;
    };
    const auto profile = ThroughputProfile::injected(4.0);
    const std::vector<double> budgets{0, 25, 100, 250};
    const auto sweep = budget_sweep(first, qrels, scorer, profile, budgets, 10);
    const std::vector<std::size_t> want{0, 100, 400, 1000};
    c.expect(sweep.points.size() == 4, "wrong number of sweep points");
    for (std::size_t i = 0; i < sweep.points.size() && i < 4; ++i) {
        const auto& p = sweep.points[i];
        c.expect(p.depth == want[i], fmt::format("budget {} gave depth {}, want {}", p.budget_ms, p.depth, want[i]));
        const auto direct = evaluate(rerank(first, want[i], scorer), qrels, 10);
        c.near(p.metrics.mrr, direct.mrr, 1e-9, fmt::format("MRR@10 at budget {}", p.budget_ms));
        c.near(p.metrics.recall, direct.recall, 1e-9, fmt::format("Recall@10 at budget {}", p.budget_ms));
        c.near(p.metrics.ndcg, direct.ndcg, 1e-9, fmt::format("nDCG@10 at budget {}", p.budget_ms));
    }
    c.expect(sweep.saturation_index == std::size_t{3}, "saturation not reported at the 250 ms budget");

    // Part two: the synthetic collection with relevant documents placed deep
    // in the candidate lists and a scorer that rewards the marker match.
    const auto s = fixtures::make_synthetic(6, 500, 30, 20, 3, 50, 300);
    const auto docs = to_text_map(s.docs);
    const auto queries = to_text_map(s.queries);
    Ranking deep;
    for (const auto& [q, list] : s.validation_run.lists) {
        auto l = list;
        const auto rel = std::find_if(l.begin(), l.end(), [&](const RankedDoc& d) { return s.qrels.grade(q, d.doc_id) > 0; });
        const RankedDoc moved = *rel;
        l.erase(rel);
        const std::size_t at = 10 + static_cast<std::size_t>(fnv1a64(q) % 40);
        l.insert(l.begin() + static_cast<std::ptrdiff_t>(std::min(at, l.size())), moved);
        for (std::size_t r = 0; r < l.size(); ++r) {
            l[r].rank = static_cast<int>(r) + 1;
            l[r].score = static_cast<double>(l.size() - r);
        }
        deep.lists[q] = l;
    }
    const BatchScorer marker = [&](const std::string& q, std::span<const std::string> ids) {
        const auto terms = tokenize(queries.at(q));
        std::vector<double> out;
        for (const auto& id : ids) {
            const auto dt = tokenize(docs.at(id));
            out.push_back(std::find(dt.begin(), dt.end(), terms.back()) != dt.end() ? 1.0 : 0.0);
        }
        return out;
    };
    const std::vector<double> fine{0, 1, 2.5, 5, 7.5, 10, 12.5};
    const auto mono = budget_sweep(deep, s.qrels, marker, profile, fine, 10);
    bool monotone = true;
    for (std::size_t i = 1; i < mono.points.size(); ++i) {
        c.expect(mono.points[i].depth >= mono.points[i - 1].depth, "depth not monotone in budget");
        if (mono.points[i].metrics.recall < mono.points[i - 1].metrics.recall) monotone = false;
    }
    c.expect(monotone, "Recall@10 decreased with depth");
    c.expect(mono.points.front().metrics.recall == 0.0 && mono.points.back().metrics.recall == 1.0,
             fmt::format("Recall@10 endpoints {} / {}", mono.points.front().metrics.recall, mono.points.back().metrics.recall));
    std::string curve;
    for (const auto& p : mono.points) curve += fmt::format(" {}:{:.2f}", p.depth, p.metrics.recall);
    c.note("depths 0/100/400/1000; recall by depth" + curve);
}

// ---- 7. explain report integrity ----------------------------------------

void explain_integrity(Checks& c) {
    const auto s = fixtures::make_synthetic(7);
    std::vector<std::string> texts;
    for (const auto& d : s.docs) texts.push_back(d.text);
    const auto vocab = build_vocabulary(texts, 1);
    const ModelConfig mc;
    const auto model = TkModel<float>::initialize(mc, pretrained_like_embeddings(vocab, mc.context.model_dim, 7), 7);
    const auto before = model.params();
    Rng rng(70);
    std::uniform_int_distribution<std::size_t> qpick(0, s.queries.size() - 1), dpick(0, s.docs.size() - 1);
    double worst_sum = 0;
    for (int pair = 0; pair < 100; ++pair) {
        const auto& q = s.queries[qpick(rng)];
        const auto& a = s.docs[dpick(rng)];
        const auto& b = s.docs[dpick(rng)];
        ExplainReport r;
        try {
            r = explain_pair(model, vocab, q.text, {a.id, a.text}, {b.id, b.text});
        } catch (const std::exception& e) {
            c.expect(false, fmt::format("pair {}: {}", pair, e.what()));
            continue;
        }
        for (const auto& d : r.docs) {
            double sum = d.rest;
            for (const auto& row : d.rows) sum += row.contribution;
            worst_sum = std::max(worst_sum, std::abs(sum - d.s_log));
            c.expect(std::abs(sum - d.s_log) <= 1e-5, fmt::format("pair {}: rows sum {} vs s_log {}", pair, sum, d.s_log));
            c.expect(d.score == combine_score(r.beta, d.s_log, r.gamma, d.s_len),
                     fmt::format("pair {}: s is not beta*s_log + gamma*s_len", pair));
        }
        c.expect(render_text(r, true) == render_text(r, true), fmt::format("pair {}: ANSI render differs", pair));
        c.expect(render_text(r, false) == render_text(r, false), fmt::format("pair {}: plain render differs", pair));
        c.expect(render_html(r) == render_html(r), fmt::format("pair {}: HTML render differs", pair));
    }
    c.expect(model.params() == before, "explaining changed the model");
    c.note(fmt::format("100 pairs, worst re-sum deviation {:.2e}", worst_sum));
}

// ---- 8. clustering ------------------------------------------------------

void clustering(Checks& c) {
    const double sigma = 1.0;
    Rng data_rng(88);
    std::normal_distribution<double> n(0.0, sigma);
    const int per_blob = 50, dim = 4;
    Eigen::MatrixXd pts(2 * per_blob, dim);
    for (int i = 0; i < 2 * per_blob; ++i)
        for (int d = 0; d < dim; ++d) pts(i, d) = n(data_rng) + (i >= per_blob && d == 0 ? 10.0 * sigma : 0.0);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto km = kmeans(pts, 2, seed);
        bool perfect = km.assignment[0] != km.assignment[static_cast<std::size_t>(per_blob)];
        for (int i = 0; i < 2 * per_blob; ++i)
            perfect = perfect && km.assignment[static_cast<std::size_t>(i)] == km.assignment[i < per_blob ? 0u : static_cast<std::size_t>(per_blob)];
        c.expect(perfect, fmt::format("seed {}: blobs not recovered", seed));
    }
    std::size_t iterations = 0;
    for (int ds = 0; ds < 20; ++ds) {
        Rng rng(800 + static_cast<std::uint64_t>(ds));
        const auto data = fixtures::random_mat<double>(150, 3, rng);
        const auto km = kmeans(data, 6, static_cast<std::uint64_t>(ds));
        iterations += km.inertia.size();
        for (std::size_t i = 1; i < km.inertia.size(); ++i)
            c.expect(km.inertia[i] <= km.inertia[i - 1] + 1e-9 * std::max(1.0, km.inertia[i - 1]),
                     fmt::format("dataset {}: inertia rose from {} to {} at iteration {}", ds, km.inertia[i - 1], km.inertia[i], i));
    }
    c.note(fmt::format("separation 10 sigma, 100 seeds perfect; 20 datasets, {} monotone iterations", iterations));
}

// ---- 9. reproducibility -------------------------------------------------

std::string q(const std::string& s) { return "'" + s + "'"; }

void reproducibility(Checks& c) {
    fixtures::TempDir dir("tk-accept");
    const auto s = fixtures::make_synthetic(9, 200, 30, 10, 4, 30, 80);
    fixtures::write_records(dir / "docs.tsv", s.docs);
    fixtures::write_records(dir / "queries.tsv", s.queries);
    fixtures::write_triples(dir / "triples.tsv", s.triples);
    fixtures::write_qrels(dir / "qrels", s.qrels);
    fixtures::write_run(dir / "val.run", s.validation_run);
    auto r = fixtures::run_cli(kCli, "build-vocab --collection " + q(dir / "docs.tsv") + " --min-occurrence 1 --out " +
                                         q(dir / "vocab.txt"));
    c.expect(r.code == 0, "build-vocab failed: " + r.err);
    if (r.code != 0) return;
    fixtures::write_embeddings(dir / "emb.txt", Vocabulary::load(dir / "vocab.txt"), 16, 9);

    std::vector<std::string> outputs[2];
    for (int pass = 0; pass < 2; ++pass) {
        // Same paths on both passes: output headers echo the configured paths.
        const std::string p = "out_";
        const std::string common = "--seed 5 --threads 1 ";
        const std::string data = " --vocab " + q(dir / "vocab.txt") + " --collection " + q(dir / "docs.tsv") +
                                 " --queries " + q(dir / "queries.tsv");
        const std::vector<std::string> steps{
            "index --k 100 --collection " + q(dir / "docs.tsv") + " --queries " + q(dir / "queries.tsv") + " --out " +
                q(dir / (p + "bm25.run")),
            "train" + data + " --triples " + q(dir / "triples.tsv") + " --embeddings " + q(dir / "emb.txt") +
                " --validation-run " + q(dir / "val.run") + " --validation-qrels " + q(dir / "qrels") + " --out " +
                q(dir / (p + "model.ckpt")) +
                " --n-layers 1 --n-heads 2 --head-dim 8 --ff-dim 12 --model-dim 16 --batch-size 16 --validate-every 4"
                " --patience 3 --epochs 2",
            "rerank --depth 50" + data + " --checkpoint " + q(dir / (p + "model.ckpt")) + " --run " +
                q(dir / (p + "bm25.run")) + " --out " + q(dir / (p + "tk.run")),
            "evaluate --run " + q(dir / (p + "tk.run")) + " --qrels " + q(dir / "qrels") + " --out " +
                q(dir / (p + "metrics.tsv")),
        };
        for (const auto& step : steps) {
            r = fixtures::run_cli(kCli, common + step);
            c.expect(r.code == 0, fmt::format("pass {} step '{}' exited {}: {}", pass, step.substr(0, step.find(' ')), r.code, r.err));
            if (r.code != 0) return;
        }
        for (const char* f : {"bm25.run", "tk.run", "metrics.tsv", "model.ckpt"})
            outputs[pass].push_back(fixtures::without_timestamps(fixtures::read_file(dir / (p + f))));
    }
    const char* names[] = {"BM25 run", "re-ranked run", "metrics", "checkpoint"};
    for (std::size_t i = 0; i < outputs[0].size(); ++i) {
        c.expect(!outputs[0][i].empty(), std::string(names[i]) + " is empty");
        c.expect(outputs[0][i] == outputs[1][i], std::string(names[i]) + " differs between runs");
    }
    c.note("index, train, rerank and evaluate outputs byte-identical modulo timestamps");
}

// ---- 10. throughput scaling ---------------------------------------------

void throughput_scaling(Checks& c) {
    const auto s = fixtures::make_synthetic(10, 500, 20, 10, 2, 50, 300);
    std::vector<std::string> texts;
    for (const auto& d : s.docs) texts.push_back(d.text);
    const auto vocab = build_vocabulary(texts, 1);
    ModelConfig one, three;
    one.context.n_layers = 1;
    three.context.n_layers = 3;
    const auto enc = EncodedCollection::build(s.queries, s.docs, vocab, one.query_cap, one.doc_cap);
    const auto batches = batches_from_run(s.validation_run, enc, 50);
    const auto m1 = TkModel<float>::initialize(one, vocab.size(), 10);
    const auto m3 = TkModel<float>::initialize(three, vocab.size(), 10);
    const auto p1 = measure_model_throughput(m1, std::span<const ScoringBatch>(batches), 3, 1);
    const auto p3 = measure_model_throughput(m3, std::span<const ScoringBatch>(batches), 3, 1);
    c.expect(p1.docs_per_ms > p3.docs_per_ms,
             fmt::format("1-layer {:.2f} docs/ms is not faster than 3-layer {:.2f}", p1.docs_per_ms, p3.docs_per_ms));
    c.note(fmt::format("1 layer {:.2f} docs/ms, 3 layers {:.2f} docs/ms ({} runs each)", p1.docs_per_ms, p3.docs_per_ms,
                       p1.n_runs_averaged));
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<void(Checks&)>>> criteria{
        {"gradient correctness", gradients},
        {"equation oracles", equation_oracles},
        {"scoring invariants", scoring_invariants},
        {"overfit experiment", overfit},
        {"metric oracle equivalence", metric_oracles},
        {"budget harness", budget_harness},
        {"explain report integrity", explain_integrity},
        {"clustering", clustering},
        {"reproducibility", reproducibility},
        {"throughput scaling", throughput_scaling},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Checks c;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            criteria[i].second(c);
        } catch (const std::exception& e) {
            c.expect(false, std::string("exception: ") + e.what());
        }
        const double t = seconds_since(t0);
        std::cout << fmt::format("{} [{}] {} ({} checks, {:.1f}s)", c.ok() ? "PASS" : "FAIL", i + 1, criteria[i].first,
                                 c.count(), t);
        for (const auto& n : c.notes()) std::cout << " - " << n;
        std::cout << '\n';
        for (const auto& f : c.failures()) std::cout << "    " << f << '\n';
        if (c.failed() > c.failures().size())
            std::cout << fmt::format("    ... and {} more\n", c.failed() - c.failures().size());
        std::cout.flush();
        if (!c.ok()) ++failed;
    }
    std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
    return failed == 0 ? 0 : 1;
}
