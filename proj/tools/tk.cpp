// tk: command-line front end for indexing, training, re-ranking, evaluation,
// budget sweeps, explanations and query clustering.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "tk/tk.hpp"

namespace {

using tk::DataError;
using tk::UsageError;

// A flag that, when given, overrides one config key.
struct Binding {
    CLI::Option* option;
    std::string key;
    std::unique_ptr<std::string> value;
};

class Cli {
public:
    Cli() : app_("TK re-ranking toolkit") {
        app_.set_help_all_flag("--help-all", "Show help for all subcommands");
        app_.require_subcommand(1);
        app_.fallthrough();
        app_.add_option("--config", config_path_, "key=value configuration file");
        app_.add_option("--set", overrides_, "Override a config key (key=value); repeatable");
        app_.add_flag("--no-color", no_color_, "Disable ANSI colors");
        bind(&app_, "--seed", "run.seed", "Random seed");
        bind(&app_, "--threads", "run.threads", "Worker thread cap (1 = serial and deterministic)");

        auto* vocab = app_.add_subcommand("build-vocab", "Build the vocabulary from the collection");
        bind(vocab, "--collection", "paths.collection", "Collection TSV (doc_id<TAB>text)");
        bind(vocab, "--min-occurrence", "vocab.min_occurrence", "Minimum collection frequency");
        bind(vocab, "--out", "paths.vocab", "Vocabulary output path");

        auto* index = app_.add_subcommand("index", "BM25 first-stage retrieval to a run file");
        bind(index, "--collection", "paths.collection", "Collection TSV");
        bind(index, "--queries", "paths.queries", "Queries TSV (query_id<TAB>text)");
        bind(index, "--k", "index.k", "Candidates per query");
        bind(index, "--k1", "index.k1", "BM25 k1");
        bind(index, "--b", "index.b", "BM25 b");
        bind(index, "--out", "paths.output", "Run output path");

        auto* train = app_.add_subcommand("train", "Train a TK model on triples");
        bind_model_inputs(train);
        bind(train, "--triples", "paths.triples", "Training triples TSV");
        bind(train, "--embeddings", "paths.embeddings", "Pre-trained embeddings (text format); random if omitted");
        bind(train, "--validation-run", "paths.validation_run", "First-stage run for validation queries");
        bind(train, "--validation-qrels", "paths.validation_qrels", "Qrels for validation queries");
        bind(train, "--out", "paths.checkpoint", "Checkpoint output path");
        bind(train, "--epochs", "train.max_epochs", "Maximum epochs");
        bind(train, "--batch-size", "train.batch_size", "Training batch size");
        bind(train, "--validate-every", "train.validate_every", "Validation cadence in steps");
        bind(train, "--patience", "train.patience", "Early-stopping patience in validations");
        bind(train, "--margin", "train.margin", "Hinge loss margin");
        bind(train, "--validation-depth", "train.validation_depth", "Re-ranking depth during validation");
        bind(train, "--n-layers", "model.n_layers", "Transformer layers");
        bind(train, "--n-heads", "model.n_heads", "Attention heads");
        bind(train, "--head-dim", "model.head_dim", "Per-head dimension");
        bind(train, "--ff-dim", "model.ff_dim", "Feed-forward hidden size");
        bind(train, "--model-dim", "model.model_dim", "Embedding and model width");

        auto* rerank = app_.add_subcommand("rerank", "Re-rank a first-stage run with a trained model");
        bind_model_inputs(rerank);
        bind(rerank, "--run", "paths.run", "First-stage run");
        bind(rerank, "--depth", "eval.depth", "Re-ranking depth (0 = identity)");
        bind(rerank, "--out", "paths.output", "Run output path");

        auto* evaluate = app_.add_subcommand("evaluate", "MRR@10, Recall@10 and nDCG@10 of a run");
        bind(evaluate, "--run", "paths.run", "Run to evaluate");
        bind(evaluate, "--qrels", "paths.qrels", "Relevance judgments");
        bind(evaluate, "--out", "paths.output", "Metrics output path (stdout if omitted)");

        auto* sweep = app_.add_subcommand("budget-sweep", "Metrics as a function of a per-query time budget");
        bind_model_inputs(sweep);
        bind(sweep, "--run", "paths.run", "First-stage run");
        bind(sweep, "--qrels", "paths.qrels", "Relevance judgments");
        bind(sweep, "--budgets", "eval.budgets", "Comma-separated budgets in ms (ascending)");
        bind(sweep, "--docs-per-ms", "eval.docs_per_ms", "Inject a throughput instead of measuring it");
        bind(sweep, "--throughput-runs", "eval.throughput_runs", "Timed passes when measuring (>= 3)");
        bind(sweep, "--out", "paths.output", "Sweep TSV output path (stdout if omitted)");

        auto* explain = app_.add_subcommand("explain", "Side-by-side explanation of two documents");
        bind_model_inputs(explain);
        explain->add_option("--query-id", query_id_, "Query id")->required();
        explain->add_option("--doc-a", doc_a_, "First document id")->required();
        explain->add_option("--doc-b", doc_b_, "Second document id")->required();
        bind(explain, "--run", "paths.run", "First-stage run (for ranks)");
        bind(explain, "--qrels", "paths.qrels", "Relevance judgments (optional)");
        bind(explain, "--depth", "eval.depth", "Re-ranking depth used for the model rank");
        bind(explain, "--top-kernels", "explain.top_kernels", "Kernels shown before the Rest row");
        bind(explain, "--html", "paths.output", "Write a standalone HTML report here");

        auto* cluster = app_.add_subcommand("cluster-queries", "k-means over mean contextualized query embeddings");
        bind(cluster, "--checkpoint", "paths.checkpoint", "Model checkpoint");
        bind(cluster, "--vocab", "paths.vocab", "Vocabulary file");
        bind(cluster, "--queries", "paths.queries", "Queries TSV to cluster");
        bind(cluster, "--qrels", "paths.qrels", "Relevance judgments (optional)");
        bind(cluster, "--k", "cluster.k", "Number of clusters");
        bind(cluster, "--max-iterations", "cluster.max_iterations", "Lloyd iteration cap");
        bind(cluster, "--out", "paths.output", "Cluster TSV output path (stdout if omitted)");
        cluster->add_option("--ranking", rankings_, "name=path of a run to compare; repeatable");
    }

    int run(int argc, char** argv) {
        try {
            app_.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            const int code = app_.exit(e);
            return code == 0 ? 0 : 1;
        }
        try {
            build_config();
            return dispatch();
        } catch (const UsageError& e) {
            std::cerr << "usage error: " << e.what() << '\n';
            return 1;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return 2;
        }
    }

private:
    void bind(CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
        auto value = std::make_unique<std::string>();
        auto* opt = sub->add_option(flag, *value, help + " [" + key + "]");
        bindings_.push_back({opt, key, std::move(value)});
    }

    void bind_model_inputs(CLI::App* sub) {
        bind(sub, "--checkpoint", "paths.checkpoint", "Model checkpoint");
        bind(sub, "--vocab", "paths.vocab", "Vocabulary file");
        bind(sub, "--collection", "paths.collection", "Collection TSV");
        bind(sub, "--queries", "paths.queries", "Queries TSV");
    }

    // File values first, then --set, then dedicated flags.
    void build_config() {
        if (!config_path_.empty()) cfg_ = tk::RunConfig::load(config_path_);
        for (const auto& kv : overrides_) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
            cfg_.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        for (const auto& b : bindings_)
            if (b.option->count() > 0) cfg_.set(b.key, *b.value);
        if (cfg_.integer("run.threads") < 1) throw UsageError("--threads must be >= 1");
        timestamp_ = tk::utc_timestamp();
    }

    int dispatch() {
        const auto name = app_.get_subcommands().front()->get_name();
        if (name == "build-vocab") return build_vocab();
        if (name == "index") return index();
        if (name == "train") return train();
        if (name == "rerank") return rerank();
        if (name == "evaluate") return evaluate();
        if (name == "budget-sweep") return budget_sweep();
        if (name == "explain") return explain();
        if (name == "cluster-queries") return cluster_queries();
        throw UsageError("unknown subcommand " + name);
    }

    std::string header() const { return tk::metadata_header(cfg_, timestamp_); }

    int threads() const { return static_cast<int>(cfg_.integer("run.threads")); }
    std::uint64_t seed() const { return static_cast<std::uint64_t>(cfg_.integer("run.seed")); }

    static void write_file(const std::string& path, const std::string& content) {
        if (path.empty() || path == "-") {
            std::cout << content;
            return;
        }
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write " + path);
        out << content;
        if (!out) throw DataError("failed writing " + path);
    }

    struct Loaded {
        tk::TkModel<float> model;
        tk::Vocabulary vocab;
        std::vector<tk::TextRecord> docs;
        std::vector<tk::TextRecord> queries;
        tk::EncodedCollection encoded;
    };

    Loaded load_model_inputs() const {
        Loaded l;
        l.model = tk::load_checkpoint<float>(cfg_.required_path("paths.checkpoint"));
        l.vocab = tk::Vocabulary::load(cfg_.required_path("paths.vocab"));
        l.docs = tk::read_tsv_records(cfg_.required_path("paths.collection"));
        l.queries = tk::read_tsv_records(cfg_.required_path("paths.queries"));
        const auto& mc = l.model.config();
        if (l.model.params().embeddings.rows() != static_cast<Eigen::Index>(l.vocab.size()))
            throw DataError(fmt::format("checkpoint has {} embedding rows but the vocabulary has {} ids",
                                        l.model.params().embeddings.rows(), l.vocab.size()));
        l.encoded = tk::EncodedCollection::build(l.queries, l.docs, l.vocab, mc.query_cap, mc.doc_cap);
        return l;
    }

    int build_vocab() {
        const auto docs = tk::read_tsv_records(cfg_.required_path("paths.collection"));
        std::vector<std::string> texts;
        texts.reserve(docs.size());
        for (const auto& d : docs) texts.push_back(d.text);
        const auto min_occ = cfg_.integer("vocab.min_occurrence");
        if (min_occ < 1) throw UsageError("--min-occurrence must be >= 1");
        const auto vocab = tk::build_vocabulary(texts, static_cast<std::size_t>(min_occ));
        vocab.save(cfg_.required_path("paths.vocab"), header());
        std::cerr << fmt::format("vocabulary: {} terms (+pad, oov)\n", vocab.terms().size());
        return 0;
    }

    int index() {
        const auto docs = tk::read_tsv_records(cfg_.required_path("paths.collection"));
        const auto queries = tk::read_tsv_records(cfg_.required_path("paths.queries"));
        const auto k = cfg_.integer("index.k");
        if (k < 1) throw UsageError("--k must be >= 1");
        const auto idx = tk::build_index(docs);
        const auto run = tk::bm25_run(idx, queries, static_cast<std::size_t>(k),
                                      {cfg_.real("index.k1"), cfg_.real("index.b")});
        std::ostringstream out;
        out << header();
        tk::write_run(out, run);
        write_file(cfg_.required_path("paths.output"), out.str());
        return 0;
    }

    int train() {
        const tk::ModelConfig mc = cfg_.model();
        mc.validate();
        const auto vocab = tk::Vocabulary::load(cfg_.required_path("paths.vocab"));
        const auto docs = tk::read_tsv_records(cfg_.required_path("paths.collection"));
        const auto queries = tk::read_tsv_records(cfg_.required_path("paths.queries"));
        const auto triples = tk::read_triples(cfg_.required_path("paths.triples"));
        tk::ValidationSet validation{tk::read_run(cfg_.required_path("paths.validation_run")),
                                     tk::read_qrels(cfg_.required_path("paths.validation_qrels")),
                                     static_cast<std::size_t>(cfg_.integer("train.validation_depth"))};
        for (const auto& t : triples)
            if (validation.first_stage.lists.count(t.query_id))
                throw UsageError("query " + t.query_id + " appears in both the training triples and the validation run");
        const auto encoded = tk::EncodedCollection::build(queries, docs, vocab, mc.query_cap, mc.doc_cap);

        tk::Rng rng(seed());
        const auto dim = static_cast<std::size_t>(mc.context.model_dim);
        const auto& emb_path = cfg_.str("paths.embeddings");
        tk::Mat<float> embeddings = emb_path.empty() ? tk::random_embeddings<float>(vocab, dim, rng)
                                                     : tk::load_embeddings<float>(emb_path, vocab, dim, rng);
        auto model = tk::TkModel<float>::initialize(mc, std::move(embeddings), seed());

        tk::Trainer<float> trainer(model, encoded, cfg_.train());
        const auto state = trainer.train(triples, tk::mrr_validator<float>(validation, encoded, threads()));

        const auto& ckpt = cfg_.required_path("paths.checkpoint");
        tk::save_checkpoint(model, ckpt);
        tk::CheckpointMetadata meta;
        meta.config_text = cfg_.to_text();
        meta.seed = seed();
        meta.margin = cfg_.real("train.margin");
        nlohmann::json history = nlohmann::json::array();
        for (const auto& h : state.history)
            history.push_back({{"step", h.step}, {"epoch", h.epoch}, {"mrr", h.mrr}, {"alpha", h.alpha}});
        meta.training = {{"steps", state.step},
                         {"best_step", state.best_step},
                         {"best_mrr", state.best_mrr},
                         {"early_stopped", state.early_stopped},
                         {"final_alpha", static_cast<double>(model.params().alpha)},
                         {"validations", history},
                         {"config_hash", tk::config_hash(cfg_)},
                         {"timestamp", timestamp_}};
        tk::save_metadata(meta, ckpt + ".json");
        std::cerr << fmt::format("trained {} steps; best validation MRR@10 {:.4f} at step {}{}\n", state.step,
                                 state.best_mrr, state.best_step, state.early_stopped ? " (early stop)" : "");
        return 0;
    }

    int rerank() {
        const auto first = tk::read_run(cfg_.required_path("paths.run"));
        const auto depth = cfg_.integer("eval.depth");
        if (depth < 0) throw UsageError("--depth must be >= 0");
        tk::Ranking out;
        if (depth == 0) {
            out = first;
        } else {
            const Loaded l = load_model_inputs();
            out = tk::rerank(first, static_cast<std::size_t>(depth), tk::make_model_scorer(l.model, l.encoded, threads()));
        }
        std::ostringstream s;
        s << header();
        tk::write_run(s, out);
        write_file(cfg_.required_path("paths.output"), s.str());
        return 0;
    }

    int evaluate() {
        const auto run = tk::read_run(cfg_.required_path("paths.run"));
        const auto qrels = tk::read_qrels(cfg_.required_path("paths.qrels"));
        const auto m = tk::evaluate(run, qrels, 10);
        std::size_t judged = 0;
        for (const auto& [q, list] : run.lists)
            if (qrels.relevant_count(q) > 0) ++judged;
        std::string out = header();
        out += "metric\tvalue\n";
        out += "mrr@10\t" + tk::format_double(m.mrr) + '\n';
        out += "recall@10\t" + tk::format_double(m.recall) + '\n';
        out += "ndcg@10\t" + tk::format_double(m.ndcg) + '\n';
        out += fmt::format("judged_queries\t{}\n", judged);
        write_file(cfg_.str("paths.output"), out);
        return 0;
    }

    int budget_sweep() {
        const auto first = tk::read_run(cfg_.required_path("paths.run"));
        const auto qrels = tk::read_qrels(cfg_.required_path("paths.qrels"));
        const auto budgets = cfg_.reals("eval.budgets");
        if (budgets.empty()) throw UsageError("--budgets is empty");
        const Loaded l = load_model_inputs();
        tk::ThroughputProfile profile;
        const double injected = cfg_.real("eval.docs_per_ms");
        if (injected > 0) {
            profile = tk::ThroughputProfile::injected(injected);
        } else if (injected < 0) {
            throw UsageError("--docs-per-ms must be positive");
        } else {
            const auto batches = tk::batches_from_run(first, l.encoded, first.max_depth());
            profile = tk::measure_model_throughput(l.model, std::span<const tk::ScoringBatch>(batches),
                                                   static_cast<int>(cfg_.integer("eval.throughput_runs")), threads());
        }
        const auto result = tk::budget_sweep(first, qrels, tk::make_model_scorer(l.model, l.encoded, threads()), profile,
                                              budgets, 10);
        std::ostringstream out;
        out << header();
        out << fmt::format("# docs_per_ms={} runs={} scope={}\n", tk::format_double(profile.docs_per_ms),
                           profile.n_runs_averaged, profile.measurement_scope);
        if (result.best_index) out << "# best_budget_ms=" << tk::format_double(result.points[*result.best_index].budget_ms) << '\n';
        if (result.saturation_index)
            out << "# saturation_budget_ms=" << tk::format_double(result.points[*result.saturation_index].budget_ms) << '\n';
        out << "budget_ms\tdepth\tmrr@10\trecall@10\tndcg@10\n";
        tk::write_sweep(out, result);
        write_file(cfg_.str("paths.output"), out.str());
        return 0;
    }

    int explain() {
        const Loaded l = load_model_inputs();
        const auto qtext = tk::to_text_map(l.queries);
        const auto dtext = tk::to_text_map(l.docs);
        auto text_of = [](const auto& map, const std::string& id, const char* what) {
            auto it = map.find(id);
            if (it == map.end()) throw DataError(fmt::format("{} text missing for id {}", what, id));
            return it->second;
        };
        const auto top = cfg_.integer("explain.top_kernels");
        if (top < 1) throw UsageError("--top-kernels must be >= 1");
        auto report = tk::explain_pair(l.model, l.vocab, text_of(qtext, query_id_, "query"),
                                       {doc_a_, text_of(dtext, doc_a_, "document")},
                                       {doc_b_, text_of(dtext, doc_b_, "document")}, static_cast<std::size_t>(top));

        if (!cfg_.str("paths.run").empty()) {
            const auto first = tk::read_run(cfg_.str("paths.run"));
            auto it = first.lists.find(query_id_);
            if (it != first.lists.end()) {
                tk::Ranking single;
                single.tag = first.tag;
                single.lists[query_id_] = it->second;
                const auto depth = static_cast<std::size_t>(std::max<long long>(0, cfg_.integer("eval.depth")));
                const auto reranked = tk::rerank(single, depth, tk::make_model_scorer(l.model, l.encoded, threads()));
                for (auto& d : report.docs) {
                    for (const auto& r : it->second)
                        if (r.doc_id == d.doc_id) d.first_stage_rank = r.rank;
                    for (const auto& r : reranked.lists.at(query_id_))
                        if (r.doc_id == d.doc_id) d.model_rank = r.rank;
                }
            }
        }
        if (!cfg_.str("paths.qrels").empty()) {
            const auto qrels = tk::read_qrels(cfg_.str("paths.qrels"));
            for (auto& d : report.docs) d.relevant = qrels.grade(query_id_, d.doc_id) > 0;
        }

        const bool color = !no_color_ && std::getenv("NO_COLOR") == nullptr;
        std::cout << tk::render_text(report, color);
        if (!cfg_.str("paths.output").empty()) write_file(cfg_.str("paths.output"), tk::render_html(report));
        return 0;
    }

    int cluster_queries() {
        const auto model = tk::load_checkpoint<float>(cfg_.required_path("paths.checkpoint"));
        const auto vocab = tk::Vocabulary::load(cfg_.required_path("paths.vocab"));
        const auto queries = tk::read_tsv_records(cfg_.required_path("paths.queries"));
        const auto k = cfg_.integer("cluster.k");
        if (k < 1) throw UsageError("--k must be >= 1");

        std::vector<std::string> ids;
        std::vector<tk::TokenSequence> seqs;
        for (const auto& q : queries) {
            ids.push_back(q.id);
            seqs.push_back(tk::encode_text(q.text, vocab, model.config().query_cap));
            if (seqs.back().length == 0) throw DataError("query " + q.id + " has no tokens");
        }
        Eigen::MatrixXd emb(static_cast<Eigen::Index>(ids.size()), model.config().context.model_dim);
        tk::parallel_for(ids.size(), threads(), [&](std::size_t i) {
            emb.row(static_cast<Eigen::Index>(i)) = tk::query_embedding(model, seqs[i]).transpose();
        });
        const auto km = tk::kmeans(emb, static_cast<int>(k), seed(), static_cast<int>(cfg_.integer("cluster.max_iterations")));
        const auto clusters = tk::make_clusters(ids, emb, km);

        tk::Qrels qrels;
        if (!cfg_.str("paths.qrels").empty()) qrels = tk::read_qrels(cfg_.str("paths.qrels"));
        std::vector<tk::Ranking> runs;
        std::vector<std::string> names;
        for (const auto& spec : rankings_) {
            const auto eq = spec.find('=');
            if (eq == std::string::npos || eq == 0) throw UsageError("--ranking expects name=path, got '" + spec + "'");
            names.push_back(spec.substr(0, eq));
            runs.push_back(tk::read_run(spec.substr(eq + 1)));
        }
        std::vector<tk::NamedRanking> named;
        for (std::size_t i = 0; i < runs.size(); ++i) named.push_back({names[i], &runs[i]});
        const auto rows = tk::cluster_report(clusters, named, qrels);

        std::string out = header();
        out += fmt::format("# k={} iterations={} converged={} inertia={}\n", k, km.iterations, km.converged ? 1 : 0,
                           tk::format_double(km.inertia.back()));
        out += tk::cluster_report_tsv(rows, named, tk::to_text_map(queries));
        write_file(cfg_.str("paths.output"), out);
        return 0;
    }

    CLI::App app_;
    std::vector<Binding> bindings_;
    std::string config_path_;
    std::vector<std::string> overrides_;
    std::vector<std::string> rankings_;
    bool no_color_ = false;
    std::string query_id_, doc_a_, doc_b_;
    std::string timestamp_;
    tk::RunConfig cfg_;
};

}  // namespace

int main(int argc, char** argv) {
    Cli cli;
    return cli.run(argc, argv);
}
