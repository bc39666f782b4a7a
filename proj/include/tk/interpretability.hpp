// Side-by-side explanation of two documents for one query: weighted
// per-kernel log contributions and per-term kernel affiliation.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "tk/kernel_scorer.hpp"
#include "tk/model.hpp"
#include "tk/text.hpp"

namespace tk {

/// Kernel whose center is closest to a document term's best match.
struct TermAffiliation {
    double best_similarity = 0;
    std::size_t nearest_kernel = 0;
};

/// Nearest center to `similarity`; equidistant centers resolve to the larger.
inline std::size_t nearest_kernel(double similarity, const KernelBank& bank) {
    constexpr double kTieTolerance = 1e-9;
    std::size_t best = 0;
    double best_dist = std::abs(similarity - bank.mus[0]);
    for (std::size_t k = 1; k < bank.size(); ++k) {
        const double d = std::abs(similarity - bank.mus[k]);
        if (d <= best_dist + kTieTolerance) {
            best = k;
            best_dist = std::min(d, best_dist);
        }
    }
    return best;
}

/// One affiliation per valid document term: max over valid query rows.
template <class T>
std::vector<TermAffiliation> affiliate_terms(const MatchMatrix<T>& m, const KernelBank& bank) {
    std::vector<TermAffiliation> out;
    out.reserve(m.d_mask);
    for (std::size_t j = 0; j < m.d_mask; ++j) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m.q_mask; ++i) best = std::max(best, static_cast<double>(m.values(i, j)));
        best = std::clamp(best, -1.0, 1.0);
        out.push_back({best, nearest_kernel(best, bank)});
    }
    return out;
}

struct KernelRow {
    std::size_t kernel = 0;
    double mu = 0;
    double contribution = 0;  // s^k_log * W_log[k]
};

struct DocumentExplanation {
    std::string doc_id;
    std::vector<std::string> tokens;
    std::vector<TermAffiliation> affiliations;
    std::vector<KernelRow> rows;  // displayed kernels, descending mu
    double rest = 0;              // sum of the remaining kernels
    double s_log = 0;
    double s_len = 0;
    double score = 0;
    std::optional<int> model_rank;
    std::optional<int> first_stage_rank;
    std::optional<bool> relevant;
};

struct ExplainReport {
    std::string query_text;
    std::vector<double> mus;
    std::vector<std::size_t> displayed;  // kernel indices, descending mu
    double beta = 0;
    double gamma = 0;
    std::array<DocumentExplanation, 2> docs;
};

/// The `n` kernels with the largest |weighted contribution|, returned in
/// descending center order. Magnitude ties prefer the larger center.
inline std::vector<std::size_t> select_top_kernels(const std::vector<double>& contributions, std::size_t n) {
    std::vector<std::size_t> idx(contributions.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double ma = std::abs(contributions[a]), mb = std::abs(contributions[b]);
        if (ma != mb) return ma > mb;
        return a > b;
    });
    idx.resize(std::min(n, idx.size()));
    std::sort(idx.rbegin(), idx.rend());
    return idx;
}

/// Splits a breakdown into the displayed rows and the folded "Rest".
inline void summarize_breakdown(const ScoreBreakdown& b, const std::vector<double>& mus,
                                const std::vector<std::size_t>& displayed, DocumentExplanation& doc) {
    doc.rows.clear();
    std::vector<char> shown(b.weighted_log_contributions.size(), 0);
    for (std::size_t k : displayed) {
        doc.rows.push_back({k, mus.at(k), b.weighted_log_contributions.at(k)});
        shown[k] = 1;
    }
    doc.rest = 0;
    for (std::size_t k = 0; k < shown.size(); ++k)
        if (!shown[k]) doc.rest += b.weighted_log_contributions[k];
    doc.s_log = b.s_log;
    doc.s_len = b.s_len;
    doc.score = b.score;
}

inline constexpr double kReportSumTolerance = 1e-5;

/// Throws if displayed rows plus Rest drift from s_log, or if the score is
/// not exactly beta * s_log + gamma * s_len.
inline void check_report(const ExplainReport& r) {
    for (const auto& d : r.docs) {
        double sum = d.rest;
        for (const auto& row : d.rows) sum += row.contribution;
        if (!(std::abs(sum - d.s_log) <= kReportSumTolerance))
            throw DataError(fmt::format("report for {}: kernel rows sum to {} but s_log is {}", d.doc_id, sum, d.s_log));
        if (combine_score(r.beta, d.s_log, r.gamma, d.s_len) != d.score)
            throw DataError(fmt::format("report for {}: score {} is not beta*s_log + gamma*s_len", d.doc_id, d.score));
    }
}

struct ExplainDocument {
    std::string id;
    std::string text;
};

/// Scores both documents against the query and assembles the report. Kernel
/// selection is driven by document A.
template <class T>
ExplainReport explain_pair(const TkModel<T>& model, const Vocabulary& vocab, const std::string& query_text,
                           const ExplainDocument& doc_a, const ExplainDocument& doc_b, std::size_t top_kernels = 5) {
    const auto& cfg = model.config();
    ExplainReport r;
    r.query_text = query_text;
    r.mus = cfg.kernels.mus;
    r.beta = static_cast<double>(model.params().head.beta);
    r.gamma = static_cast<double>(model.params().head.gamma);
    const auto q_terms = tokenize(query_text, cfg.query_cap);
    const auto q = encode(q_terms, vocab, cfg.query_cap);
    const Mat<T> qhat = model.contextualize_sequence(q);
    std::array<ScoreBreakdown, 2> breakdowns;
    const std::array<const ExplainDocument*, 2> inputs{&doc_a, &doc_b};
    for (std::size_t s = 0; s < 2; ++s) {
        auto& out = r.docs[s];
        out.doc_id = inputs[s]->id;
        out.tokens = tokenize(inputs[s]->text, cfg.doc_cap);
        const auto d = encode(out.tokens, vocab, cfg.doc_cap);
        const Mat<T> dhat = model.contextualize_sequence(d);
        MatchMatrix<T> mm;
        mm.values = cosine_valid<T>(qhat, dhat);
        mm.q_mask = q.length;
        mm.d_mask = d.length;
        out.affiliations = affiliate_terms(mm, cfg.kernels);
        breakdowns[s] = score_match<T>(mm.values, cfg.kernels, model.params().head);
    }
    r.displayed = select_top_kernels(breakdowns[0].weighted_log_contributions, top_kernels);
    for (std::size_t s = 0; s < 2; ++s) summarize_breakdown(breakdowns[s], r.mus, r.displayed, r.docs[s]);
    check_report(r);
    return r;
}

namespace detail {

struct TermStyle {
    const char* ansi;
    const char* rgb;
    const char* decoration;
};

inline constexpr std::array<TermStyle, 5> kPalette{{
    {"31;4", "190,60,60", "underline double"},
    {"32;4", "0,151,20", "underline"},
    {"34;4", "40,90,200", "underline"},
    {"35;4", "150,60,170", "underline"},
    {"36;4", "0,140,140", "underline"},
}};

// Palette slot of a kernel, or -1 when it is not displayed.
inline int style_slot(const ExplainReport& r, std::size_t kernel) {
    for (std::size_t i = 0; i < r.displayed.size(); ++i)
        if (r.displayed[i] == kernel) return static_cast<int>(i % kPalette.size());
    return -1;
}

inline std::string mu_label(double mu) { return fmt::format("{:g}", std::round(mu * 1e6) / 1e6 + 0.0); }

inline std::string rank_line(const DocumentExplanation& d) {
    std::string s = "doc " + d.doc_id;
    if (d.model_rank) s += fmt::format("  rank TK {}", *d.model_rank);
    if (d.first_stage_rank) s += fmt::format("  first stage {}", *d.first_stage_rank);
    if (d.relevant) s += *d.relevant ? "  (judged relevant)" : "  (not relevant)";
    return s;
}

inline std::string html_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&#39;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace detail

/// Terminal rendering. Without color, affiliated terms are written as
/// _term_(mu).
inline std::string render_text(const ExplainReport& r, bool color) {
    check_report(r);
    std::string out;
    out += "Query: " + r.query_text + "\n\n";
    out += fmt::format("{:<8}{:>12}{:>12}\n", "mu_k", "doc A", "doc B");
    for (std::size_t i = 0; i < r.displayed.size(); ++i) {
        const std::size_t k = r.displayed[i];
        std::string label = detail::mu_label(r.mus[k]);
        std::string line = fmt::format("{:<8}{:>12.1f}{:>12.1f}", label, r.docs[0].rows[i].contribution,
                                       r.docs[1].rows[i].contribution);
        if (color) line = fmt::format("\x1b[{}m{}\x1b[0m", detail::kPalette[i % detail::kPalette.size()].ansi, line);
        out += line + "\n";
    }
    out += fmt::format("{:<8}{:>12.1f}{:>12.1f}\n", "Rest", r.docs[0].rest, r.docs[1].rest);
    out += fmt::format("{:<8}{:>12.1f}{:>12.1f}\n", "s_log", r.docs[0].s_log, r.docs[1].s_log);
    out += fmt::format("{:<8}{:>12.1f}{:>12.1f}\n", "s_len", r.docs[0].s_len, r.docs[1].s_len);
    out += fmt::format("{:<8}{:>12.1f}{:>12.1f}\n", "s", r.docs[0].score, r.docs[1].score);
    const char* names[2] = {"A", "B"};
    for (std::size_t s = 0; s < 2; ++s) {
        const auto& d = r.docs[s];
        out += fmt::format("\n[{}] {}\n", names[s], detail::rank_line(d));
        for (std::size_t t = 0; t < d.tokens.size(); ++t) {
            if (t) out += ' ';
            const int slot = t < d.affiliations.size() ? detail::style_slot(r, d.affiliations[t].nearest_kernel) : -1;
            if (slot < 0) {
                out += color ? "\x1b[90m" + d.tokens[t] + "\x1b[0m" : d.tokens[t];
            } else if (color) {
                out += fmt::format("\x1b[{}m{}\x1b[0m", detail::kPalette[static_cast<std::size_t>(slot)].ansi, d.tokens[t]);
            } else {
                out += "_" + d.tokens[t] + "_(" + detail::mu_label(r.mus[d.affiliations[t].nearest_kernel]) + ")";
            }
        }
        out += '\n';
    }
    return out;
}

/// Standalone HTML page with inline styles.
inline std::string render_html(const ExplainReport& r) {
    check_report(r);
    auto doc_text = [&](const DocumentExplanation& d) {
        std::string s;
        for (std::size_t t = 0; t < d.tokens.size(); ++t) {
            if (t) s += ' ';
            const int slot = t < d.affiliations.size() ? detail::style_slot(r, d.affiliations[t].nearest_kernel) : -1;
            const std::string tok = detail::html_escape(d.tokens[t]);
            if (slot < 0) {
                s += "<span style=\"color:rgb(100,100,100)\">" + tok + "</span>";
            } else {
                const auto& p = detail::kPalette[static_cast<std::size_t>(slot)];
                s += fmt::format("<span style=\"color:rgb({});text-decoration:{}\" title=\"mu={} sim={:.3f}\">{}</span>",
                                 p.rgb, p.decoration, detail::mu_label(r.mus[d.affiliations[t].nearest_kernel]),
                                 d.affiliations[t].best_similarity, tok);
            }
        }
        return s;
    };
    auto table = [&](const DocumentExplanation& d) {
        std::string s = "<table style=\"border-collapse:collapse\"><tr><th style=\"padding:2px 8px\">&mu;<sub>k</sub></th>"
                        "<th style=\"padding:2px 8px\">s<sup>k</sup><sub>log</sub></th></tr>";
        for (std::size_t i = 0; i < d.rows.size(); ++i) {
            const auto& p = detail::kPalette[i % detail::kPalette.size()];
            s += fmt::format("<tr style=\"color:rgb({})\"><td style=\"padding:2px 8px\">{}</td>"
                             "<td style=\"padding:2px 8px;text-align:right\">{:.1f}</td></tr>",
                             p.rgb, detail::mu_label(d.rows[i].mu), d.rows[i].contribution);
        }
        s += fmt::format("<tr><td style=\"padding:2px 8px\">Rest</td><td style=\"padding:2px 8px;text-align:right\">{:.1f}</td></tr>", d.rest);
        s += fmt::format("<tr style=\"border-top:1px solid #999\"><td style=\"padding:2px 8px\"><b>s<sub>log</sub></b></td>"
                         "<td style=\"padding:2px 8px;text-align:right\">{:.1f}</td></tr>", d.s_log);
        s += fmt::format("<tr><td style=\"padding:2px 8px\"><b>s<sub>len</sub></b></td>"
                         "<td style=\"padding:2px 8px;text-align:right\">{:.1f}</td></tr>", d.s_len);
        s += fmt::format("<tr style=\"border-top:1px solid #999\"><td style=\"padding:2px 8px\"><b>s</b></td>"
                         "<td style=\"padding:2px 8px;text-align:right\">{:.1f}</td></tr>", d.score);
        return s + "</table>";
    };
    std::string out;
    out += "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>TK explanation</title></head>\n";
    out += "<body style=\"font-family:sans-serif;margin:24px\">\n";
    out += "<p style=\"text-align:center\"><span style=\"color:rgb(76,76,90)\">Query</span> <b>" +
           detail::html_escape(r.query_text) + "</b></p>\n";
    out += "<div style=\"display:flex;gap:24px;align-items:flex-start\">\n";
    out += "<div style=\"flex:1\"><p><i>" + detail::html_escape(detail::rank_line(r.docs[0])) + "</i></p><p>" +
           doc_text(r.docs[0]) + "</p></div>\n";
    out += "<div>" + table(r.docs[0]) + "</div>\n";
    out += "<div style=\"border-left:1px solid #999\"></div>\n";
    out += "<div>" + table(r.docs[1]) + "</div>\n";
    out += "<div style=\"flex:1\"><p><i>" + detail::html_escape(detail::rank_line(r.docs[1])) + "</i></p><p>" +
           doc_text(r.docs[1]) + "</p></div>\n";
    out += "</div>\n</body></html>\n";
    return out;
}

}  // namespace tk
