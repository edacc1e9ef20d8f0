#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "semir/common.hpp"
#include "semir/corpus.hpp"
#include "semir/detail/json_util.hpp"
#include "semir/run.hpp"

namespace semir {

/// Documents match on exact doc_id; snippets match when they share a
/// document and overlap by at least `min_overlap` characters.
struct MatchPolicy {
    std::size_t min_overlap = 1;

    void validate() const {
        if (min_overlap < 1) {
            throw ValidationError("min_overlap must be >= 1");
        }
    }
};

/// Denominator of average precision: the full gold count, or the gold count
/// capped at `limit` (the ranked list is then also cut at `limit`).
enum class DenomMode { gold, capped };

struct EvalConfig {
    MatchPolicy policy;
    DenomMode denom = DenomMode::gold;
    std::size_t limit = kMaxAnswers;
    double gmap_epsilon = 0.01;
};

struct PrecisionRecallF1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Overlapping characters of two snippets. Positions are ordered by
/// (section, offset) with the title before the abstract. An intersection that
/// crosses from title into abstract counts the abstract part plus one
/// character, a lower bound since section lengths are not known here.
inline std::size_t snippet_overlap(const Snippet& a, const Snippet& b) {
    if (a.doc_id != b.doc_id) {
        return 0;
    }
    using Pos = std::pair<int, std::size_t>;
    auto pos = [](Section s, std::size_t off) { return Pos{s == Section::title ? 0 : 1, off}; };
    const Pos lo = std::max(pos(a.begin_section, a.begin), pos(b.begin_section, b.begin));
    const Pos hi = std::min(pos(a.end_section, a.end), pos(b.end_section, b.end));
    if (!(lo < hi)) {
        return 0;
    }
    if (lo.first == hi.first) {
        return hi.second - lo.second;
    }
    return hi.second + 1;
}

inline bool answer_matches(const std::string& pred, const std::string& gold, const MatchPolicy&) {
    return pred == gold;
}

inline bool answer_matches(const Snippet& pred, const Snippet& gold, const MatchPolicy& policy) {
    return snippet_overlap(pred, gold) >= policy.min_overlap;
}

/// Marks each prediction relevant when it matches a gold item not already
/// claimed by a higher-ranked prediction (first unclaimed gold item wins).
/// The one-to-one claim keeps recall and AP within [0,1] when several
/// predictions hit the same gold item.
template <class T>
std::vector<bool> relevance_flags(std::span<const T> ranked, std::span<const T> gold, const MatchPolicy& policy) {
    std::vector<bool> claimed(gold.size(), false);
    std::vector<bool> flags(ranked.size(), false);
    for (std::size_t k = 0; k < ranked.size(); ++k) {
        for (std::size_t g = 0; g < gold.size(); ++g) {
            if (!claimed[g] && answer_matches(ranked[k], gold[g], policy)) {
                claimed[g] = true;
                flags[k] = true;
                break;
            }
        }
    }
    return flags;
}

template <class T>
PrecisionRecallF1 precision_recall_f1(std::span<const T> pred, std::span<const T> gold,
                                      const MatchPolicy& policy = {}) {
    const auto flags = relevance_flags(pred, gold, policy);
    const auto matched = static_cast<double>(std::count(flags.begin(), flags.end(), true));
    PrecisionRecallF1 out;
    out.precision = pred.empty() ? 0.0 : matched / static_cast<double>(pred.size());
    out.recall = gold.empty() ? 0.0 : matched / static_cast<double>(gold.size());
    const double sum = out.precision + out.recall;
    out.f1 = sum > 0.0 ? 2.0 * out.precision * out.recall / sum : 0.0;
    return out;
}

template <class T>
double average_precision(std::span<const T> ranked, std::span<const T> gold, const MatchPolicy& policy = {},
                         DenomMode denom = DenomMode::gold, std::size_t limit = kMaxAnswers) {
    if (gold.empty()) {
        return 0.0;
    }
    if (denom == DenomMode::capped) {
        ranked = ranked.first(std::min(ranked.size(), limit));
    }
    const auto flags = relevance_flags(ranked, gold, policy);
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < flags.size(); ++k) {
        if (flags[k]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    }
    const std::size_t d = denom == DenomMode::capped ? std::min(gold.size(), limit) : gold.size();
    return sum / static_cast<double>(d);
}

inline double mean_average_precision(std::span<const double> ap_values) {
    if (ap_values.empty()) {
        throw ValidationError("MAP of an empty list");
    }
    double sum = 0.0;
    for (double v : ap_values) {
        sum += v;
    }
    return sum / static_cast<double>(ap_values.size());
}

/// exp(mean(ln(ap + epsilon))).
inline double geometric_map(std::span<const double> ap_values, double epsilon = 0.01) {
    if (ap_values.empty()) {
        throw ValidationError("GMAP of an empty list");
    }
    if (!(epsilon > 0.0)) {
        throw ValidationError("GMAP epsilon must be > 0");
    }
    double sum = 0.0;
    for (double v : ap_values) {
        sum += std::log(v + epsilon);
    }
    return std::exp(sum / static_cast<double>(ap_values.size()));
}

struct MetricSummary {
    double mean_precision = 0.0;
    double mean_recall = 0.0;
    double mean_f1 = 0.0;
    double map = 0.0;
    double gmap = 0.0;
};

struct EvalReport {
    MetricSummary docs;
    MetricSummary snippets;
    std::size_t query_count = 0;

    detail::Json to_json() const {
        auto part = [](const MetricSummary& m) {
            return detail::Json{{"mean_precision", m.mean_precision},
                                {"mean_recall", m.mean_recall},
                                {"mean_f1", m.mean_f1},
                                {"map", m.map},
                                {"gmap", m.gmap}};
        };
        return {{"queries", query_count}, {"documents", part(docs)}, {"snippets", part(snippets)}};
    }

    /// Aligned table in the column order MPrec, MRec, F-Measure, MAP, GMAP.
    std::string to_table() const {
        std::string out;
        char line[160];
        std::snprintf(line, sizeof line, "%-10s %9s %9s %9s %9s %9s\n", "", "MPrec", "MRec", "F-Measure", "MAP",
                      "GMAP");
        out += line;
        for (const auto& [name, m] : {std::pair{"Documents", &docs}, std::pair{"Snippets", &snippets}}) {
            std::snprintf(line, sizeof line, "%-10s %9.4f %9.4f %9.4f %9.4f %9.4f\n", name, m->mean_precision,
                          m->mean_recall, m->mean_f1, m->map, m->gmap);
            out += line;
        }
        return out;
    }
};

/// Scores `run` against every labelled query of `gold`. Gold queries the run
/// does not answer count as empty answers.
inline EvalReport evaluate_run(const RankedRun& run, const QuerySet& gold, const EvalConfig& cfg = {}) {
    cfg.policy.validate();
    for (const RunEntry& e : run.entries()) {
        if (gold.find(e.query_id) == nullptr) {
            throw ValidationError("run query '" + e.query_id + "' is absent from the gold set");
        }
    }
    if (!gold.all_labelled()) {
        throw ValidationError("gold set contains queries without labels");
    }
    std::vector<double> doc_ap;
    std::vector<double> snip_ap;
    EvalReport report;
    for (const QueryEntry& q : gold.entries()) {
        const RunEntry* r = run.find(q.query.query_id);
        std::vector<std::string> pred_docs;
        std::vector<Snippet> pred_snips;
        if (r != nullptr) {
            for (const auto& d : r->docs) {
                pred_docs.push_back(d.doc_id);
            }
            for (const auto& s : r->snippets) {
                pred_snips.push_back(s.snippet);
            }
        }
        const auto& g = *q.gold;
        auto dp = precision_recall_f1<std::string>(pred_docs, g.doc_ids, cfg.policy);
        auto sp = precision_recall_f1<Snippet>(pred_snips, g.snippets, cfg.policy);
        report.docs.mean_precision += dp.precision;
        report.docs.mean_recall += dp.recall;
        report.docs.mean_f1 += dp.f1;
        report.snippets.mean_precision += sp.precision;
        report.snippets.mean_recall += sp.recall;
        report.snippets.mean_f1 += sp.f1;
        doc_ap.push_back(average_precision<std::string>(pred_docs, g.doc_ids, cfg.policy, cfg.denom, cfg.limit));
        snip_ap.push_back(average_precision<Snippet>(pred_snips, g.snippets, cfg.policy, cfg.denom, cfg.limit));
    }
    const double n = static_cast<double>(gold.size());
    for (MetricSummary* m : {&report.docs, &report.snippets}) {
        m->mean_precision /= n;
        m->mean_recall /= n;
        m->mean_f1 /= n;
    }
    report.docs.map = mean_average_precision(doc_ap);
    report.docs.gmap = geometric_map(doc_ap, cfg.gmap_epsilon);
    report.snippets.map = mean_average_precision(snip_ap);
    report.snippets.gmap = geometric_map(snip_ap, cfg.gmap_epsilon);
    report.query_count = gold.size();
    return report;
}

}  // namespace semir
