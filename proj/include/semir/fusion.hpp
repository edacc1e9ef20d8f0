#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "semir/common.hpp"
#include "semir/corpus.hpp"
#include "semir/detail/json_util.hpp"
#include "semir/lexindex.hpp"
#include "semir/run.hpp"
#include "semir/scorers.hpp"

namespace semir {

/// Sentence mixing weights alpha (relevance, sts, sia, document score),
/// document mixing weights beta (bm25, top-sentence sum) and the weights w of
/// a document's three best sentences.
struct FusionWeights {
    std::array<double, 4> alpha{};
    std::array<double, 2> beta{};
    std::array<double, 3> w{};

    static FusionWeights balanced(double v = 0.5) {
        FusionWeights f;
        f.alpha.fill(v);
        f.beta.fill(v);
        f.w.fill(v);
        return f;
    }

    void validate() const {
        auto check = [](std::span<const double> xs, const char* name) {
            for (double x : xs) {
                if (!(x >= 0.0 && x <= 1.0)) {
                    throw ValidationError(std::string("fusion weight ") + name + " outside [0,1]");
                }
            }
        };
        check(alpha, "alpha");
        check(beta, "beta");
        check(w, "w");
    }

    /// alpha, beta, w flattened in that order (9 values).
    std::array<double, 9> flat() const {
        return {alpha[0], alpha[1], alpha[2], alpha[3], beta[0], beta[1], w[0], w[1], w[2]};
    }

    static FusionWeights from_flat(std::span<const double, 9> v) {
        FusionWeights f;
        std::copy(v.begin(), v.begin() + 4, f.alpha.begin());
        std::copy(v.begin() + 4, v.begin() + 6, f.beta.begin());
        std::copy(v.begin() + 6, v.end(), f.w.begin());
        return f;
    }

    detail::Json to_json() const { return {{"alpha", alpha}, {"beta", beta}, {"w", w}}; }

    static FusionWeights from_json(const detail::Json& j, const std::string& path = "$") {
        FusionWeights f;
        auto read = [&](const char* key, auto& arr) {
            const auto& a = detail::require_array(j, key, path);
            if (a.size() != arr.size()) {
                throw ValidationError(detail::child_path(path, key) + ": expected " + std::to_string(arr.size()) +
                                      " values");
            }
            for (std::size_t i = 0; i < arr.size(); ++i) {
                if (!a[i].is_number()) {
                    throw ParseError(detail::index_path(detail::child_path(path, key), i) + ": expected number");
                }
                arr[i] = a[i].template get<double>();
            }
        };
        read("alpha", f.alpha);
        read("beta", f.beta);
        read("w", f.w);
        f.validate();
        return f;
    }

    friend bool operator==(const FusionWeights&, const FusionWeights&) = default;
};

struct RankingParams {
    std::size_t pool_k = 100;
    std::size_t top_docs = kMaxAnswers;
    std::size_t top_snippets = kMaxAnswers;
    Bm25Params bm25;
    /// Min-max normalize BM25 over the candidate pool before fusion.
    bool bm25_minmax = false;
    /// Feed perspective scores on their native scales instead of [0,1].
    bool use_raw_scales = false;
    /// Rounds of document/sentence score refinement; 1 is the single unrolled step.
    int fixed_point_iters = 1;

    void validate() const {
        if (pool_k < 1) {
            throw ValidationError("pool_k must be >= 1");
        }
        if (top_docs > kMaxAnswers || top_snippets > kMaxAnswers) {
            throw ValidationError("top_docs and top_snippets must be within [0,10]");
        }
        if (fixed_point_iters < 1) {
            throw ValidationError("fixed_point_iters must be >= 1");
        }
        bm25.validate();
    }
};

// ---------------------------------------------------------------------------
// Scoring formulas

inline double base_sentence_score(const FusionWeights& wts, double relevance, double sts, double sia) {
    for (double x : {relevance, sts, sia}) {
        if (!(x >= 0.0 && x <= 1.0)) {
            throw ValidationError("base_sentence_score: perspective score outside [0,1]");
        }
    }
    return wts.alpha[0] * relevance + wts.alpha[1] * sts + wts.alpha[2] * sia;
}

/// `top3` holds the document's three best sentence scores, descending,
/// zero-padded.
inline double document_score(const FusionWeights& wts, double bm25, const std::array<double, 3>& top3) {
    return wts.beta[0] * bm25 + wts.beta[1] * (wts.w[0] * top3[0] + wts.w[1] * top3[1] + wts.w[2] * top3[2]);
}

inline double final_sentence_score(const FusionWeights& wts, double base, double doc_score_norm) {
    return base + wts.alpha[3] * doc_score_norm;
}

inline std::array<double, 3> top3_desc(std::span<const double> scores) {
    std::array<double, 3> top{0.0, 0.0, 0.0};
    std::vector<double> sorted(scores.begin(), scores.end());
    const std::size_t n = std::min<std::size_t>(3, sorted.size());
    std::partial_sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n), sorted.end(),
                      std::greater<>());
    std::copy_n(sorted.begin(), n, top.begin());
    return top;
}

/// (x - min) / (max - min) over `xs`; all zeros when the range is empty.
inline std::vector<double> minmax_normalize(std::span<const double> xs) {
    std::vector<double> out(xs.size(), 0.0);
    if (xs.size() < 2) {
        return out;
    }
    const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) {
        return out;
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out[i] = (xs[i] - *lo) / range;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Candidate pool: everything the fusion step needs, with scorer output
// already materialized. Fusing a pool never calls a scorer.

struct PooledSentence {
    std::size_t sent_index = 0;
    double relevance = 0.0;
    double sts = 0.0;
    double sia = 0.0;
};

struct PooledDoc {
    const Document* doc = nullptr;
    double bm25 = 0.0;
    std::vector<PooledSentence> sentences;
};

struct CandidatePool {
    Query query;
    std::vector<PooledDoc> docs;

    std::size_t sentence_count() const {
        std::size_t n = 0;
        for (const auto& d : docs) {
            n += d.sentences.size();
        }
        return n;
    }
};

struct FusionDebugRow {
    std::string query_id;
    std::string doc_id;
    std::size_t sent_index = 0;
    double base = 0.0;
    double doc_score = 0.0;
    double final_score = 0.0;
};

/// Steps (3)-(7) of the ranking pipeline over a scored pool: base sentence
/// scores, document scores, the kept top documents, final sentence scores
/// inside them and the kept top snippets.
inline RunEntry fuse(const CandidatePool& pool, const FusionWeights& wts, const RankingParams& params,
                     std::vector<FusionDebugRow>* debug = nullptr) {
    RunEntry entry{pool.query.query_id, pool.query.body, {}, {}};
    const std::size_t ndocs = pool.docs.size();
    if (ndocs == 0) {
        return entry;
    }
    std::vector<double> bm25(ndocs);
    for (std::size_t d = 0; d < ndocs; ++d) {
        bm25[d] = pool.docs[d].bm25;
    }
    if (params.bm25_minmax) {
        bm25 = minmax_normalize(bm25);
    }

    std::vector<std::vector<double>> base(ndocs);
    for (std::size_t d = 0; d < ndocs; ++d) {
        for (const auto& s : pool.docs[d].sentences) {
            base[d].push_back(params.use_raw_scales
                                  ? wts.alpha[0] * s.relevance + wts.alpha[1] * s.sts + wts.alpha[2] * s.sia
                                  : base_sentence_score(wts, s.relevance, s.sts, s.sia));
        }
    }

    std::vector<double> doc_score(ndocs);
    for (std::size_t d = 0; d < ndocs; ++d) {
        doc_score[d] = document_score(wts, bm25[d], top3_desc(base[d]));
    }
    std::vector<double> doc_norm = minmax_normalize(doc_score);
    for (int round = 1; round < params.fixed_point_iters; ++round) {
        for (std::size_t d = 0; d < ndocs; ++d) {
            std::vector<double> finals(base[d].size());
            for (std::size_t i = 0; i < finals.size(); ++i) {
                finals[i] = final_sentence_score(wts, base[d][i], doc_norm[d]);
            }
            doc_score[d] = document_score(wts, bm25[d], top3_desc(finals));
        }
        doc_norm = minmax_normalize(doc_score);
    }

    std::vector<std::size_t> order(ndocs);
    for (std::size_t d = 0; d < ndocs; ++d) {
        order[d] = d;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (doc_score[a] != doc_score[b]) {
            return doc_score[a] > doc_score[b];
        }
        return pool.docs[a].doc->doc_id < pool.docs[b].doc->doc_id;
    });
    order.resize(std::min(order.size(), params.top_docs));

    struct Candidate {
        std::size_t doc;
        std::size_t sent;
        double score;
    };
    std::vector<Candidate> cands;
    for (std::size_t d : order) {
        entry.docs.push_back({pool.docs[d].doc->doc_id, doc_score[d]});
        for (std::size_t i = 0; i < pool.docs[d].sentences.size(); ++i) {
            const double fin = final_sentence_score(wts, base[d][i], doc_norm[d]);
            cands.push_back({d, i, fin});
            if (debug != nullptr) {
                debug->push_back({pool.query.query_id, pool.docs[d].doc->doc_id,
                                  pool.docs[d].sentences[i].sent_index, base[d][i], doc_score[d], fin});
            }
        }
    }
    auto better = [&](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        const auto& ida = pool.docs[a.doc].doc->doc_id;
        const auto& idb = pool.docs[b.doc].doc->doc_id;
        if (ida != idb) {
            return ida < idb;
        }
        return pool.docs[a.doc].sentences[a.sent].sent_index < pool.docs[b.doc].sentences[b.sent].sent_index;
    };
    const std::size_t keep = std::min(params.top_snippets, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);
    for (std::size_t c = 0; c < keep; ++c) {
        const Document& doc = *pool.docs[cands[c].doc].doc;
        const std::size_t sidx = pool.docs[cands[c].doc].sentences[cands[c].sent].sent_index;
        const SentenceSpan& span = doc.sentences.at(sidx);
        Snippet snip{doc.doc_id, span.section, span.begin, span.section, span.end, std::string(doc.sentence_text(span))};
        entry.snippets.push_back({std::move(snip), cands[c].score, sidx});
    }
    return entry;
}

inline std::string debug_rows_to_tsv(std::span<const FusionDebugRow> rows) {
    std::string out = "query_id\tdoc_id\tsent_index\tbase\tdoc_score\tfinal\n";
    char buf[64];
    auto num = [&](double v) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
        out.append(buf, p);
    };
    for (const auto& r : rows) {
        out += r.query_id + '\t' + r.doc_id + '\t' + std::to_string(r.sent_index) + '\t';
        num(r.base);
        out += '\t';
        num(r.doc_score);
        out += '\t';
        num(r.final_score);
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline

/// Coarse retrieval plus perspective scoring over a shared, immutable corpus
/// and index. Safe to use from many threads when the scorers are.
class Pipeline {
public:
    Pipeline(std::shared_ptr<const Corpus> corpus, std::shared_ptr<const InvertedIndex> index, ScorerSet scorers,
             RankingParams params = {})
        : corpus_(std::move(corpus)), index_(std::move(index)), scorers_(std::move(scorers)), params_(params) {
        scorers_.validate();
        params_.validate();
        if (!corpus_ || !index_) {
            throw ValidationError("pipeline needs a corpus and an index");
        }
    }

    const RankingParams& params() const { return params_; }
    const Corpus& corpus() const { return *corpus_; }
    const InvertedIndex& index() const { return *index_; }
    const ScorerSet& scorers() const { return scorers_; }

    /// Steps (1)-(2): BM25 pool of pool_k documents, every sentence scored
    /// by all three perspectives.
    CandidatePool build_pool(const Query& query) const {
        CandidatePool pool{query, {}};
        const auto hits = coarse_search(*index_, params_.bm25, query.body, params_.pool_k);
        std::vector<std::string> keys;
        std::vector<ScoringPair> pairs;
        for (const auto& hit : hits) {
            const Document* doc = corpus_->find(hit.doc_id);
            if (doc == nullptr) {
                throw NotFoundError("index document '" + hit.doc_id + "' missing from corpus");
            }
            PooledDoc pd{doc, hit.score, {}};
            for (const auto& span : doc->sentences) {
                pd.sentences.push_back({span.sent_index, 0.0, 0.0, 0.0});
                keys.push_back(sentence_key(doc->doc_id, span.sent_index));
            }
            pool.docs.push_back(std::move(pd));
        }
        std::size_t k = 0;
        for (const auto& pd : pool.docs) {
            for (const auto& s : pd.sentences) {
                pairs.push_back({query.query_id, query.body, keys[k++], pd.doc->sentence_text(s.sent_index)});
            }
        }
        if (pairs.empty()) {
            return pool;
        }
        const auto rel = scorers_.relevance->score_raw(pairs);
        const auto sts = scorers_.sts->score_raw(pairs);
        const auto sia = scorers_.sia->score_raw(pairs);
        k = 0;
        for (auto& pd : pool.docs) {
            for (auto& s : pd.sentences) {
                s.relevance = scale(ScorerKind::relevance, rel.at(k));
                s.sts = scale(ScorerKind::sts, sts.at(k));
                s.sia = scale(ScorerKind::sia, sia.at(k));
                ++k;
            }
        }
        return pool;
    }

    RunEntry rank(const Query& query, const FusionWeights& wts, std::vector<FusionDebugRow>* debug = nullptr) const {
        wts.validate();
        return fuse(build_pool(query), wts, params_, debug);
    }

    RankedRun rank_all(const QuerySet& qs, const FusionWeights& wts, std::vector<FusionDebugRow>* debug = nullptr) const {
        RankedRun run;
        for (const auto& e : qs.entries()) {
            run.add(rank(e.query, wts, debug));
        }
        return run;
    }

private:
    double scale(ScorerKind kind, double raw) const {
        PerspectiveScore ps = make_perspective_score(kind, raw);
        return params_.use_raw_scales ? ps.raw : ps.normalized;
    }

    std::shared_ptr<const Corpus> corpus_;
    std::shared_ptr<const InvertedIndex> index_;
    ScorerSet scorers_;
    RankingParams params_;
};

inline RunEntry rank(const Query& query, const std::shared_ptr<const Corpus>& corpus,
                     const std::shared_ptr<const InvertedIndex>& index, const ScorerSet& scorers,
                     const FusionWeights& wts, const RankingParams& params = {}) {
    return Pipeline(corpus, index, scorers, params).rank(query, wts);
}

// ---------------------------------------------------------------------------
// Two-perspective interactive ranking

/// A run of consecutive sentences (a document or pasted text); neighbours
/// inside it provide result context.
struct MedicPassage {
    std::string source;
    std::string doc_id;
    std::vector<std::string> sentences;
};

struct MedicItem {
    std::string sentence;
    double score = 0.0;
    std::string context_before;
    std::string context_after;
    std::string source;
    std::string doc_id;
    std::size_t sent_index = 0;
};

inline MedicPassage passage_from_text(std::string_view text, std::string source = "custom",
                                      std::string doc_id = "custom") {
    MedicPassage p{std::move(source), std::move(doc_id), {}};
    for (const TextSpan& s : segment_sentences(text)) {
        p.sentences.emplace_back(text.substr(s.begin, s.end - s.begin));
    }
    return p;
}

inline MedicPassage passage_from_document(const Document& doc, std::string source) {
    MedicPassage p{std::move(source), doc.doc_id, {}};
    for (const auto& span : doc.sentences) {
        p.sentences.emplace_back(doc.sentence_text(span));
    }
    return p;
}

/// score = alpha * relevance + (1 - alpha) * sts, both normalized to [0,1];
/// ties keep passage order, then sentence order.
inline std::vector<MedicItem> medic_rank(std::string_view query, std::span<const MedicPassage> passages,
                                         std::size_t topn, double alpha, const Scorer& relevance,
                                         const Scorer& sts) {
    if (topn < 1) {
        throw ValidationError("topn must be >= 1");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ValidationError("alpha must be within [0,1]");
    }
    if (relevance.kind() != ScorerKind::relevance || sts.kind() != ScorerKind::sts) {
        throw ValidationError("medic_rank needs a relevance and an sts scorer");
    }
    struct Slot {
        std::size_t passage;
        std::size_t sent;
        double score;
    };
    std::vector<ScoringPair> pairs;
    std::vector<std::string> keys;
    std::vector<Slot> slots;
    for (std::size_t p = 0; p < passages.size(); ++p) {
        for (std::size_t s = 0; s < passages[p].sentences.size(); ++s) {
            keys.push_back(sentence_key(passages[p].doc_id, s));
            slots.push_back({p, s, 0.0});
        }
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
        pairs.push_back({"", query, keys[i], passages[slots[i].passage].sentences[slots[i].sent]});
    }
    if (pairs.empty()) {
        return {};
    }
    const auto rel = relevance.score_raw(pairs);
    const auto sim = sts.score_raw(pairs);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const double r = make_perspective_score(ScorerKind::relevance, rel[i]).normalized;
        const double s = make_perspective_score(ScorerKind::sts, sim[i]).normalized;
        slots[i].score = alpha * r + (1.0 - alpha) * s;
    }
    std::stable_sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) { return a.score > b.score; });
    slots.resize(std::min(slots.size(), topn));
    std::vector<MedicItem> items;
    for (const Slot& sl : slots) {
        const auto& ps = passages[sl.passage];
        MedicItem it;
        it.sentence = ps.sentences[sl.sent];
        it.score = sl.score;
        it.context_before = sl.sent > 0 ? ps.sentences[sl.sent - 1] : "";
        it.context_after = sl.sent + 1 < ps.sentences.size() ? ps.sentences[sl.sent + 1] : "";
        it.source = ps.source;
        it.doc_id = ps.doc_id;
        it.sent_index = sl.sent;
        items.push_back(std::move(it));
    }
    return items;
}

}  // namespace semir
