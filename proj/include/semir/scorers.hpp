#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "semir/common.hpp"
#include "semir/detail/line_channel.hpp"
#include "semir/detail/url.hpp"
#include "semir/lexindex.hpp"

namespace semir {

enum class ScorerKind { relevance, sts, sia };

inline constexpr double native_max(ScorerKind k) {
    switch (k) {
        case ScorerKind::relevance: return 1.0;
        case ScorerKind::sts: return 5.0;
        case ScorerKind::sia: return 4.0;
    }
    return 1.0;
}

inline std::string_view to_string(ScorerKind k) {
    switch (k) {
        case ScorerKind::relevance: return "relevance";
        case ScorerKind::sts: return "sts";
        case ScorerKind::sia: return "sia";
    }
    return "?";
}

inline ScorerKind parse_scorer_kind(std::string_view s) {
    if (s == "relevance") return ScorerKind::relevance;
    if (s == "sts") return ScorerKind::sts;
    if (s == "sia") return ScorerKind::sia;
    throw ParseError("unknown scorer kind '" + std::string(s) + "'");
}

struct PerspectiveScore {
    ScorerKind kind = ScorerKind::relevance;
    double raw = 0.0;
    double normalized = 0.0;

    friend bool operator==(const PerspectiveScore&, const PerspectiveScore&) = default;
};

inline bool in_native_range(ScorerKind kind, double raw) {
    return std::isfinite(raw) && raw >= 0.0 && raw <= native_max(kind);
}

inline PerspectiveScore make_perspective_score(ScorerKind kind, double raw) {
    if (!in_native_range(kind, raw)) {
        throw ValidationError(std::string(to_string(kind)) + " score " + std::to_string(raw) + " outside [0," +
                              std::to_string(native_max(kind)) + "]");
    }
    return {kind, raw, raw / native_max(kind)};
}

/// Stable key for a corpus sentence, used by score files and debug dumps.
inline std::string sentence_key(std::string_view doc_id, std::size_t sent_index) {
    return std::string(doc_id) + ":" + std::to_string(sent_index);
}

/// One (query, sentence) pair to score. The ids are only consulted by
/// scorers that look scores up (score files); text scorers ignore them.
struct ScoringPair {
    std::string_view query_id;
    std::string_view query;
    std::string_view sentence_key;
    std::string_view sentence;
};

/// A perspective scorer. Implementations must be deterministic per id() and
/// safe to call concurrently.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual ScorerKind kind() const = 0;
    /// Name plus version; part of every cache key.
    virtual std::string id() const = 0;
    /// One raw score per pair, in input order, each within native_max(kind()).
    virtual std::vector<double> score_raw(std::span<const ScoringPair> pairs) const = 0;

    PerspectiveScore score(std::string_view query, std::string_view sentence) const {
        if (query.empty() || sentence.empty()) {
            throw ValidationError("score(): query and sentence must be non-empty");
        }
        const ScoringPair p{{}, query, {}, sentence};
        return make_perspective_score(kind(), score_raw({&p, 1}).at(0));
    }
};

// ---------------------------------------------------------------------------
// Embeddings

class EmbeddingTable {
public:
    EmbeddingTable() = default;
    explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

    void add(std::string word, std::span<const float> vec) {
        if (dim_ == 0) {
            dim_ = vec.size();
        }
        if (vec.size() != dim_ || dim_ == 0) {
            throw ValidationError("embedding for '" + word + "' has dimension " + std::to_string(vec.size()) +
                                  ", expected " + std::to_string(dim_));
        }
        double sq = 0.0;
        for (float v : vec) {
            if (!std::isfinite(v)) {
                throw ValidationError("embedding for '" + word + "' contains a non-finite value");
            }
            sq += static_cast<double>(v) * v;
        }
        if (!index_.emplace(word, words_.size()).second) {
            throw ValidationError("duplicate embedding for '" + word + "'");
        }
        words_.push_back(std::move(word));
        data_.insert(data_.end(), vec.begin(), vec.end());
        norms_.push_back(std::sqrt(sq));
    }

    /// Plain text, one "token v1 ... vd" per line. A leading word2vec-style
    /// "count dim" header line is skipped.
    static EmbeddingTable parse_text(std::istream& in, const std::string& origin = "embeddings") {
        EmbeddingTable table;
        std::string line;
        std::size_t line_no = 0;
        std::vector<float> vec;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            std::istringstream ls(line);
            std::string word;
            if (!(ls >> word)) {
                continue;
            }
            vec.clear();
            std::string field;
            while (ls >> field) {
                float v = 0.0F;
                auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
                if (ec != std::errc() || ptr != field.data() + field.size()) {
                    throw ParseError(origin + ":" + std::to_string(line_no) + ": bad number '" + field + "'");
                }
                vec.push_back(v);
            }
            if (line_no == 1 && vec.size() == 1 && word.find_first_not_of("0123456789") == std::string::npos) {
                continue;
            }
            try {
                table.add(std::move(word), vec);
            } catch (const ValidationError& e) {
                throw ValidationError(origin + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
        return table;
    }

    static EmbeddingTable load_text(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) {
            throw NotFoundError("cannot open embeddings " + path.string());
        }
        return parse_text(in, path.string());
    }

    /// Deterministic pseudo-random unit-scale vectors for `vocabulary`; a
    /// dependency-free stand-in when no trained embeddings are supplied.
    static EmbeddingTable hashed(std::span<const std::string> vocabulary, std::size_t dim, std::uint64_t seed = 0) {
        EmbeddingTable table(dim);
        std::vector<float> vec(dim);
        for (const std::string& w : vocabulary) {
            if (table.contains(w)) {
                continue;
            }
            std::mt19937_64 rng(mix_seed(seed, fnv1a64(w)));
            std::normal_distribution<float> dist(0.0F, 1.0F);
            for (float& v : vec) {
                v = dist(rng);
            }
            table.add(w, vec);
        }
        return table;
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return words_.size(); }
    const std::vector<std::string>& words() const { return words_; }
    bool contains(std::string_view w) const { return index_.count(std::string(w)) > 0; }

    std::optional<std::size_t> index_of(std::string_view w) const {
        auto it = index_.find(std::string(w));
        if (it == index_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    std::span<const float> vector_at(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    double norm_at(std::size_t i) const { return norms_[i]; }

    /// Cosine between two vocabulary rows; 0 when either is the zero vector.
    double cosine_at(std::size_t a, std::size_t b) const {
        if (norms_[a] == 0.0 || norms_[b] == 0.0) {
            return 0.0;
        }
        auto va = vector_at(a);
        auto vb = vector_at(b);
        double dot = 0.0;
        for (std::size_t k = 0; k < dim_; ++k) {
            dot += static_cast<double>(va[k]) * vb[k];
        }
        return dot / (norms_[a] * norms_[b]);
    }

    std::string fingerprint() const {
        std::uint64_t h = kFnvOffset;
        for (std::size_t i = 0; i < words_.size(); ++i) {
            h = fnv1a64(words_[i], h);
            h = fnv1a64({reinterpret_cast<const char*>(vector_at(i).data()), dim_ * sizeof(float)}, h);
        }
        return hex64(h);
    }

private:
    std::size_t dim_ = 0;
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<float> data_;
    std::vector<double> norms_;
};

inline double cosine(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace detail {

/// Mean of the embedding rows of the covered tokens; empty when none is covered.
inline std::vector<double> mean_vector(const EmbeddingTable& emb, const std::vector<std::string>& tokens) {
    std::vector<double> mean;
    std::size_t covered = 0;
    for (const auto& t : tokens) {
        auto idx = emb.index_of(t);
        if (!idx) {
            continue;
        }
        if (mean.empty()) {
            mean.assign(emb.dim(), 0.0);
        }
        auto v = emb.vector_at(*idx);
        for (std::size_t k = 0; k < v.size(); ++k) {
            mean[k] += v[k];
        }
        ++covered;
    }
    for (double& m : mean) {
        m /= static_cast<double>(covered);
    }
    return mean;
}

inline std::vector<std::string> sorted_copy(std::vector<std::string> v) {
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reference scorers

/// Idf-weighted share of the query's distinct tokens found in the sentence,
/// squashed by a logistic centred on half coverage. Exactly 0 without overlap.
class ReferenceRelevanceScorer final : public Scorer {
public:
    static constexpr double kSteepness = 8.0;
    static constexpr double kMidpoint = 0.5;

    ReferenceRelevanceScorer() = default;
    /// Weights terms by the index's BM25 idf instead of uniformly.
    explicit ReferenceRelevanceScorer(std::shared_ptr<const InvertedIndex> idf_source)
        : idf_source_(std::move(idf_source)) {}

    ScorerKind kind() const override { return ScorerKind::relevance; }
    std::string id() const override { return idf_source_ ? "ref-relevance/1+idf" : "ref-relevance/1"; }

    double idf(std::string_view term) const { return idf_source_ ? idf_source_->idf(term) : 1.0; }

    /// The overlap ratio before squashing, in [0,1].
    double overlap(std::string_view query, std::string_view sentence) const {
        auto q = tokenize(query);
        auto s = tokenize(sentence);
        std::unordered_set<std::string> qset(q.begin(), q.end());
        std::unordered_set<std::string> sset(s.begin(), s.end());
        double total = 0.0;
        double hit = 0.0;
        for (const auto& t : detail::sorted_copy({qset.begin(), qset.end()})) {
            const double w = idf(t);
            total += w;
            if (sset.count(t) > 0) {
                hit += w;
            }
        }
        return total > 0.0 ? hit / total : 0.0;
    }

    static double squash(double ratio) {
        if (ratio <= 0.0) {
            return 0.0;
        }
        return 1.0 / (1.0 + std::exp(-kSteepness * (ratio - kMidpoint)));
    }

    std::vector<double> score_raw(std::span<const ScoringPair> pairs) const override {
        std::vector<double> out;
        out.reserve(pairs.size());
        for (const auto& p : pairs) {
            out.push_back(squash(overlap(p.query, p.sentence)));
        }
        return out;
    }

private:
    std::shared_ptr<const InvertedIndex> idf_source_;
};

/// 5 x max(0, cosine of mean token embeddings). 0 when either side has no
/// embedded token.
class ReferenceStsScorer final : public Scorer {
public:
    explicit ReferenceStsScorer(std::shared_ptr<const EmbeddingTable> emb) : emb_(std::move(emb)) {}

    ScorerKind kind() const override { return ScorerKind::sts; }
    std::string id() const override { return "ref-sts/1@" + emb_->fingerprint(); }

    double similarity(std::string_view a, std::string_view b) const {
        auto ta = tokenize(a);
        auto tb = tokenize(b);
        auto ma = detail::mean_vector(*emb_, ta);
        auto mb = detail::mean_vector(*emb_, tb);
        if (ma.empty() || mb.empty()) {
            return 0.0;
        }
        if (detail::sorted_copy(ta) == detail::sorted_copy(tb)) {
            return 5.0;
        }
        return 5.0 * std::clamp(cosine(ma, mb), 0.0, 1.0);
    }

    std::vector<double> score_raw(std::span<const ScoringPair> pairs) const override {
        std::vector<double> out;
        out.reserve(pairs.size());
        for (const auto& p : pairs) {
            out.push_back(similarity(p.query, p.sentence));
        }
        return out;
    }

private:
    std::shared_ptr<const EmbeddingTable> emb_;
};

/// 4 x soft coverage: for each query content token, the best cosine to any
/// sentence token (1 for an exact match), averaged and clamped to [0,1].
class ReferenceSiaScorer final : public Scorer {
public:
    explicit ReferenceSiaScorer(std::shared_ptr<const EmbeddingTable> emb) : emb_(std::move(emb)) {}

    ScorerKind kind() const override { return ScorerKind::sia; }
    std::string id() const override { return "ref-sia/1@" + emb_->fingerprint(); }

    static std::vector<std::string> content_tokens(std::string_view text) {
        auto content = tokenize(text, {.remove_stopwords = true});
        return content.empty() ? tokenize(text) : content;
    }

    double coverage(std::string_view query, std::string_view sentence) const {
        const auto q = content_tokens(query);
        if (q.empty()) {
            return 0.0;
        }
        const auto s = tokenize(sentence);
        std::unordered_set<std::string> sset(s.begin(), s.end());
        std::vector<std::size_t> s_rows;
        for (const auto& t : sset) {
            if (auto i = emb_->index_of(t)) {
                s_rows.push_back(*i);
            }
        }
        std::sort(s_rows.begin(), s_rows.end());
        double sum = 0.0;
        for (const auto& t : q) {
            if (sset.count(t) > 0) {
                sum += 1.0;
                continue;
            }
            auto qi = emb_->index_of(t);
            if (!qi) {
                continue;
            }
            double best = 0.0;
            for (std::size_t r : s_rows) {
                best = std::max(best, emb_->cosine_at(*qi, r));
            }
            sum += best;
        }
        return std::clamp(sum / static_cast<double>(q.size()), 0.0, 1.0);
    }

    std::vector<double> score_raw(std::span<const ScoringPair> pairs) const override {
        std::vector<double> out;
        out.reserve(pairs.size());
        for (const auto& p : pairs) {
            out.push_back(4.0 * coverage(p.query, p.sentence));
        }
        return out;
    }

private:
    std::shared_ptr<const EmbeddingTable> emb_;
};

// ---------------------------------------------------------------------------
// External scorer protocol
//
//   request:  SCORE <kind> <pair_id> <urlencoded query> <urlencoded sentence>\n
//   response: <pair_id> <score>\n    (one per request, any order)

inline std::string format_score_request(ScorerKind kind, std::size_t pair_id, std::string_view query,
                                        std::string_view sentence) {
    std::string line = "SCORE ";
    line += to_string(kind);
    line += ' ';
    line += std::to_string(pair_id);
    line += ' ';
    line += detail::url_encode(query);
    line += ' ';
    line += detail::url_encode(sentence);
    line += '\n';
    return line;
}

/// Talks to a model server either as a child process ("cmd:<shell command>")
/// or over TCP ("tcp:<host>:<port>"). The connection is kept open across
/// batches and reopened after a transport failure.
class ExternalScorer final : public Scorer {
public:
    ExternalScorer(ScorerKind kind, std::string endpoint, std::string scorer_id = {},
                   std::chrono::milliseconds timeout = std::chrono::seconds(30))
        : kind_(kind),
          endpoint_(std::move(endpoint)),
          id_(scorer_id.empty() ? "external/" + endpoint_ : std::move(scorer_id)),
          timeout_(timeout) {
        if (endpoint_.rfind("cmd:", 0) != 0 && endpoint_.rfind("tcp:", 0) != 0) {
            throw ValidationError("external scorer endpoint must start with cmd: or tcp:");
        }
    }

    ScorerKind kind() const override { return kind_; }
    std::string id() const override { return id_; }

    std::vector<double> score_raw(std::span<const ScoringPair> pairs) const override {
        if (pairs.empty()) {
            throw ValidationError("external_score_batch: no pairs");
        }
        std::lock_guard lock(mu_);
        try {
            return exchange(pairs);
        } catch (const TransportError&) {
            channel_.close();
            throw;
        }
    }

private:
    void ensure_open() const {
        if (channel_.is_open()) {
            return;
        }
        if (endpoint_.rfind("cmd:", 0) == 0) {
            channel_ = detail::LineChannel::spawn(endpoint_.substr(4));
        } else {
            const std::string hp = endpoint_.substr(4);
            const auto colon = hp.rfind(':');
            if (colon == std::string::npos) {
                throw ValidationError("tcp endpoint needs host:port");
            }
            channel_ = detail::LineChannel::connect_tcp(hp.substr(0, colon), hp.substr(colon + 1));
        }
    }

    std::vector<double> exchange(std::span<const ScoringPair> pairs) const {
        ensure_open();
        const auto deadline = detail::LineChannel::Clock::now() + timeout_;
        std::string requests;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            requests += format_score_request(kind_, i, pairs[i].query, pairs[i].sentence);
        }
        channel_.write_all(requests, deadline);
        std::vector<double> scores(pairs.size(), 0.0);
        std::vector<bool> seen(pairs.size(), false);
        for (std::size_t got = 0; got < pairs.size(); ++got) {
            const std::string line = channel_.read_line(deadline);
            std::istringstream ls(line);
            std::string id_field;
            std::string score_field;
            std::string extra;
            if (!(ls >> id_field >> score_field) || (ls >> extra)) {
                throw TransportError("malformed scorer response '" + line + "'");
            }
            std::size_t pair_id = 0;
            auto [p1, e1] = std::from_chars(id_field.data(), id_field.data() + id_field.size(), pair_id);
            double raw = 0.0;
            auto [p2, e2] = std::from_chars(score_field.data(), score_field.data() + score_field.size(), raw);
            if (e1 != std::errc() || p1 != id_field.data() + id_field.size() || e2 != std::errc() ||
                p2 != score_field.data() + score_field.size()) {
                throw TransportError("malformed scorer response '" + line + "'");
            }
            if (pair_id >= pairs.size() || seen[pair_id]) {
                throw TransportError("unexpected pair id " + id_field + " in scorer response");
            }
            if (!in_native_range(kind_, raw)) {
                throw TransportError("pair " + std::to_string(pair_id) + ": score " + score_field + " outside [0," +
                                     std::to_string(native_max(kind_)) + "] for " + std::string(to_string(kind_)));
            }
            seen[pair_id] = true;
            scores[pair_id] = raw;
        }
        return scores;
    }

    ScorerKind kind_;
    std::string endpoint_;
    std::string id_;
    std::chrono::milliseconds timeout_;
    mutable std::mutex mu_;
    mutable detail::LineChannel channel_;
};

/// Offline precomputed scores, TSV "query_id\tsentence_key\tscore".
class ScoreFileScorer final : public Scorer {
public:
    ScoreFileScorer(ScorerKind kind, std::string scorer_id) : kind_(kind), id_(std::move(scorer_id)) {}

    static ScoreFileScorer parse(ScorerKind kind, std::istream& in, const std::string& origin = "scores") {
        ScoreFileScorer s(kind, "");
        std::string line;
        std::size_t line_no = 0;
        std::uint64_t h = kFnvOffset;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            if (line.empty()) {
                continue;
            }
            h = fnv1a64(line, h);
            const auto t1 = line.find('\t');
            const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
            if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
                throw ParseError(origin + ":" + std::to_string(line_no) + ": expected 3 tab-separated fields");
            }
            const std::string field = line.substr(t2 + 1);
            double raw = 0.0;
            auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), raw);
            if (ec != std::errc() || ptr != field.data() + field.size()) {
                throw ParseError(origin + ":" + std::to_string(line_no) + ": bad score '" + field + "'");
            }
            if (!in_native_range(kind, raw)) {
                throw ValidationError(origin + ":" + std::to_string(line_no) + ": score outside native range");
            }
            s.put(line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), raw);
        }
        s.id_ = "scorefile/" + std::string(to_string(kind)) + "@" + hex64(h);
        return s;
    }

    static ScoreFileScorer load(ScorerKind kind, const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) {
            throw NotFoundError("cannot open score file " + path.string());
        }
        return parse(kind, in, path.string());
    }

    void put(std::string_view query_id, std::string_view key, double raw) {
        table_[join(query_id, key)] = raw;
    }

    ScorerKind kind() const override { return kind_; }
    std::string id() const override { return id_; }

    std::vector<double> score_raw(std::span<const ScoringPair> pairs) const override {
        std::vector<double> out;
        out.reserve(pairs.size());
        for (const auto& p : pairs) {
            auto it = table_.find(join(p.query_id, p.sentence_key));
            if (it == table_.end()) {
                throw NotFoundError("no precomputed " + std::string(to_string(kind_)) + " score for (" +
                                    std::string(p.query_id) + ", " + std::string(p.sentence_key) + ")");
            }
            out.push_back(it->second);
        }
        return out;
    }

private:
    static std::string join(std::string_view a, std::string_view b) {
        std::string k(a);
        k += '\t';
        k += b;
        return k;
    }

    ScorerKind kind_;
    std::string id_;
    std::unordered_map<std::string, double> table_;
};

// ---------------------------------------------------------------------------
// Score cache

struct ScoreCacheKey {
    std::string scorer_id;
    std::uint64_t query_hash = 0;
    std::uint64_t sentence_hash = 0;

    static ScoreCacheKey make(std::string_view scorer_id, std::string_view query, std::string_view sentence) {
        return {std::string(scorer_id), fnv1a64(query), fnv1a64(sentence)};
    }

    std::string str() const { return scorer_id + '\t' + hex64(query_hash) + '\t' + hex64(sentence_hash); }

    friend bool operator==(const ScoreCacheKey&, const ScoreCacheKey&) = default;
};

/// Persistent raw-score cache. Concurrent readers, serialized writers.
class ScoreCache {
public:
    static constexpr std::string_view kHeader = "semir-score-cache v1";

    std::optional<double> get(const ScoreCacheKey& key) const {
        std::shared_lock lock(mu_);
        auto it = entries_.find(key.str());
        if (it == entries_.end()) {
            misses_.fetch_add(1, std::memory_order_relaxed);
            return std::nullopt;
        }
        hits_.fetch_add(1, std::memory_order_relaxed);
        return it->second;
    }

    void put(const ScoreCacheKey& key, double raw) {
        std::unique_lock lock(mu_);
        entries_[key.str()] = raw;
    }

    std::size_t size() const {
        std::shared_lock lock(mu_);
        return entries_.size();
    }

    std::uint64_t hits() const { return hits_.load(); }
    std::uint64_t misses() const { return misses_.load(); }
    void reset_counters() {
        hits_ = 0;
        misses_ = 0;
    }

    /// A missing file yields an empty cache; a corrupt one is discarded with
    /// a warning.
    static ScoreCache load(const std::filesystem::path& path) {
        ScoreCache cache;
        std::ifstream in(path);
        if (!in) {
            return cache;
        }
        std::string line;
        if (!std::getline(in, line) || line != kHeader) {
            warn("score cache " + path.string() + " has a bad header; starting empty");
            return cache;
        }
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            const auto t3 = line.rfind('\t');
            double raw = 0.0;
            bool ok = t3 != std::string::npos && t3 > 0;
            if (ok) {
                auto [ptr, ec] = std::from_chars(line.data() + t3 + 1, line.data() + line.size(), raw);
                ok = ec == std::errc() && ptr == line.data() + line.size() && std::isfinite(raw);
            }
            if (!ok || std::count(line.begin(), line.end(), '\t') != 3) {
                warn("score cache " + path.string() + " is corrupt at line " + std::to_string(line_no) +
                     "; starting empty");
                return ScoreCache{};
            }
            cache.entries_[line.substr(0, t3)] = raw;
        }
        return cache;
    }

    void save(const std::filesystem::path& path) const {
        std::vector<std::pair<std::string, double>> rows;
        {
            std::shared_lock lock(mu_);
            rows.assign(entries_.begin(), entries_.end());
        }
        std::sort(rows.begin(), rows.end());
        std::string out(kHeader);
        out += '\n';
        char buf[64];
        for (const auto& [k, v] : rows) {
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
            out += k;
            out += '\t';
            out.append(buf, ptr);
            out += '\n';
        }
        write_file_atomic(path, out);
    }

    ScoreCache() = default;
    ScoreCache(ScoreCache&& o) noexcept : entries_(std::move(o.entries_)) {}
    ScoreCache& operator=(ScoreCache&& o) noexcept {
        entries_ = std::move(o.entries_);
        return *this;
    }

private:
    mutable std::shared_mutex mu_;
    std::unordered_map<std::string, double> entries_;
    mutable std::atomic<std::uint64_t> hits_{0};
    mutable std::atomic<std::uint64_t> misses_{0};
};

/// Routes a scorer through a ScoreCache; only misses reach the inner scorer.
class CachedScorer final : public Scorer {
public:
    CachedScorer(std::shared_ptr<const Scorer> inner, std::shared_ptr<ScoreCache> cache)
        : inner_(std::move(inner)), cache_(std::move(cache)) {}

    ScorerKind kind() const override { return inner_->kind(); }
    std::string id() const override { return inner_->id(); }
    std::uint64_t inner_calls() const { return inner_calls_.load(); }

    std::vector<double> score_raw(std::span<const ScoringPair> pairs) const override {
        const std::string sid = inner_->id();
        std::vector<double> out(pairs.size(), 0.0);
        std::vector<ScoringPair> missing;
        std::vector<std::size_t> missing_at;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            if (auto hit = cache_->get(ScoreCacheKey::make(sid, pairs[i].query, pairs[i].sentence))) {
                out[i] = *hit;
            } else {
                missing.push_back(pairs[i]);
                missing_at.push_back(i);
            }
        }
        if (!missing.empty()) {
            inner_calls_.fetch_add(missing.size());
            auto fresh = inner_->score_raw(missing);
            for (std::size_t j = 0; j < missing.size(); ++j) {
                out[missing_at[j]] = fresh[j];
                cache_->put(ScoreCacheKey::make(sid, missing[j].query, missing[j].sentence), fresh[j]);
            }
        }
        return out;
    }

private:
    std::shared_ptr<const Scorer> inner_;
    std::shared_ptr<ScoreCache> cache_;
    mutable std::atomic<std::uint64_t> inner_calls_{0};
};

/// The three perspectives the fusion pipeline consumes.
struct ScorerSet {
    std::shared_ptr<const Scorer> relevance;
    std::shared_ptr<const Scorer> sts;
    std::shared_ptr<const Scorer> sia;

    void validate() const {
        if (!relevance || !sts || !sia) {
            throw ValidationError("scorer set is incomplete");
        }
        if (relevance->kind() != ScorerKind::relevance || sts->kind() != ScorerKind::sts ||
            sia->kind() != ScorerKind::sia) {
            throw ValidationError("scorer set has a scorer of the wrong kind");
        }
    }

    /// Deterministic scorers over one shared embedding table.
    static ScorerSet reference(std::shared_ptr<const EmbeddingTable> emb,
                               std::shared_ptr<const InvertedIndex> idf_source = nullptr) {
        return {std::make_shared<ReferenceRelevanceScorer>(std::move(idf_source)),
                std::make_shared<ReferenceStsScorer>(emb), std::make_shared<ReferenceSiaScorer>(emb)};
    }

    ScorerSet cached(const std::shared_ptr<ScoreCache>& cache) const {
        return {std::make_shared<CachedScorer>(relevance, cache), std::make_shared<CachedScorer>(sts, cache),
                std::make_shared<CachedScorer>(sia, cache)};
    }
};

}  // namespace semir
