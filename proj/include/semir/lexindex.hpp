#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "semir/common.hpp"
#include "semir/corpus.hpp"

namespace semir {

struct TokenizerOptions {
    bool remove_stopwords = false;
    bool stem = false;

    friend bool operator==(const TokenizerOptions&, const TokenizerOptions&) = default;
};

namespace detail {

inline bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

inline const std::unordered_set<std::string>& english_stopwords() {
    static const std::unordered_set<std::string> words = {
        "a",    "an",   "and",  "are",  "as",   "at",   "be",   "but",  "by",   "for",  "if",    "in",
        "into", "is",   "it",   "no",   "not",  "of",   "on",   "or",   "such", "that", "the",   "their",
        "then", "there", "these", "they", "this", "to",  "was",  "will", "with", "what", "which", "who",
        "how",  "does", "do",   "did",  "can",  "from", "has",  "have", "had",  "were", "been",  "its",
    };
    return words;
}

// Harman's S-stemmer: strips common English plural endings only.
inline std::string s_stem(std::string w) {
    auto ends_with = [&](std::string_view suf) {
        return w.size() > suf.size() && w.compare(w.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends_with("ies") && !ends_with("eies") && !ends_with("aies")) {
        w.replace(w.size() - 3, 3, "y");
    } else if (ends_with("es") && !ends_with("aes") && !ends_with("ees") && !ends_with("oes")) {
        w.pop_back();
    } else if (ends_with("s") && !ends_with("us") && !ends_with("ss")) {
        w.pop_back();
    }
    return w;
}

}  // namespace detail

/// Lower-cased maximal runs of alphanumeric bytes. Bytes >= 0x80 count as
/// word characters so UTF-8 words stay intact.
inline std::vector<std::string> tokenize(std::string_view text, const TokenizerOptions& opts = {}) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && !detail::is_word_byte(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        std::size_t j = i;
        while (j < text.size() && detail::is_word_byte(static_cast<unsigned char>(text[j]))) {
            ++j;
        }
        if (j > i) {
            std::string tok(text.substr(i, j - i));
            for (char& c : tok) {
                c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            }
            if (opts.remove_stopwords && detail::english_stopwords().count(tok) > 0) {
                i = j;
                continue;
            }
            if (opts.stem) {
                tok = detail::s_stem(std::move(tok));
            }
            out.push_back(std::move(tok));
        }
        i = j;
    }
    return out;
}

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;

    void validate() const {
        if (!(k1 > 0.0)) {
            throw ValidationError("bm25 k1 must be > 0");
        }
        if (!(b >= 0.0 && b <= 1.0)) {
            throw ValidationError("bm25 b must be in [0,1]");
        }
    }
};

enum class FieldPolicy : std::uint8_t { title_abstract = 0, title = 1, abstract = 2 };

struct Posting {
    std::uint32_t doc = 0;
    std::uint32_t tf = 0;

    friend bool operator==(const Posting&, const Posting&) = default;
};

inline double bm25_idf(std::size_t doc_count, std::size_t df) {
    const double n = static_cast<double>(doc_count);
    const double d = static_cast<double>(df);
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

inline double bm25_tf_part(double tf, double doc_len, double avg_len, const Bm25Params& p) {
    return tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * doc_len / avg_len));
}

class InvertedIndex {
public:
    static constexpr char kMagic[8] = {'S', 'E', 'M', 'I', 'R', 'I', 'D', 'X'};
    static constexpr std::uint32_t kFormatVersion = 1;

    InvertedIndex() = default;

    static InvertedIndex build(const Corpus& corpus, FieldPolicy policy = FieldPolicy::title_abstract,
                               TokenizerOptions opts = {}) {
        if (corpus.empty()) {
            throw ValidationError("cannot index an empty corpus");
        }
        InvertedIndex idx;
        idx.policy_ = policy;
        idx.options_ = opts;
        std::uint64_t total = 0;
        for (std::size_t d = 0; d < corpus.size(); ++d) {
            const Document& doc = corpus[d];
            std::string text;
            switch (policy) {
                case FieldPolicy::title_abstract: text = doc.full_text(); break;
                case FieldPolicy::title: text = doc.title; break;
                case FieldPolicy::abstract: text = doc.abstract; break;
            }
            auto toks = tokenize(text, opts);
            std::map<std::string, std::uint32_t> counts;
            for (auto& t : toks) {
                ++counts[t];
            }
            for (auto& [term, tf] : counts) {
                idx.postings_[term].push_back({static_cast<std::uint32_t>(d), tf});
            }
            idx.doc_ids_.push_back(doc.doc_id);
            idx.doc_lengths_.push_back(static_cast<std::uint32_t>(toks.size()));
            idx.by_id_.emplace(doc.doc_id, static_cast<std::uint32_t>(d));
            total += toks.size();
        }
        idx.avg_doc_length_ = static_cast<double>(total) / static_cast<double>(corpus.size());
        return idx;
    }

    std::size_t doc_count() const { return doc_ids_.size(); }
    double avg_doc_length() const { return avg_doc_length_; }
    const TokenizerOptions& tokenizer_options() const { return options_; }
    FieldPolicy field_policy() const { return policy_; }
    const std::string& doc_id(std::uint32_t docno) const { return doc_ids_.at(docno); }
    std::uint32_t doc_length(std::uint32_t docno) const { return doc_lengths_.at(docno); }
    std::size_t term_count() const { return postings_.size(); }

    /// Vocabulary in lexicographic order.
    std::vector<std::string> terms() const {
        std::vector<std::string> out;
        out.reserve(postings_.size());
        for (const auto& [t, _] : postings_) {
            out.push_back(t);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    std::optional<std::uint32_t> docno(std::string_view doc_id) const {
        auto it = by_id_.find(std::string(doc_id));
        if (it == by_id_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    std::span<const Posting> postings(std::string_view term) const {
        auto it = postings_.find(std::string(term));
        if (it == postings_.end()) {
            return {};
        }
        return it->second;
    }

    std::size_t df(std::string_view term) const { return postings(term).size(); }

    std::uint32_t tf(std::string_view term, std::uint32_t docno) const {
        auto plist = postings(term);
        auto it = std::lower_bound(plist.begin(), plist.end(), docno,
                                   [](const Posting& p, std::uint32_t d) { return p.doc < d; });
        return (it != plist.end() && it->doc == docno) ? it->tf : 0;
    }

    double idf(std::string_view term) const { return bm25_idf(doc_count(), df(term)); }

    std::vector<std::string> tokenize_query(std::string_view text) const { return tokenize(text, options_); }

    // Snapshot layout (little-endian): magic, version, policy, options,
    // doc table, then terms in lexicographic order with their postings.
    std::string serialize() const {
        std::string out(kMagic, sizeof kMagic);
        put_u32(out, kFormatVersion);
        out.push_back(static_cast<char>(policy_));
        out.push_back(static_cast<char>(options_.remove_stopwords));
        out.push_back(static_cast<char>(options_.stem));
        put_u32(out, static_cast<std::uint32_t>(doc_ids_.size()));
        for (std::size_t d = 0; d < doc_ids_.size(); ++d) {
            put_str(out, doc_ids_[d]);
            put_u32(out, doc_lengths_[d]);
        }
        std::vector<const std::string*> terms;
        terms.reserve(postings_.size());
        for (const auto& [t, _] : postings_) {
            terms.push_back(&t);
        }
        std::sort(terms.begin(), terms.end(), [](auto* a, auto* b) { return *a < *b; });
        put_u32(out, static_cast<std::uint32_t>(terms.size()));
        for (const std::string* t : terms) {
            put_str(out, *t);
            const auto& plist = postings_.at(*t);
            put_u32(out, static_cast<std::uint32_t>(plist.size()));
            for (const Posting& p : plist) {
                put_u32(out, p.doc);
                put_u32(out, p.tf);
            }
        }
        return out;
    }

    static InvertedIndex deserialize(std::string_view bytes) {
        Reader r{bytes};
        if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
            throw ParseError("index snapshot: bad magic");
        }
        r.pos = sizeof kMagic;
        const std::uint32_t version = r.u32();
        if (version != kFormatVersion) {
            throw ParseError("index snapshot: unsupported format version " + std::to_string(version));
        }
        InvertedIndex idx;
        const std::uint8_t policy = r.u8();
        if (policy > static_cast<std::uint8_t>(FieldPolicy::abstract)) {
            throw ParseError("index snapshot: unknown field policy");
        }
        idx.policy_ = static_cast<FieldPolicy>(policy);
        idx.options_.remove_stopwords = r.u8() != 0;
        idx.options_.stem = r.u8() != 0;
        const std::uint32_t ndocs = r.u32();
        std::uint64_t total = 0;
        for (std::uint32_t d = 0; d < ndocs; ++d) {
            idx.doc_ids_.push_back(r.str());
            idx.doc_lengths_.push_back(r.u32());
            total += idx.doc_lengths_.back();
            idx.by_id_.emplace(idx.doc_ids_.back(), d);
        }
        const std::uint32_t nterms = r.u32();
        for (std::uint32_t t = 0; t < nterms; ++t) {
            std::string term = r.str();
            const std::uint32_t n = r.u32();
            r.need(static_cast<std::size_t>(n) * 8);
            std::vector<Posting> plist(n);
            for (auto& p : plist) {
                p.doc = r.u32();
                p.tf = r.u32();
                if (p.doc >= ndocs) {
                    throw ParseError("index snapshot: posting references unknown document");
                }
            }
            idx.postings_.emplace(std::move(term), std::move(plist));
        }
        if (r.pos != bytes.size()) {
            throw ParseError("index snapshot: trailing bytes");
        }
        idx.avg_doc_length_ = ndocs == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(ndocs);
        return idx;
    }

    void save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }
    static InvertedIndex load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

    std::string fingerprint() const { return hex64(fnv1a64(serialize())); }

    friend bool operator==(const InvertedIndex& a, const InvertedIndex& b) {
        return a.doc_ids_ == b.doc_ids_ && a.doc_lengths_ == b.doc_lengths_ && a.postings_ == b.postings_ &&
               a.policy_ == b.policy_ && a.options_ == b.options_;
    }

private:
    struct Reader {
        std::string_view bytes;
        std::size_t pos = 0;

        void need(std::size_t n) const {
            if (pos + n > bytes.size()) {
                throw ParseError("index snapshot: truncated");
            }
        }
        std::uint8_t u8() {
            need(1);
            return static_cast<std::uint8_t>(bytes[pos++]);
        }
        std::uint32_t u32() {
            need(4);
            std::uint32_t v = 0;
            for (int i = 0; i < 4; ++i) {
                v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
            }
            return v;
        }
        std::string str() {
            const std::uint32_t n = u32();
            need(n);
            std::string s(bytes.substr(pos, n));
            pos += n;
            return s;
        }
    };

    static void put_u32(std::string& out, std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
        }
    }
    static void put_str(std::string& out, std::string_view s) {
        put_u32(out, static_cast<std::uint32_t>(s.size()));
        out.append(s);
    }

    std::vector<std::string> doc_ids_;
    std::vector<std::uint32_t> doc_lengths_;
    std::unordered_map<std::string, std::uint32_t> by_id_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    double avg_doc_length_ = 0.0;
    FieldPolicy policy_ = FieldPolicy::title_abstract;
    TokenizerOptions options_;
};

/// Okapi BM25 with the non-negative idf ln(1 + (N - df + 0.5)/(df + 0.5)).
/// Every occurrence of a query token contributes.
inline double bm25_score(const InvertedIndex& index, const Bm25Params& params,
                         std::span<const std::string> query_tokens, std::string_view doc_id) {
    const auto docno = index.docno(doc_id);
    if (!docno) {
        throw NotFoundError("unknown doc_id '" + std::string(doc_id) + "'");
    }
    const double len = index.doc_length(*docno);
    double score = 0.0;
    for (const std::string& t : query_tokens) {
        const std::uint32_t tf = index.tf(t, *docno);
        if (tf == 0) {
            continue;
        }
        score += index.idf(t) * bm25_tf_part(tf, len, index.avg_doc_length(), params);
    }
    return score;
}

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;

    friend bool operator==(const ScoredDoc&, const ScoredDoc&) = default;
};

/// Top-k documents with a positive BM25 score, score desc then doc_id asc.
inline std::vector<ScoredDoc> coarse_search(const InvertedIndex& index, const Bm25Params& params,
                                            std::string_view query, std::size_t k) {
    if (k < 1) {
        throw ValidationError("coarse_search: k must be >= 1");
    }
    const auto tokens = index.tokenize_query(query);
    std::unordered_map<std::uint32_t, double> acc;
    for (const std::string& t : tokens) {
        auto plist = index.postings(t);
        if (plist.empty()) {
            continue;
        }
        const double idf = index.idf(t);
        for (const Posting& p : plist) {
            acc[p.doc] += idf * bm25_tf_part(p.tf, index.doc_length(p.doc), index.avg_doc_length(), params);
        }
    }
    std::vector<ScoredDoc> hits;
    hits.reserve(acc.size());
    for (const auto& [docno, score] : acc) {
        if (score > 0.0) {
            hits.push_back({index.doc_id(docno), score});
        }
    }
    auto better = [](const ScoredDoc& a, const ScoredDoc& b) {
        return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
    };
    const std::size_t keep = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), better);
    hits.resize(keep);
    return hits;
}

}  // namespace semir
