#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "semir/common.hpp"
#include "semir/detail/json_util.hpp"
#include "semir/segment.hpp"

namespace semir {

enum class Section { title, abstract };

inline std::string_view to_string(Section s) { return s == Section::title ? "title" : "abstract"; }

inline Section parse_section(std::string_view s, const std::string& path) {
    if (s == "title") {
        return Section::title;
    }
    if (s == "abstract") {
        return Section::abstract;
    }
    throw ParseError(path + ": unknown section '" + std::string(s) + "'");
}

/// One sentence of a document. Offsets are byte offsets into the text of
/// `section` (title or abstract), matching the BioASQ snippet convention.
struct SentenceSpan {
    std::size_t sent_index = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
    Section section = Section::abstract;

    friend bool operator==(const SentenceSpan&, const SentenceSpan&) = default;
};

struct Document {
    std::string doc_id;
    std::string title;
    std::string abstract;
    std::vector<SentenceSpan> sentences;

    std::string_view section_text(Section s) const {
        return s == Section::title ? std::string_view(title) : std::string_view(abstract);
    }

    std::string_view sentence_text(const SentenceSpan& span) const {
        return section_text(span.section).substr(span.begin, span.end - span.begin);
    }

    std::string_view sentence_text(std::size_t sent_index) const {
        return sentence_text(sentences.at(sent_index));
    }

    /// Title and abstract joined by the single-space separator the index uses.
    std::string full_text() const {
        if (title.empty()) {
            return abstract;
        }
        if (abstract.empty()) {
            return title;
        }
        return title + " " + abstract;
    }

    friend bool operator==(const Document&, const Document&) = default;
};

/// Builds a document with its sentences segmented. Title sentences come first.
inline Document make_document(std::string doc_id, std::string title, std::string abstract,
                              const AbbreviationLexicon& lex = AbbreviationLexicon::biomedical()) {
    Document doc{std::move(doc_id), std::move(title), std::move(abstract), {}};
    std::size_t next = 0;
    for (Section sec : {Section::title, Section::abstract}) {
        for (const TextSpan& s : segment_sentences(doc.section_text(sec), lex)) {
            doc.sentences.push_back({next++, s.begin, s.end, sec});
        }
    }
    return doc;
}

/// Immutable-after-construction document collection keyed by doc_id.
class Corpus {
public:
    Corpus() = default;

    /// Throws ValidationError on an empty or duplicate doc_id.
    void add(Document doc) {
        if (doc.doc_id.empty()) {
            throw ValidationError("document with empty doc_id");
        }
        auto [it, inserted] = by_id_.emplace(doc.doc_id, docs_.size());
        if (!inserted) {
            throw ValidationError("duplicate doc_id '" + doc.doc_id + "'");
        }
        docs_.push_back(std::move(doc));
    }

    std::size_t size() const { return docs_.size(); }
    bool empty() const { return docs_.empty(); }
    const std::vector<Document>& documents() const { return docs_; }
    const Document& operator[](std::size_t i) const { return docs_[i]; }

    const Document* find(std::string_view doc_id) const {
        auto it = by_id_.find(std::string(doc_id));
        return it == by_id_.end() ? nullptr : &docs_[it->second];
    }

    const Document& at(std::string_view doc_id) const {
        const Document* d = find(doc_id);
        if (d == nullptr) {
            throw NotFoundError("unknown doc_id '" + std::string(doc_id) + "'");
        }
        return *d;
    }

    std::optional<std::size_t> position(std::string_view doc_id) const {
        auto it = by_id_.find(std::string(doc_id));
        if (it == by_id_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    friend bool operator==(const Corpus& a, const Corpus& b) { return a.docs_ == b.docs_; }

private:
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

inline Corpus parse_corpus_jsonl(std::istream& in, const std::string& origin = "corpus") {
    Corpus corpus;
    std::unordered_map<std::string, std::size_t> first_line;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const std::string where = origin + ":" + std::to_string(line_no);
        detail::Json obj;
        try {
            obj = detail::Json::parse(line);
        } catch (const detail::Json::parse_error& e) {
            throw ParseError(where + ": malformed JSON: " + e.what());
        }
        std::string doc_id = detail::require_string(obj, "doc_id", where + " $");
        std::string title = detail::require_string(obj, "title", where + " $");
        std::string abstract = detail::require_string(obj, "abstract", where + " $");
        if (doc_id.empty()) {
            throw ValidationError(where + ": empty doc_id");
        }
        auto [it, inserted] = first_line.emplace(doc_id, line_no);
        if (!inserted) {
            throw ValidationError(where + ": duplicate doc_id '" + doc_id + "' (first seen on line " +
                                  std::to_string(it->second) + ")");
        }
        corpus.add(make_document(std::move(doc_id), std::move(title), std::move(abstract)));
    }
    return corpus;
}

inline Corpus ingest_corpus_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw NotFoundError("cannot open corpus " + path.string());
    }
    return parse_corpus_jsonl(in, path.string());
}

inline std::string corpus_to_jsonl(const Corpus& corpus) {
    std::string out;
    for (const Document& d : corpus.documents()) {
        detail::Json obj = {{"doc_id", d.doc_id}, {"title", d.title}, {"abstract", d.abstract}};
        out += obj.dump();
        out += '\n';
    }
    return out;
}

inline void write_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
    write_file_atomic(path, corpus_to_jsonl(corpus));
}

inline std::string corpus_fingerprint(const Corpus& corpus) {
    return hex64(fnv1a64(corpus_to_jsonl(corpus)));
}

// ---------------------------------------------------------------------------
// Queries and gold labels

inline constexpr std::size_t kMaxAnswers = 10;
inline constexpr std::string_view kPubmedUrlPrefix = "http://www.ncbi.nlm.nih.gov/pubmed/";

/// The final path segment of a PubMed-style URL; the input itself when it has
/// no slash.
inline std::string doc_id_from_url(std::string_view url) {
    while (!url.empty() && url.back() == '/') {
        url.remove_suffix(1);
    }
    auto slash = url.rfind('/');
    return std::string(slash == std::string_view::npos ? url : url.substr(slash + 1));
}

inline std::string pubmed_url(std::string_view doc_id) {
    return std::string(kPubmedUrlPrefix) + std::string(doc_id);
}

struct Query {
    std::string query_id;
    std::string body;

    friend bool operator==(const Query&, const Query&) = default;
};

/// A snippet as it appears in BioASQ files: a byte range that may start and
/// end in different sections of one document.
struct Snippet {
    std::string doc_id;
    Section begin_section = Section::abstract;
    std::size_t begin = 0;
    Section end_section = Section::abstract;
    std::size_t end = 0;
    std::string text;

    friend bool operator==(const Snippet&, const Snippet&) = default;
};

struct GoldLabels {
    std::vector<std::string> doc_ids;
    std::vector<Snippet> snippets;

    friend bool operator==(const GoldLabels&, const GoldLabels&) = default;
};

struct QueryEntry {
    Query query;
    std::optional<GoldLabels> gold;

    friend bool operator==(const QueryEntry&, const QueryEntry&) = default;
};

class QuerySet {
public:
    QuerySet() = default;

    void add(QueryEntry entry) {
        if (entry.query.body.empty()) {
            throw ValidationError("query '" + entry.query.query_id + "' has an empty body");
        }
        auto [it, inserted] = by_id_.emplace(entry.query.query_id, entries_.size());
        if (!inserted) {
            throw ValidationError("duplicate query id '" + entry.query.query_id + "'");
        }
        entries_.push_back(std::move(entry));
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::vector<QueryEntry>& entries() const { return entries_; }
    const QueryEntry& operator[](std::size_t i) const { return entries_[i]; }

    const QueryEntry* find(std::string_view id) const {
        auto it = by_id_.find(std::string(id));
        return it == by_id_.end() ? nullptr : &entries_[it->second];
    }

    bool all_labelled() const {
        return std::all_of(entries_.begin(), entries_.end(),
                           [](const QueryEntry& e) { return e.gold.has_value(); });
    }

    friend bool operator==(const QuerySet& a, const QuerySet& b) { return a.entries_ == b.entries_; }

private:
    std::vector<QueryEntry> entries_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

namespace detail {

inline Snippet parse_snippet(const Json& s, const std::string& path) {
    Snippet out;
    out.doc_id = doc_id_from_url(require_string(s, "document", path));
    out.text = require_string(s, "text", path);
    const auto begin = require_int(s, "offsetInBeginSection", path);
    const auto end = require_int(s, "offsetInEndSection", path);
    if (begin < 0 || end < 0) {
        throw ValidationError(path + ": negative offset");
    }
    out.begin = static_cast<std::size_t>(begin);
    out.end = static_cast<std::size_t>(end);
    out.begin_section = parse_section(require_string(s, "beginSection", path), child_path(path, "beginSection"));
    out.end_section = parse_section(require_string(s, "endSection", path), child_path(path, "endSection"));
    if (out.begin_section == Section::abstract && out.end_section == Section::title) {
        throw ValidationError(path + ": snippet ends before it begins");
    }
    if (out.begin_section == out.end_section && out.begin > out.end) {
        throw ValidationError(path + ": offsetInBeginSection > offsetInEndSection");
    }
    return out;
}

inline Json snippet_to_json(const Snippet& s) {
    return Json{{"document", pubmed_url(s.doc_id)},
                {"text", s.text},
                {"offsetInBeginSection", s.begin},
                {"offsetInEndSection", s.end},
                {"beginSection", to_string(s.begin_section)},
                {"endSection", to_string(s.end_section)}};
}

}  // namespace detail

/// Parses a BioASQ-format file into queries. Questions without a "documents"
/// key are unlabelled (test-set style).
inline QuerySet parse_bioasq_gold(const std::string& text, const std::string& origin = "gold") {
    using namespace detail;
    const Json root = parse_json(text, origin);
    const Json& questions = require_array(root, "questions", "$");
    QuerySet qs;
    for (std::size_t qi = 0; qi < questions.size(); ++qi) {
        const std::string path = index_path("$.questions", qi);
        const Json& q = questions[qi];
        QueryEntry entry;
        entry.query.query_id = require_string(q, "id", path);
        entry.query.body = require_string(q, "body", path);
        if (entry.query.body.empty()) {
            throw ValidationError(child_path(path, "body") + ": empty query body");
        }
        if (q.contains("documents")) {
            GoldLabels gold;
            const Json& docs = require_array(q, "documents", path);
            if (docs.size() > kMaxAnswers) {
                throw ValidationError(child_path(path, "documents") + ": " + std::to_string(docs.size()) +
                                      " documents exceeds the limit of 10");
            }
            for (std::size_t di = 0; di < docs.size(); ++di) {
                if (!docs[di].is_string()) {
                    throw ParseError(index_path(child_path(path, "documents"), di) + ": expected string");
                }
                gold.doc_ids.push_back(doc_id_from_url(docs[di].get<std::string>()));
            }
            if (q.contains("snippets")) {
                const Json& snippets = require_array(q, "snippets", path);
                if (snippets.size() > kMaxAnswers) {
                    throw ValidationError(child_path(path, "snippets") + ": " +
                                          std::to_string(snippets.size()) + " snippets exceeds the limit of 10");
                }
                for (std::size_t si = 0; si < snippets.size(); ++si) {
                    const std::string spath = index_path(child_path(path, "snippets"), si);
                    Snippet s = parse_snippet(snippets[si], spath);
                    if (std::find(gold.doc_ids.begin(), gold.doc_ids.end(), s.doc_id) == gold.doc_ids.end()) {
                        throw ValidationError(spath + ": snippet references document '" + s.doc_id +
                                              "' absent from the question's document list");
                    }
                    gold.snippets.push_back(std::move(s));
                }
            }
            entry.gold = std::move(gold);
        }
        try {
            qs.add(std::move(entry));
        } catch (const ValidationError& e) {
            throw ValidationError(path + ": " + e.what());
        }
    }
    return qs;
}

inline QuerySet ingest_bioasq_gold(const std::filesystem::path& path) {
    return parse_bioasq_gold(read_file(path), path.string());
}

inline std::string bioasq_gold_to_json(const QuerySet& qs) {
    using detail::Json;
    Json questions = Json::array();
    for (const QueryEntry& e : qs.entries()) {
        Json q = {{"id", e.query.query_id}, {"body", e.query.body}};
        if (e.gold) {
            Json docs = Json::array();
            for (const auto& id : e.gold->doc_ids) {
                docs.push_back(pubmed_url(id));
            }
            Json snippets = Json::array();
            for (const auto& s : e.gold->snippets) {
                snippets.push_back(detail::snippet_to_json(s));
            }
            q["documents"] = std::move(docs);
            q["snippets"] = std::move(snippets);
        }
        questions.push_back(std::move(q));
    }
    return Json{{"questions", std::move(questions)}}.dump(2);
}

/// Deterministic shuffle-and-cut partition. Relative order inside each half
/// follows the input order.
inline std::pair<QuerySet, QuerySet> split_train_dev(const QuerySet& qs, std::uint64_t seed, std::size_t dev_count) {
    if (dev_count >= qs.size()) {
        throw ValidationError("dev_count (" + std::to_string(dev_count) + ") must be smaller than the query set (" +
                              std::to_string(qs.size()) + ")");
    }
    std::vector<std::size_t> order(qs.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> in_dev(qs.size(), false);
    for (std::size_t i = 0; i < dev_count; ++i) {
        in_dev[order[i]] = true;
    }
    QuerySet train;
    QuerySet dev;
    for (std::size_t i = 0; i < qs.size(); ++i) {
        (in_dev[i] ? dev : train).add(qs[i]);
    }
    return {std::move(train), std::move(dev)};
}

}  // namespace semir
