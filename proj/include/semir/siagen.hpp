#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <istream>
#include <fstream>
#include <set>
#include <random>
#include <string>
#include <vector>

#include "semir/common.hpp"
#include "semir/detail/json_util.hpp"
#include "semir/lexindex.hpp"
#include "semir/scorers.hpp"

namespace semir {

struct QascRow {
    std::string question;
    std::vector<std::string> possible_answers;
    std::string correct_answer;
    std::string fact1;
    std::string fact2;
    std::string combined_fact;

    void validate() const {
        if (question.empty() || combined_fact.empty()) {
            throw ValidationError("QASC row needs a question and a combined fact");
        }
    }

    friend bool operator==(const QascRow&, const QascRow&) = default;
};

enum class Provenance { cat4_rule, cat2_rule, cat0_rule, swap_from_4, swap_from_2 };

inline std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::cat4_rule: return "cat4_rule";
        case Provenance::cat2_rule: return "cat2_rule";
        case Provenance::cat0_rule: return "cat0_rule";
        case Provenance::swap_from_4: return "swap_from_4";
        case Provenance::swap_from_2: return "swap_from_2";
    }
    return "?";
}

inline int label_of(Provenance p) {
    switch (p) {
        case Provenance::cat4_rule: return 4;
        case Provenance::cat2_rule: return 2;
        case Provenance::cat0_rule: return 0;
        case Provenance::swap_from_4: return 3;
        case Provenance::swap_from_2: return 1;
    }
    return -1;
}

struct SiaSample {
    std::string query;
    std::string sentence;
    int label = 0;
    Provenance provenance = Provenance::cat4_rule;

    void validate() const {
        if (label != label_of(provenance)) {
            throw ValidationError("SIA label " + std::to_string(label) + " does not match provenance " +
                                  std::string(to_string(provenance)));
        }
    }

    friend bool operator==(const SiaSample&, const SiaSample&) = default;
};

// ---------------------------------------------------------------------------
// Input

namespace detail {

inline std::string optional_string(const Json& j, const char* key, const std::string& path) {
    return j.contains(key) && !j[key].is_null() ? require_string(j, key, path) : std::string();
}

}  // namespace detail

/// Accepts flat rows ("question", "possible_answers", "correct_answer",
/// "fact1", "fact2", "combined_fact") and the QASC distribution layout
/// ("question": {"stem", "choices"}, "answerKey", "combinedfact").
inline QascRow parse_qasc_row(const detail::Json& j, const std::string& path) {
    using namespace detail;
    if (!j.is_object()) {
        throw ParseError(path + ": expected object");
    }
    QascRow row;
    if (j.contains("question") && j["question"].is_object()) {
        const Json& q = j["question"];
        const std::string qpath = child_path(path, "question");
        row.question = require_string(q, "stem", qpath);
        const std::string key = optional_string(j, "answerKey", path);
        if (q.contains("choices")) {
            const Json& choices = require_array(q, "choices", qpath);
            for (std::size_t i = 0; i < choices.size(); ++i) {
                const std::string cpath = index_path(child_path(qpath, "choices"), i);
                const std::string text = require_string(choices[i], "text", cpath);
                row.possible_answers.push_back(text);
                if (!key.empty() && optional_string(choices[i], "label", cpath) == key) {
                    row.correct_answer = text;
                }
            }
        }
    } else {
        row.question = require_string(j, "question", path);
        if (j.contains("possible_answers")) {
            const Json& answers = require_array(j, "possible_answers", path);
            for (std::size_t i = 0; i < answers.size(); ++i) {
                if (!answers[i].is_string()) {
                    throw ParseError(index_path(child_path(path, "possible_answers"), i) + ": expected string");
                }
                row.possible_answers.push_back(answers[i].get<std::string>());
            }
        }
        row.correct_answer = optional_string(j, "correct_answer", path);
    }
    row.fact1 = optional_string(j, "fact1", path);
    row.fact2 = optional_string(j, "fact2", path);
    row.combined_fact = j.contains("combined_fact") ? optional_string(j, "combined_fact", path)
                                                    : optional_string(j, "combinedfact", path);
    try {
        row.validate();
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
    return row;
}

inline std::vector<QascRow> parse_qasc_jsonl(std::istream& in, const std::string& origin = "qasc") {
    std::vector<QascRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const std::string where = origin + ":" + std::to_string(line_no);
        rows.push_back(parse_qasc_row(detail::parse_json(line, where), where));
    }
    return rows;
}

inline std::vector<QascRow> load_qasc_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw NotFoundError("cannot open " + path.string());
    }
    return parse_qasc_jsonl(in, path.string());
}

// ---------------------------------------------------------------------------
// Rule-based categories

inline std::vector<SiaSample> gen_cat4(std::span<const QascRow> rows) {
    std::vector<SiaSample> out;
    for (const auto& r : rows) {
        r.validate();
        out.push_back({r.question, r.combined_fact, 4, Provenance::cat4_rule});
    }
    return out;
}

/// Per row, the fact the relevance scorer rates higher; ties go to fact1.
/// An empty fact never wins, and a row with neither fact is skipped.
inline std::vector<SiaSample> gen_cat2(std::span<const QascRow> rows, const Scorer& relevance) {
    if (relevance.kind() != ScorerKind::relevance) {
        throw ValidationError("gen_cat2 needs a relevance scorer");
    }
    std::vector<ScoringPair> pairs;
    for (const auto& r : rows) {
        r.validate();
        for (const std::string* f : {&r.fact1, &r.fact2}) {
            if (!f->empty()) {
                pairs.push_back({{}, r.question, {}, *f});
            }
        }
    }
    const std::vector<double> scores = pairs.empty() ? std::vector<double>{} : relevance.score_raw(pairs);
    std::vector<SiaSample> out;
    std::size_t k = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const double s1 = r.fact1.empty() ? -1.0 : scores.at(k++);
        const double s2 = r.fact2.empty() ? -1.0 : scores.at(k++);
        if (r.fact1.empty() && r.fact2.empty()) {
            warn("gen_cat2: row " + std::to_string(i) + " has no facts; skipped");
            continue;
        }
        out.push_back({r.question, s2 > s1 ? r.fact2 : r.fact1, 2, Provenance::cat2_rule});
    }
    return out;
}

/// For every row pair i < j with distinct questions and
/// sts(question_i, question_j) >= threshold: (question_i, combined_fact_j)
/// and (question_j, combined_fact_i), both label 0.
inline std::vector<SiaSample> gen_cat0(std::span<const QascRow> rows, const Scorer& sts, double threshold) {
    if (sts.kind() != ScorerKind::sts) {
        throw ValidationError("gen_cat0 needs an sts scorer");
    }
    if (!in_native_range(ScorerKind::sts, threshold)) {
        throw ValidationError("STS threshold outside [0,5]");
    }
    for (const auto& r : rows) {
        r.validate();
    }
    std::vector<SiaSample> out;
    std::vector<ScoringPair> pairs;
    std::vector<std::size_t> partner;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        pairs.clear();
        partner.clear();
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            if (rows[i].question != rows[j].question) {
                pairs.push_back({{}, rows[i].question, {}, rows[j].question});
                partner.push_back(j);
            }
        }
        if (pairs.empty()) {
            continue;
        }
        const auto scores = sts.score_raw(pairs);
        for (std::size_t k = 0; k < partner.size(); ++k) {
            if (scores.at(k) >= threshold) {
                const auto& a = rows[i];
                const auto& b = rows[partner[k]];
                out.push_back({a.question, b.combined_fact, 0, Provenance::cat0_rule});
                out.push_back({b.question, a.combined_fact, 0, Provenance::cat0_rule});
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Word swapping

/// The five vocabulary words closest to `word` by cosine, excluding the
/// word itself; ties go to the lexicographically smaller word.
inline std::vector<std::string> knn_top5(const EmbeddingTable& emb, std::string_view word) {
    constexpr std::size_t k = 5;
    if (emb.size() < k + 1) {
        throw ValidationError("nearest-neighbour lookup needs a vocabulary of at least 6 words");
    }
    const auto self = emb.index_of(word);
    if (!self) {
        throw NotFoundError("'" + std::string(word) + "' is not in the embedding vocabulary");
    }
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(emb.size() - 1);
    for (std::size_t i = 0; i < emb.size(); ++i) {
        if (i != *self) {
            scored.emplace_back(emb.cosine_at(*self, i), i);
        }
    }
    const auto& words = emb.words();
    std::partial_sort(scored.begin(), scored.begin() + k, scored.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) {
            return a.first > b.first;
        }
        return words[a.second] < words[b.second];
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < k; ++i) {
        out.push_back(words[scored[i].second]);
    }
    return out;
}

struct EntitySpan {
    std::size_t begin = 0;
    std::size_t end = 0;

    friend bool operator==(const EntitySpan&, const EntitySpan&) = default;
};

/// Dictionary entity matcher: case-insensitive, whole words, longest term
/// first, left to right without overlaps.
class TermLexicon {
public:
    void add(std::string_view term) {
        std::vector<std::string> words;
        for (const auto& w : words_of(term)) {
            words.push_back(lower(term.substr(w.begin, w.end - w.begin)));
        }
        if (words.empty()) {
            return;
        }
        max_words_ = std::max(max_words_, words.size());
        terms_.insert(join(words));
    }

    static TermLexicon parse(std::istream& in) {
        TermLexicon lex;
        std::string line;
        while (std::getline(in, line)) {
            lex.add(line);
        }
        return lex;
    }

    static TermLexicon load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) {
            throw NotFoundError("cannot open " + path.string());
        }
        return parse(in);
    }

    std::size_t size() const { return terms_.size(); }

    std::vector<EntitySpan> find(std::string_view text) const {
        const auto words = words_of(text);
        std::vector<EntitySpan> out;
        std::size_t i = 0;
        while (i < words.size()) {
            std::size_t matched = 0;
            for (std::size_t n = std::min(max_words_, words.size() - i); n >= 1; --n) {
                std::vector<std::string> key;
                for (std::size_t k = i; k < i + n; ++k) {
                    key.push_back(lower(text.substr(words[k].begin, words[k].end - words[k].begin)));
                }
                if (terms_.count(join(key)) > 0) {
                    matched = n;
                    break;
                }
            }
            if (matched > 0) {
                out.push_back({words[i].begin, words[i + matched - 1].end});
                i += matched;
            } else {
                ++i;
            }
        }
        return out;
    }

    /// Maximal runs of word bytes (same rule as the tokenizer).
    static std::vector<EntitySpan> words_of(std::string_view text) {
        std::vector<EntitySpan> out;
        std::size_t i = 0;
        while (i < text.size()) {
            if (!detail::is_word_byte(static_cast<unsigned char>(text[i]))) {
                ++i;
                continue;
            }
            const std::size_t b = i;
            while (i < text.size() && detail::is_word_byte(static_cast<unsigned char>(text[i]))) {
                ++i;
            }
            out.push_back({b, i});
        }
        return out;
    }

private:
    static std::string lower(std::string_view s) {
        std::string out(s);
        for (char& c : out) {
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
        return out;
    }

    static std::string join(const std::vector<std::string>& words) {
        std::string out;
        for (const auto& w : words) {
            if (!out.empty()) {
                out += ' ';
            }
            out += w;
        }
        return out;
    }

    std::set<std::string> terms_;
    std::size_t max_words_ = 0;
};

/// Each entity is picked with probability swap_prob; every word of a picked
/// entity becomes a uniform choice among its five nearest embedding
/// neighbours. Words missing from the embeddings stay as they are. Label 4
/// becomes 3 and label 2 becomes 1.
inline SiaSample swap_generate(const SiaSample& sample, std::span<const EntitySpan> spans, const EmbeddingTable& emb,
                               double swap_prob, std::uint64_t rng_seed) {
    if (sample.label != 4 && sample.label != 2) {
        throw ValidationError("swap_generate takes label 4 or 2 samples");
    }
    if (!(swap_prob >= 0.0 && swap_prob <= 1.0)) {
        throw ValidationError("swap_prob must be within [0,1]");
    }
    std::size_t prev_end = 0;
    for (const auto& s : spans) {
        if (s.begin >= s.end || s.end > sample.sentence.size() || s.begin < prev_end) {
            throw ValidationError("entity spans must be non-empty, ordered, disjoint and inside the sentence");
        }
        prev_end = s.end;
    }

    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> choose(0, 4);
    SiaSample out{sample.query, "", sample.label == 4 ? 3 : 1,
                  sample.label == 4 ? Provenance::swap_from_4 : Provenance::swap_from_2};
    const std::string& text = sample.sentence;
    std::size_t cursor = 0;
    for (const auto& span : spans) {
        if (!(unit(rng) < swap_prob)) {
            continue;
        }
        const std::string_view entity = std::string_view(text).substr(span.begin, span.end - span.begin);
        for (const auto& w : TermLexicon::words_of(entity)) {
            const std::size_t wb = span.begin + w.begin;
            const std::size_t we = span.begin + w.end;
            std::string word = text.substr(wb, we - wb);
            if (!emb.contains(word)) {
                std::string lowered = word;
                for (char& c : lowered) {
                    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
                }
                word = lowered;
            }
            if (!emb.contains(word)) {
                warn("swap_generate: '" + word + "' has no embedding; left unswapped");
                continue;
            }
            const auto nn = knn_top5(emb, word);
            out.sentence.append(text, cursor, wb - cursor);
            out.sentence += nn[choose(rng)];
            cursor = we;
        }
    }
    out.sentence.append(text, cursor, std::string::npos);
    return out;
}

// ---------------------------------------------------------------------------
// Whole dataset

struct SiaGenConfig {
    double sts_threshold = 4.0;
    double swap_prob = 0.5;
    std::uint64_t seed = 0;
    /// Emit swap samples whose sentence came out unchanged (no entity picked
    /// or none with embeddings).
    bool keep_unchanged_swaps = false;
};

/// Categories 4, 2 and 0 by rule, then one swap sample per category-4 and
/// category-2 sample. Swap randomness for row r derives from (seed, r).
inline std::vector<SiaSample> generate_sia(std::span<const QascRow> rows, const Scorer& relevance, const Scorer& sts,
                                           const TermLexicon& entities, const EmbeddingTable& emb,
                                           const SiaGenConfig& cfg) {
    std::vector<SiaSample> out = gen_cat4(rows);
    const auto cat4_count = out.size();
    auto cat2 = gen_cat2(rows, relevance);
    out.insert(out.end(), cat2.begin(), cat2.end());
    auto cat0 = gen_cat0(rows, sts, cfg.sts_threshold);
    out.insert(out.end(), cat0.begin(), cat0.end());

    std::vector<SiaSample> swaps;
    auto add_swap = [&](const SiaSample& s, std::uint64_t stream) {
        const auto spans = entities.find(s.sentence);
        SiaSample sw = swap_generate(s, spans, emb, cfg.swap_prob, mix_seed(cfg.seed, stream));
        if (cfg.keep_unchanged_swaps || sw.sentence != s.sentence) {
            swaps.push_back(std::move(sw));
        }
    };
    for (std::size_t r = 0; r < cat4_count; ++r) {
        add_swap(out[r], 2 * r);
    }
    for (std::size_t k = 0; k < cat2.size(); ++k) {
        add_swap(cat2[k], 2 * k + 1);
    }
    out.insert(out.end(), swaps.begin(), swaps.end());
    return out;
}

namespace detail {

inline std::string tsv_field(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c == '\t' || c == '\n' || c == '\r') {
            c = ' ';
        }
    }
    return out;
}

}  // namespace detail

inline std::string sia_to_tsv(std::span<const SiaSample> samples) {
    std::string out = "query\tsentence\tlabel\tprovenance\n";
    for (const auto& s : samples) {
        out += detail::tsv_field(s.query) + '\t' + detail::tsv_field(s.sentence) + '\t' + std::to_string(s.label) +
               '\t' + std::string(to_string(s.provenance)) + '\n';
    }
    return out;
}

inline std::string sia_to_jsonl(std::span<const SiaSample> samples) {
    std::string out;
    for (const auto& s : samples) {
        out += detail::Json{{"query", s.query},
                            {"sentence", s.sentence},
                            {"label", s.label},
                            {"provenance", std::string(to_string(s.provenance))}}
                   .dump() +
               '\n';
    }
    return out;
}

}  // namespace semir
