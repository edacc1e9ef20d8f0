#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace semir {

/// Half-open byte range [begin, end) into some text.
struct TextSpan {
    std::size_t begin = 0;
    std::size_t end = 0;

    friend bool operator==(const TextSpan&, const TextSpan&) = default;
};

/// Lower-cased tokens (including their trailing period) that never end a
/// sentence, e.g. "e.g." or "fig.".
class AbbreviationLexicon {
public:
    AbbreviationLexicon() = default;
    explicit AbbreviationLexicon(std::unordered_set<std::string> entries) : entries_(std::move(entries)) {}

    static const AbbreviationLexicon& biomedical() {
        static const AbbreviationLexicon lex{{
            "e.g.", "i.e.", "al.",   "fig.",  "figs.", "dr.",   "vs.",  "approx.", "ca.",   "no.",
            "nos.", "resp.", "ref.", "refs.", "mr.",   "mrs.",  "ms.",  "prof.",   "sp.",   "spp.",
            "var.", "subsp.", "st.", "jr.",   "inc.",  "ltd.",  "co.",  "eq.",     "eqs.",  "vol.",
            "pp.",  "cf.",  "viz.",  "min.",  "max.",  "tab.",  "suppl.", "dept.", "univ.", "mg.",
            "conc.", "temp.", "avg.", "est.",  "incl.", "kg.",  "ml.",  "hr.",     "hrs.",  "wk.",
        }};
        return lex;
    }

    bool contains(std::string_view token) const {
        std::string lower(token);
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        return entries_.count(lower) > 0;
    }

    void add(std::string entry) { entries_.insert(std::move(entry)); }

private:
    std::unordered_set<std::string> entries_;
};

namespace detail {

inline bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
inline bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }
inline bool is_closer(char c) { return c == ')' || c == ']' || c == '}' || c == '"' || c == '\''; }
inline bool is_opener(char c) { return c == '(' || c == '[' || c == '{' || c == '"' || c == '\''; }

inline TextSpan trim_span(std::string_view text, std::size_t begin, std::size_t end) {
    while (begin < end && is_space(text[begin])) {
        ++begin;
    }
    while (end > begin && is_space(text[end - 1])) {
        --end;
    }
    return {begin, end};
}

}  // namespace detail

/// Rule-based sentence splitter. A boundary is placed after a run of
/// terminal punctuation (plus closing brackets/quotes) when it is followed
/// by whitespace and then an upper-case letter or digit, unless the word
/// carrying the period is a known abbreviation. Returned spans are trimmed,
/// ordered and non-overlapping; everything outside them is whitespace.
inline std::vector<TextSpan> segment_sentences(std::string_view text,
                                               const AbbreviationLexicon& abbreviations =
                                                   AbbreviationLexicon::biomedical()) {
    using namespace detail;
    std::vector<TextSpan> spans;
    const std::size_t n = text.size();
    std::size_t start = 0;
    while (start < n && is_space(text[start])) {
        ++start;
    }
    std::size_t i = start;
    while (i < n) {
        if (!is_terminal(text[i])) {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        while (j < n && (is_terminal(text[j]) || is_closer(text[j]))) {
            ++j;
        }
        if (j >= n || !is_space(text[j])) {
            i = j;
            continue;
        }
        std::size_t k = j;
        while (k < n && is_space(text[k])) {
            ++k;
        }
        if (k >= n) {
            break;
        }
        std::size_t look = k;
        while (look < n && is_opener(text[look])) {
            ++look;
        }
        const bool capital_next =
            look < n && (std::isupper(static_cast<unsigned char>(text[look])) ||
                         std::isdigit(static_cast<unsigned char>(text[look])));
        bool abbreviation = false;
        if (text[i] == '.') {
            std::size_t w = i;
            while (w > start && !is_space(text[w - 1])) {
                --w;
            }
            while (w < i && is_opener(text[w])) {
                ++w;
            }
            abbreviation = abbreviations.contains(text.substr(w, i + 1 - w));
        }
        if (capital_next && !abbreviation) {
            TextSpan s = trim_span(text, start, j);
            if (s.begin < s.end) {
                spans.push_back(s);
            }
            start = k;
        }
        i = k;
    }
    TextSpan tail = trim_span(text, start, n);
    if (tail.begin < tail.end) {
        spans.push_back(tail);
    }
    return spans;
}

}  // namespace semir
