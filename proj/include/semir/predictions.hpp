#pragma once

#include <filesystem>
#include <string>

#include "semir/common.hpp"
#include "semir/corpus.hpp"
#include "semir/detail/json_util.hpp"
#include "semir/run.hpp"

namespace semir {

/// One "questions" element of a BioASQ predictions file.
inline detail::Json run_entry_to_json(const RunEntry& e) {
    using detail::Json;
    Json docs = Json::array();
    for (const auto& d : e.docs) {
        docs.push_back(pubmed_url(d.doc_id));
    }
    Json snippets = Json::array();
    for (const auto& s : e.snippets) {
        snippets.push_back(detail::snippet_to_json(s.snippet));
    }
    return Json{{"id", e.query_id}, {"body", e.body}, {"documents", std::move(docs)}, {"snippets", std::move(snippets)}};
}

inline std::string write_predictions(const RankedRun& run) {
    detail::Json questions = detail::Json::array();
    for (const auto& e : run.entries()) {
        questions.push_back(run_entry_to_json(e));
    }
    return detail::Json{{"questions", std::move(questions)}}.dump(2);
}

inline void save_predictions(const RankedRun& run, const std::filesystem::path& path) {
    write_file_atomic(path, write_predictions(run));
}

namespace detail {

inline void check_snippet_bounds(const Snippet& s, const Corpus& corpus, const std::string& path) {
    const Document* doc = corpus.find(s.doc_id);
    if (doc == nullptr) {
        throw ValidationError(path + ": unknown document '" + s.doc_id + "'");
    }
    if (s.begin > doc->section_text(s.begin_section).size() || s.end > doc->section_text(s.end_section).size()) {
        throw ValidationError(path + ": snippet offsets out of document bounds");
    }
}

}  // namespace detail

/// Parses a BioASQ predictions file. With a corpus, every snippet must lie
/// inside its document. Errors carry a JSON path.
inline RankedRun read_predictions(const std::string& text, const Corpus* corpus = nullptr,
                                  const std::string& origin = "predictions") {
    using namespace detail;
    const Json root = parse_json(text, origin);
    const Json& questions = require_array(root, "questions", "$");
    RankedRun run;
    for (std::size_t qi = 0; qi < questions.size(); ++qi) {
        const std::string path = index_path("$.questions", qi);
        const Json& q = questions[qi];
        RunEntry e;
        e.query_id = require_string(q, "id", path);
        e.body = q.contains("body") ? require_string(q, "body", path) : std::string();
        const Json& docs = require_array(q, "documents", path);
        if (docs.size() > kMaxAnswers) {
            throw ValidationError(child_path(path, "documents") + ": more than 10 documents");
        }
        for (std::size_t di = 0; di < docs.size(); ++di) {
            if (!docs[di].is_string()) {
                throw ParseError(index_path(child_path(path, "documents"), di) + ": expected string");
            }
            e.docs.push_back({doc_id_from_url(docs[di].get<std::string>()), 0.0});
        }
        if (q.contains("snippets")) {
            const Json& snippets = require_array(q, "snippets", path);
            if (snippets.size() > kMaxAnswers) {
                throw ValidationError(child_path(path, "snippets") + ": more than 10 snippets");
            }
            for (std::size_t si = 0; si < snippets.size(); ++si) {
                const std::string spath = index_path(child_path(path, "snippets"), si);
                Snippet s = parse_snippet(snippets[si], spath);
                if (corpus != nullptr) {
                    check_snippet_bounds(s, *corpus, spath);
                }
                e.snippets.push_back({std::move(s), 0.0, std::nullopt});
            }
        }
        try {
            run.add(std::move(e));
        } catch (const ValidationError& err) {
            throw ValidationError(path + ": " + err.what());
        }
    }
    return run;
}

inline RankedRun load_predictions(const std::filesystem::path& path, const Corpus* corpus = nullptr) {
    return read_predictions(read_file(path), corpus, path.string());
}

}  // namespace semir
