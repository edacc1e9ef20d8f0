#pragma once

#include <chrono>
#include <charconv>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>

#include "semir/common.hpp"
#include "semir/corpus.hpp"
#include "semir/detail/json_util.hpp"
#include "semir/fusion.hpp"
#include "semir/lexindex.hpp"
#include "semir/predictions.hpp"
#include "semir/scorers.hpp"

namespace semir {

inline constexpr std::string_view kMedicApiVersion = "semir-medic/1";
inline constexpr double kDefaultMedicAlpha = 0.8;
inline constexpr std::size_t kDefaultMedicTopn = 3;
inline constexpr std::string_view kDefaultRepository = "handbook";

/// A named set of passages the interactive endpoint can rank.
struct Repository {
    std::string name;
    std::vector<MedicPassage> passages;
    std::string fingerprint;

    static Repository from_corpus(std::string name, const Corpus& corpus) {
        Repository r{std::move(name), {}, corpus_fingerprint(corpus)};
        for (const auto& doc : corpus.documents()) {
            r.passages.push_back(passage_from_document(doc, r.name));
        }
        return r;
    }
};

/// Everything a request reads. Replaced whole, never mutated in place.
struct GatewayState {
    std::shared_ptr<const Corpus> corpus;
    std::shared_ptr<const InvertedIndex> index;
    std::shared_ptr<const Pipeline> pipeline;
    std::map<std::string, FusionWeights> profiles;
    std::string default_profile;
    std::map<std::string, Repository> repositories;
    std::shared_ptr<const Scorer> relevance;
    std::shared_ptr<const Scorer> sts;
};

/// One answer in the shape of a predictions-file "questions" entry. The CLI
/// `search` command and GET /search both print this string.
inline std::string search_answer(const Pipeline& pipeline, const FusionWeights& wts, const Query& query,
                                 std::size_t top_docs = kMaxAnswers, std::size_t top_snippets = kMaxAnswers) {
    RankingParams params = pipeline.params();
    params.top_docs = top_docs;
    params.top_snippets = top_snippets;
    params.validate();
    wts.validate();
    return run_entry_to_json(fuse(pipeline.build_pool(query), wts, params)).dump(2);
}

struct ApiResponse {
    int status = 200;
    std::string body;
    std::map<std::string, std::string> headers;
};

namespace detail {

inline ApiResponse api_error(int status, std::string_view code, std::string_view message) {
    return {status, Json{{"error", {{"code", code}, {"message", message}}}}.dump(), {}};
}

inline std::optional<std::string> param(const httplib::Params& params, const std::string& key) {
    auto it = params.find(key);
    if (it == params.end()) {
        return std::nullopt;
    }
    return it->second;
}

inline std::optional<double> parse_real(std::string_view s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
        return std::nullopt;
    }
    return v;
}

inline std::optional<long long> parse_integer(std::string_view s) {
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        return std::nullopt;
    }
    return v;
}

}  // namespace detail

class Gateway {
public:
    explicit Gateway(std::shared_ptr<const GatewayState> state) : state_(std::move(state)) {
        if (!state_) {
            throw ValidationError("gateway needs a state");
        }
    }

    std::shared_ptr<const GatewayState> state() const {
        std::lock_guard lock(mu_);
        return state_;
    }

    /// In-flight requests finish on the state they started with.
    void swap_state(std::shared_ptr<const GatewayState> next) {
        if (!next) {
            throw ValidationError("gateway needs a state");
        }
        std::lock_guard lock(mu_);
        state_ = std::move(next);
    }

    ApiResponse bert_ir(const httplib::Params& params) const {
        using detail::api_error;
        const auto st = state();
        const auto query = detail::param(params, "query");
        if (!query || query->empty()) {
            return api_error(400, "missing_query", "the query parameter is required");
        }
        double alpha = kDefaultMedicAlpha;
        if (auto a = detail::param(params, "alpha")) {
            auto v = detail::parse_real(*a);
            if (!v || *v < 0.0 || *v > 1.0) {
                return api_error(400, "bad_alpha", "alpha must be a number within [0,1]");
            }
            alpha = *v;
        }
        std::size_t topn = kDefaultMedicTopn;
        if (auto t = detail::param(params, "topn")) {
            auto v = detail::parse_integer(*t);
            if (!v || *v < 1) {
                return api_error(400, "bad_topn", "topn must be an integer >= 1");
            }
            topn = static_cast<std::size_t>(*v);
        }
        if (!st->relevance || !st->sts) {
            return api_error(503, "no_scorers", "no scorers are loaded");
        }

        const auto sentences = detail::param(params, "sentences");
        const auto repo_param = detail::param(params, "repository");
        const Repository* repo = nullptr;
        if (repo_param || !sentences) {
            const std::string name = repo_param.value_or(std::string(kDefaultRepository));
            auto it = st->repositories.find(name);
            if (it == st->repositories.end()) {
                return api_error(404, "unknown_repository", "no repository named '" + name + "'");
            }
            repo = &it->second;
        }

        std::vector<MedicPassage> custom;
        std::span<const MedicPassage> passages;
        if (sentences) {
            custom.push_back(passage_from_text(*sentences));
            passages = custom;
        } else {
            passages = repo->passages;
        }
        const auto items = medic_rank(*query, passages, topn, alpha, *st->relevance, *st->sts);

        detail::Json out_items = detail::Json::array();
        for (const auto& it : items) {
            out_items.push_back({{"sentence", it.sentence},
                                 {"score", it.score},
                                 {"context_before", it.context_before},
                                 {"context_after", it.context_after},
                                 {"source", {{"name", it.source}, {"doc_id", it.doc_id}, {"sent_index", it.sent_index}}}});
        }
        detail::Json body = {{"version", kMedicApiVersion},
                             {"query", *query},
                             {"alpha", alpha},
                             {"topn", topn},
                             {"source", sentences ? "sentences" : "repository"},
                             {"repository", sentences ? detail::Json(nullptr) : detail::Json(repo->name)},
                             {"models", {{"relevance", st->relevance->id()}, {"sts", st->sts->id()}}},
                             {"items", std::move(out_items)}};
        return {200, body.dump(), {}};
    }

    ApiResponse search(const httplib::Params& params) const {
        using detail::api_error;
        const auto st = state();
        if (!st->pipeline) {
            return api_error(503, "no_index", "no index is loaded");
        }
        const auto query = detail::param(params, "query");
        if (!query || query->empty()) {
            return api_error(400, "missing_query", "the query parameter is required");
        }
        std::size_t limits[2] = {kMaxAnswers, kMaxAnswers};
        const char* names[2] = {"top_docs", "top_snippets"};
        for (int k = 0; k < 2; ++k) {
            if (auto t = detail::param(params, names[k])) {
                auto v = detail::parse_integer(*t);
                if (!v || *v < 0 || *v > static_cast<long long>(kMaxAnswers)) {
                    return api_error(400, std::string("bad_") + names[k],
                                     std::string(names[k]) + " must be an integer within [0,10]");
                }
                limits[k] = static_cast<std::size_t>(*v);
            }
        }
        const std::string profile = detail::param(params, "profile").value_or(st->default_profile);
        auto pit = st->profiles.find(profile);
        if (pit == st->profiles.end()) {
            return api_error(404, "unknown_profile", "no weights profile named '" + profile + "'");
        }
        const Query q{detail::param(params, "id").value_or("search"), *query};
        return {200, search_answer(*st->pipeline, pit->second, q, limits[0], limits[1]), {}};
    }

    ApiResponse health() const {
        const auto st = state();
        detail::Json repos = detail::Json::array();
        for (const auto& [name, r] : st->repositories) {
            repos.push_back({{"name", name}, {"fingerprint", r.fingerprint}, {"passages", r.passages.size()}});
        }
        detail::Json profiles = detail::Json::array();
        for (const auto& [name, w] : st->profiles) {
            profiles.push_back(name);
        }
        detail::Json body = {
            {"status", "ok"},
            {"version", kMedicApiVersion},
            {"index", st->index ? detail::Json(st->index->fingerprint()) : detail::Json(nullptr)},
            {"corpus", st->corpus ? detail::Json(corpus_fingerprint(*st->corpus)) : detail::Json(nullptr)},
            {"repositories", std::move(repos)},
            {"profiles", std::move(profiles)},
            {"default_profile", st->profiles.empty() ? detail::Json(nullptr) : detail::Json(st->default_profile)}};
        return {200, body.dump(), {}};
    }

    /// Registers every route on `server`. A non-empty `static_dir` is served
    /// under /ui/.
    void mount(httplib::Server& server, const std::string& static_dir = "") const {
        auto wrap = [this](ApiResponse (Gateway::*fn)(const httplib::Params&) const) {
            return [this, fn](const httplib::Request& req, httplib::Response& res) {
                const auto t0 = std::chrono::steady_clock::now();
                ApiResponse r;
                try {
                    r = (this->*fn)(req.params);
                } catch (const ValidationError& e) {
                    r = detail::api_error(400, "invalid_request", e.what());
                } catch (const NotFoundError& e) {
                    r = detail::api_error(404, "not_found", e.what());
                } catch (const std::exception& e) {
                    r = detail::api_error(500, "internal", e.what());
                }
                const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0);
                write(res, r);
                res.set_header("X-Elapsed-Ms", std::to_string(ms.count()));
            };
        };
        server.Get("/bert-ir", wrap(&Gateway::bert_ir));
        server.Get("/rank", wrap(&Gateway::bert_ir));
        server.Get("/search", wrap(&Gateway::search));
        server.Get("/health", [this](const httplib::Request&, httplib::Response& res) { write(res, health()); });
        if (!static_dir.empty() && !server.set_mount_point("/ui", static_dir)) {
            throw NotFoundError("static directory " + static_dir + " does not exist");
        }
    }

private:
    static void write(httplib::Response& res, const ApiResponse& r) {
        res.status = r.status;
        for (const auto& [k, v] : r.headers) {
            res.set_header(k, v);
        }
        res.set_content(r.body, "application/json; charset=utf-8");
    }

    mutable std::mutex mu_;
    std::shared_ptr<const GatewayState> state_;
};

}  // namespace semir
