// semir: command line front end for ingesting, indexing, ranking,
// tuning, evaluating, generating SIA data and serving.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semir/corpus.hpp"
#include "semir/fusion.hpp"
#include "semir/gateway.hpp"
#include "semir/lexindex.hpp"
#include "semir/metrics.hpp"
#include "semir/optimizer.hpp"
#include "semir/predictions.hpp"
#include "semir/scorers.hpp"
#include "semir/siagen.hpp"

namespace fs = std::filesystem;
using namespace semir;

namespace {

struct ScorerOptions {
    std::string embeddings;
    std::string relevance_endpoint;
    std::string sts_endpoint;
    std::string sia_endpoint;
    std::string cache_path;
    std::size_t hashed_dim = 64;
    int timeout_ms = 30000;

    void add_to(CLI::App* app) {
        app->add_option("--embeddings", embeddings, "Word vectors, one 'word v1 .. vd' per line");
        app->add_option("--relevance-endpoint", relevance_endpoint, "External relevance scorer (cmd:... or tcp:host:port)");
        app->add_option("--sts-endpoint", sts_endpoint, "External STS scorer");
        app->add_option("--sia-endpoint", sia_endpoint, "External SIA scorer");
        app->add_option("--score-cache", cache_path, "Score cache file, loaded if present and saved on exit");
        app->add_option("--hashed-dim", hashed_dim, "Dimension of hashed vectors used when no embeddings are given")
            ->check(CLI::PositiveNumber);
        app->add_option("--scorer-timeout-ms", timeout_ms, "Per-batch timeout for external scorers")
            ->check(CLI::PositiveNumber);
    }
};

struct RankingOptions {
    std::size_t pool_k = 100;
    double k1 = 0.9;
    double b = 0.4;
    bool bm25_minmax = false;
    bool raw_scales = false;

    void add_to(CLI::App* app) {
        app->add_option("--pool-k", pool_k, "Documents fetched by BM25 before reranking")->check(CLI::PositiveNumber);
        app->add_option("--k1", k1, "BM25 k1");
        app->add_option("--b", b, "BM25 b");
        app->add_flag("--bm25-minmax", bm25_minmax, "Min-max normalize BM25 over the pool");
        app->add_flag("--raw-scales", raw_scales, "Fuse perspective scores on their native scales");
    }

    RankingParams params() const {
        RankingParams p;
        p.pool_k = pool_k;
        p.bm25.k1 = k1;
        p.bm25.b = b;
        p.bm25_minmax = bm25_minmax;
        p.use_raw_scales = raw_scales;
        p.validate();
        return p;
    }
};

std::shared_ptr<ScoreCache> open_cache(const std::string& path) {
    if (path.empty()) {
        return nullptr;
    }
    return std::make_shared<ScoreCache>(fs::exists(path) ? ScoreCache::load(path) : ScoreCache{});
}

ScorerSet make_scorers(const ScorerOptions& o, const std::shared_ptr<const InvertedIndex>& index,
                       const std::shared_ptr<ScoreCache>& cache) {
    std::shared_ptr<const EmbeddingTable> emb;
    if (!o.embeddings.empty()) {
        emb = std::make_shared<EmbeddingTable>(EmbeddingTable::load_text(o.embeddings));
    } else {
        const auto vocab = index ? index->terms() : std::vector<std::string>{};
        emb = std::make_shared<EmbeddingTable>(EmbeddingTable::hashed(vocab, o.hashed_dim));
    }
    ScorerSet set = ScorerSet::reference(emb, index);
    const std::chrono::milliseconds timeout(o.timeout_ms);
    if (!o.relevance_endpoint.empty()) {
        set.relevance = std::make_shared<ExternalScorer>(ScorerKind::relevance, o.relevance_endpoint, "", timeout);
    }
    if (!o.sts_endpoint.empty()) {
        set.sts = std::make_shared<ExternalScorer>(ScorerKind::sts, o.sts_endpoint, "", timeout);
    }
    if (!o.sia_endpoint.empty()) {
        set.sia = std::make_shared<ExternalScorer>(ScorerKind::sia, o.sia_endpoint, "", timeout);
    }
    return cache ? set.cached(cache) : set;
}

void save_cache(const std::shared_ptr<ScoreCache>& cache, const std::string& path) {
    if (cache) {
        cache->save(path);
        std::fprintf(stderr, "score cache: %zu hits, %zu misses, %zu entries\n", cache->hits(), cache->misses(),
                     cache->size());
    }
}

FusionWeights load_weights(const std::string& path) {
    if (path.empty()) {
        return balanced_init();
    }
    return FusionWeights::from_json(detail::parse_json(read_file(path), path));
}

std::shared_ptr<const InvertedIndex> open_index(const std::string& index_path, const Corpus& corpus) {
    if (!index_path.empty()) {
        auto idx = std::make_shared<InvertedIndex>(InvertedIndex::load(index_path));
        for (const auto& d : corpus.documents()) {
            if (!idx->docno(d.doc_id)) {
                throw ValidationError("index " + index_path + " does not cover document '" + d.doc_id +
                                      "'; rebuild it from this corpus");
            }
        }
        return idx;
    }
    return std::make_shared<InvertedIndex>(InvertedIndex::build(corpus));
}

std::string evaluation_output(const EvalReport& report, bool as_json) {
    return as_json ? report.to_json().dump(2) + "\n" : report.to_table();
}

/// "name=path" pairs.
std::pair<std::string, std::string> split_assignment(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
        throw ValidationError("expected name=path, got '" + s + "'");
    }
    return {s.substr(0, eq), s.substr(eq + 1)};
}

httplib::Server* g_server = nullptr;

void handle_stop(int) {
    if (g_server != nullptr) {
        g_server->stop();
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semir: multi-perspective semantic retrieval"};
    app.require_subcommand(1);

    // ingest
    std::string ingest_in, ingest_out, ingest_gold;
    auto* ingest = app.add_subcommand("ingest", "Validate and segment a corpus JSONL file");
    ingest->add_option("--corpus", ingest_in, "Input JSONL with doc_id, title, abstract")->required();
    ingest->add_option("--out", ingest_out, "Normalized corpus JSONL");
    ingest->add_option("--gold", ingest_gold, "Also validate a BioASQ gold file");

    // index
    std::string index_corpus, index_out, index_field = "title_abstract";
    bool index_stop = false, index_stem = false;
    auto* index = app.add_subcommand("index", "Build a BM25 inverted index");
    index->add_option("--corpus", index_corpus)->required();
    index->add_option("--out", index_out)->required();
    index->add_option("--field", index_field, "title_abstract, title or abstract")
        ->check(CLI::IsMember({"title_abstract", "title", "abstract"}));
    index->add_flag("--stopwords", index_stop, "Drop English stopwords");
    index->add_flag("--stem", index_stem, "Apply the S-stemmer");

    // search
    std::string search_corpus, search_index, search_query, search_weights, search_id = "search";
    std::size_t search_docs = kMaxAnswers, search_snips = kMaxAnswers;
    ScorerOptions search_scorers;
    RankingOptions search_rank;
    auto* search = app.add_subcommand("search", "Rank one query; prints one predictions entry");
    search->add_option("--corpus", search_corpus)->required();
    search->add_option("--index", search_index, "Index file; built in memory when absent");
    search->add_option("--query", search_query)->required();
    search->add_option("--id", search_id, "Query id written to the output");
    search->add_option("--weights", search_weights, "Weights profile JSON (default balanced)");
    search->add_option("--top-docs", search_docs)->check(CLI::Range(0, 10));
    search->add_option("--top-snippets", search_snips)->check(CLI::Range(0, 10));
    search_scorers.add_to(search);
    search_rank.add_to(search);

    // rank-run
    std::string rr_corpus, rr_index, rr_queries, rr_weights, rr_out, rr_debug;
    ScorerOptions rr_scorers;
    RankingOptions rr_rank;
    auto* rank_run = app.add_subcommand("rank-run", "Rank every query of a BioASQ file");
    rank_run->add_option("--corpus", rr_corpus)->required();
    rank_run->add_option("--index", rr_index);
    rank_run->add_option("--queries", rr_queries, "BioASQ JSON; gold labels are not required")->required();
    rank_run->add_option("--weights", rr_weights);
    rank_run->add_option("--out", rr_out, "Predictions JSON")->required();
    rank_run->add_option("--debug-tsv", rr_debug, "Per-sentence fusion scores");
    rr_scorers.add_to(rank_run);
    rr_rank.add_to(rank_run);

    // optimize
    std::string opt_corpus, opt_index, opt_gold, opt_config, opt_out, opt_trace;
    std::size_t opt_dev_count = 0;
    std::uint64_t opt_split_seed = 0;
    ScorerOptions opt_scorers;
    RankingOptions opt_rank;
    auto* optimize = app.add_subcommand("optimize", "Tune fusion weights by alternating optimization");
    optimize->add_option("--corpus", opt_corpus)->required();
    optimize->add_option("--index", opt_index);
    optimize->add_option("--gold", opt_gold, "Labelled BioASQ JSON")->required();
    optimize->add_option("--config", opt_config, "Optimizer config JSON");
    optimize->add_option("--out", opt_out, "Learned weights JSON")->required();
    optimize->add_option("--trace", opt_trace, "Trace JSONL");
    optimize->add_option("--dev-count", opt_dev_count, "Tune on a held-out dev split of this size");
    optimize->add_option("--split-seed", opt_split_seed);
    opt_scorers.add_to(optimize);
    opt_rank.add_to(optimize);

    // evaluate
    std::string eval_pred, eval_gold, eval_denom = "gold", eval_corpus;
    bool eval_json = false;
    std::size_t eval_min_overlap = 1;
    auto* evaluate = app.add_subcommand("evaluate", "Score a predictions file against gold");
    evaluate->add_option("--pred", eval_pred)->required();
    evaluate->add_option("--gold", eval_gold)->required();
    evaluate->add_option("--corpus", eval_corpus, "Check snippet offsets against this corpus");
    evaluate->add_option("--denom", eval_denom, "AP denominator: gold or capped")
        ->check(CLI::IsMember({"gold", "capped"}));
    evaluate->add_option("--min-overlap", eval_min_overlap, "Characters two snippets must share")
        ->check(CLI::PositiveNumber);
    evaluate->add_flag("--json", eval_json, "Print the report as JSON");

    // datagen
    std::string dg_qasc, dg_entities, dg_out, dg_jsonl;
    SiaGenConfig dg_cfg;
    ScorerOptions dg_scorers;
    auto* datagen = app.add_subcommand("datagen", "Generate SIA training samples from QASC-style rows");
    datagen->add_option("--qasc", dg_qasc)->required();
    datagen->add_option("--entities", dg_entities, "Entity term list, one per line");
    datagen->add_option("--out", dg_out, "TSV output")->required();
    datagen->add_option("--jsonl", dg_jsonl, "Also write JSONL");
    datagen->add_option("--threshold", dg_cfg.sts_threshold, "STS threshold for category 0")->check(CLI::Range(0.0, 5.0));
    datagen->add_option("--swap-prob", dg_cfg.swap_prob)->check(CLI::Range(0.0, 1.0));
    datagen->add_option("--seed", dg_cfg.seed);
    datagen->add_flag("--keep-unchanged-swaps", dg_cfg.keep_unchanged_swaps);
    dg_scorers.add_to(datagen);

    // serve
    std::string sv_corpus, sv_index, sv_host = "127.0.0.1", sv_static, sv_default_profile;
    int sv_port = 8080;
    std::vector<std::string> sv_repos, sv_profiles;
    ScorerOptions sv_scorers;
    RankingOptions sv_rank;
    auto* serve = app.add_subcommand("serve", "Run the HTTP API");
    serve->add_option("--corpus", sv_corpus, "Corpus for /search");
    serve->add_option("--index", sv_index);
    serve->add_option("--host", sv_host);
    serve->add_option("--port", sv_port)->check(CLI::Range(0, 65535));
    serve->add_option("--repository", sv_repos, "name=corpus.jsonl for /bert-ir (repeatable)");
    serve->add_option("--profile", sv_profiles, "name=weights.json (repeatable)");
    serve->add_option("--default-profile", sv_default_profile);
    serve->add_option("--static", sv_static, "Directory served under /ui");
    sv_scorers.add_to(serve);
    sv_rank.add_to(serve);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) {
            const Corpus corpus = ingest_corpus_jsonl(ingest_in);
            std::size_t sentences = 0;
            for (const auto& d : corpus.documents()) {
                sentences += d.sentences.size();
            }
            if (!ingest_gold.empty()) {
                const QuerySet gold = ingest_bioasq_gold(ingest_gold);
                std::printf("gold: %zu questions\n", gold.size());
            }
            if (!ingest_out.empty()) {
                write_corpus_jsonl(corpus, ingest_out);
            }
            std::printf("documents: %zu\nsentences: %zu\nfingerprint: %s\n", corpus.size(), sentences,
                        corpus_fingerprint(corpus).c_str());
        } else if (*index) {
            const Corpus corpus = ingest_corpus_jsonl(index_corpus);
            const FieldPolicy policy = index_field == "title"      ? FieldPolicy::title
                                       : index_field == "abstract" ? FieldPolicy::abstract
                                                                   : FieldPolicy::title_abstract;
            const auto idx = InvertedIndex::build(corpus, policy, {index_stop, index_stem});
            idx.save(index_out);
            std::printf("documents: %zu\nterms: %zu\nfingerprint: %s\n", idx.doc_count(), idx.terms().size(),
                        idx.fingerprint().c_str());
        } else if (*search) {
            auto corpus = std::make_shared<const Corpus>(ingest_corpus_jsonl(search_corpus));
            auto idx = open_index(search_index, *corpus);
            auto cache = open_cache(search_scorers.cache_path);
            const Pipeline pipeline(corpus, idx, make_scorers(search_scorers, idx, cache), search_rank.params());
            std::cout << search_answer(pipeline, load_weights(search_weights), {search_id, search_query}, search_docs,
                                       search_snips)
                      << '\n';
            save_cache(cache, search_scorers.cache_path);
        } else if (*rank_run) {
            auto corpus = std::make_shared<const Corpus>(ingest_corpus_jsonl(rr_corpus));
            auto idx = open_index(rr_index, *corpus);
            const QuerySet queries = ingest_bioasq_gold(rr_queries);
            auto cache = open_cache(rr_scorers.cache_path);
            const Pipeline pipeline(corpus, idx, make_scorers(rr_scorers, idx, cache), rr_rank.params());
            std::vector<FusionDebugRow> debug;
            const RankedRun run = pipeline.rank_all(queries, load_weights(rr_weights), rr_debug.empty() ? nullptr : &debug);
            save_predictions(run, rr_out);
            if (!rr_debug.empty()) {
                write_file_atomic(rr_debug, debug_rows_to_tsv(debug));
            }
            save_cache(cache, rr_scorers.cache_path);
            std::printf("ranked %zu queries -> %s\n", run.size(), rr_out.c_str());
        } else if (*optimize) {
            auto corpus = std::make_shared<const Corpus>(ingest_corpus_jsonl(opt_corpus));
            auto idx = open_index(opt_index, *corpus);
            QuerySet gold = ingest_bioasq_gold(opt_gold);
            if (opt_dev_count > 0) {
                gold = split_train_dev(gold, opt_split_seed, opt_dev_count).second;
            }
            const OptimizeConfig cfg = opt_config.empty()
                                           ? OptimizeConfig{}
                                           : OptimizeConfig::from_json(detail::parse_json(read_file(opt_config), opt_config));
            auto cache = open_cache(opt_scorers.cache_path);
            const Pipeline pipeline(corpus, idx, make_scorers(opt_scorers, idx, cache), opt_rank.params());
            const DevSet dev = DevSet::build(pipeline, gold);
            save_cache(cache, opt_scorers.cache_path);
            const OptimizeResult res = alternating_optimize(cfg, dev);
            detail::Json out = res.best.to_json();
            out["objective"] = to_string(cfg.m_objective);
            out["objective_value"] = res.best_m_value;
            write_file_atomic(opt_out, out.dump(2) + "\n");
            if (!opt_trace.empty()) {
                write_file_atomic(opt_trace, res.trace.to_jsonl());
            }
            std::printf("%s = %.6f after %zu phases\n", std::string(to_string(cfg.m_objective)).c_str(),
                        res.best_m_value, res.trace.phases.size());
        } else if (*evaluate) {
            std::unique_ptr<Corpus> corpus;
            if (!eval_corpus.empty()) {
                corpus = std::make_unique<Corpus>(ingest_corpus_jsonl(eval_corpus));
            }
            const RankedRun run = load_predictions(eval_pred, corpus.get());
            const QuerySet gold = ingest_bioasq_gold(eval_gold);
            EvalConfig cfg;
            cfg.denom = eval_denom == "capped" ? DenomMode::capped : DenomMode::gold;
            cfg.policy.min_overlap = eval_min_overlap;
            std::cout << evaluation_output(evaluate_run(run, gold, cfg), eval_json);
        } else if (*datagen) {
            const auto rows = load_qasc_jsonl(dg_qasc);
            const TermLexicon entities = dg_entities.empty() ? TermLexicon{} : TermLexicon::load(dg_entities);
            std::shared_ptr<const EmbeddingTable> emb;
            if (!dg_scorers.embeddings.empty()) {
                emb = std::make_shared<EmbeddingTable>(EmbeddingTable::load_text(dg_scorers.embeddings));
            } else {
                std::vector<std::string> vocab;
                for (const auto& r : rows) {
                    for (const std::string* t : {&r.question, &r.fact1, &r.fact2, &r.combined_fact}) {
                        auto toks = tokenize(*t);
                        vocab.insert(vocab.end(), toks.begin(), toks.end());
                    }
                }
                emb = std::make_shared<EmbeddingTable>(EmbeddingTable::hashed(vocab, dg_scorers.hashed_dim));
            }
            auto cache = open_cache(dg_scorers.cache_path);
            ScorerSet set = ScorerSet::reference(emb);
            if (!dg_scorers.relevance_endpoint.empty()) {
                set.relevance = std::make_shared<ExternalScorer>(ScorerKind::relevance, dg_scorers.relevance_endpoint);
            }
            if (!dg_scorers.sts_endpoint.empty()) {
                set.sts = std::make_shared<ExternalScorer>(ScorerKind::sts, dg_scorers.sts_endpoint);
            }
            if (cache) {
                set = set.cached(cache);
            }
            const auto samples = generate_sia(rows, *set.relevance, *set.sts, entities, *emb, dg_cfg);
            write_file_atomic(dg_out, sia_to_tsv(samples));
            if (!dg_jsonl.empty()) {
                write_file_atomic(dg_jsonl, sia_to_jsonl(samples));
            }
            save_cache(cache, dg_scorers.cache_path);
            std::printf("%zu samples from %zu rows -> %s\n", samples.size(), rows.size(), dg_out.c_str());
        } else if (*serve) {
            auto state = std::make_shared<GatewayState>();
            if (!sv_corpus.empty()) {
                state->corpus = std::make_shared<const Corpus>(ingest_corpus_jsonl(sv_corpus));
                state->index = open_index(sv_index, *state->corpus);
            }
            auto cache = open_cache(sv_scorers.cache_path);
            const ScorerSet scorers = make_scorers(sv_scorers, state->index, cache);
            state->relevance = scorers.relevance;
            state->sts = scorers.sts;
            if (state->corpus) {
                state->pipeline = std::make_shared<const Pipeline>(state->corpus, state->index, scorers, sv_rank.params());
            }
            for (const auto& r : sv_repos) {
                auto [name, path] = split_assignment(r);
                state->repositories.emplace(name, Repository::from_corpus(name, ingest_corpus_jsonl(path)));
            }
            for (const auto& p : sv_profiles) {
                auto [name, path] = split_assignment(p);
                state->profiles.emplace(name, load_weights(path));
            }
            if (state->profiles.empty()) {
                state->profiles.emplace("balanced", balanced_init());
            }
            state->default_profile = sv_default_profile.empty() ? state->profiles.begin()->first : sv_default_profile;
            if (state->profiles.count(state->default_profile) == 0) {
                throw ValidationError("default profile '" + state->default_profile + "' is not loaded");
            }
            Gateway gateway(state);
            httplib::Server server;
            gateway.mount(server, sv_static);
            g_server = &server;
            std::signal(SIGINT, handle_stop);
            std::signal(SIGTERM, handle_stop);
            int port = sv_port;
            if (port == 0) {
                port = server.bind_to_any_port(sv_host);
            } else if (!server.bind_to_port(sv_host, port)) {
                throw TransportError("cannot bind " + sv_host + ":" + std::to_string(port));
            }
            std::fprintf(stderr, "listening on http://%s:%d\n", sv_host.c_str(), port);
            server.listen_after_bind();
            save_cache(cache, sv_scorers.cache_path);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "semir %s: error: %s\n", app.get_subcommands().front()->get_name().c_str(), e.what());
        return 1;
    }
    return 0;
}
