#pragma once

// A small gateway state, a live server wrapper and the API contract checks
// shared by the unit suite and the acceptance run.

#include <future>
#include <thread>

#include "semir/gateway.hpp"
#include "support/planted.hpp"

namespace semir_test {

inline std::shared_ptr<const semir::GatewayState> gateway_state(bool with_scorers = true, bool with_index = true) {
    auto corpus = std::make_shared<semir::Corpus>();
    const char* topics[] = {"heart failure", "insulin therapy", "asthma control", "kidney disease", "stroke care"};
    for (int d = 0; d < 25; ++d) {
        const std::string t = topics[d % 5];
        corpus->add(semir::make_document(
            std::to_string(1000 + d), "Notes on " + t + ".",
            "Patients with " + t + " need follow up. Dose " + std::to_string(d) + " was used for " + t +
                ". Outcomes improved in group " + std::to_string(d % 3) + ". Adverse events were rare."));
    }
    auto index = std::make_shared<semir::InvertedIndex>(semir::InvertedIndex::build(*corpus));
    auto emb = std::make_shared<semir::EmbeddingTable>(semir::EmbeddingTable::hashed(index->terms(), 16));
    const auto scorers = semir::ScorerSet::reference(emb, index);

    auto st = std::make_shared<semir::GatewayState>();
    st->corpus = corpus;
    st->index = index;
    if (with_index) {
        st->pipeline = std::make_shared<semir::Pipeline>(corpus, index, scorers);
    }
    st->profiles["balanced"] = semir::FusionWeights::balanced();
    auto lexical = semir::FusionWeights::balanced();
    lexical.alpha = {1, 0, 0, 0};
    st->profiles["lexical"] = lexical;
    st->default_profile = "balanced";
    st->repositories.emplace("handbook", semir::Repository::from_corpus("handbook", *corpus));
    if (with_scorers) {
        st->relevance = scorers.relevance;
        st->sts = scorers.sts;
    }
    return st;
}

/// Gateway routes on an ephemeral localhost port for the lifetime of the
/// object.
class LiveServer {
public:
    explicit LiveServer(std::shared_ptr<const semir::GatewayState> state) : gateway_(std::move(state)) {
        gateway_.mount(server_);
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LiveServer() {
        server_.stop();
        thread_.join();
    }
    LiveServer(const LiveServer&) = delete;
    LiveServer& operator=(const LiveServer&) = delete;

    int port() const { return port_; }
    semir::Gateway& gateway() { return gateway_; }

    httplib::Result get(const std::string& path) const {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(30, 0);
        return c.Get(path);
    }

private:
    semir::Gateway gateway_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

inline std::string enc(const std::string& s) { return httplib::detail::encode_query_param(s); }

struct ContractReport {
    std::vector<std::string> failures;
    void expect(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
};

/// The /bert-ir and /search contract, over HTTP.
inline ContractReport check_api_contract(LiveServer& srv) {
    ContractReport rep;
    const auto st = srv.gateway().state();
    const std::string q = "heart failure follow up";

    auto body_of = [&](const std::string& path, int want_status) -> std::string {
        auto r = srv.get(path);
        if (!r) {
            rep.expect(false, path + ": no response");
            return {};
        }
        rep.expect(r->status == want_status, path + ": status " + std::to_string(r->status));
        return r->body;
    };

    // omitted alpha behaves as 0.8
    const std::string omitted = body_of("/bert-ir?query=" + enc(q) + "&topn=5", 200);
    const std::string explicit08 = body_of("/bert-ir?query=" + enc(q) + "&topn=5&alpha=0.8", 200);
    rep.expect(!omitted.empty() && omitted == explicit08, "alpha omitted differs from alpha=0.8");
    const auto j = semir::detail::Json::parse(omitted, nullptr, false);
    rep.expect(!j.is_discarded() && j["alpha"] == 0.8 && j["items"].size() == 5, "default response shape");

    // alpha = 1 is relevance-only: independent ordering over the repository
    const std::string rel_body = body_of("/bert-ir?query=" + enc(q) + "&topn=10&alpha=1", 200);
    struct Cand {
        double score;
        std::size_t order;
        std::string sentence;
    };
    std::vector<Cand> cands;
    for (const auto& p : st->repositories.at("handbook").passages) {
        for (const auto& s : p.sentences) {
            cands.push_back({st->relevance->score(q, s).normalized, cands.size(), s});
        }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        return a.score != b.score ? a.score > b.score : a.order < b.order;
    });
    const auto rj = semir::detail::Json::parse(rel_body, nullptr, false);
    bool same_order = !rj.is_discarded() && rj["items"].size() == 10;
    for (std::size_t i = 0; same_order && i < 10; ++i) {
        same_order = rj["items"][i]["sentence"] == cands[i].sentence && rj["items"][i]["score"] == cands[i].score;
    }
    rep.expect(same_order, "alpha=1 is not the relevance-only ordering");

    // custom sentences, with characters that need escaping
    const std::string text = "Heart failure & diuretics: 100% \"relief\"? Yes. Insulin + glucose/stress!";
    const auto cj = semir::detail::Json::parse(
        body_of("/bert-ir?query=" + enc("héart & failure") + "&topn=10&sentences=" + enc(text), 200), nullptr, false);
    bool round_trip = !cj.is_discarded() && cj["query"] == "héart & failure" && cj["source"] == "sentences" &&
                      cj["repository"].is_null() && !cj["items"].empty();
    std::string joined;
    for (std::size_t i = 0; round_trip && i < cj["items"].size(); ++i) {
        joined += cj["items"][i]["sentence"].get<std::string>() + "|";
    }
    round_trip = round_trip && joined.find("& diuretics: 100% \"relief\"") != std::string::npos &&
                 joined.find("Insulin + glucose/stress!") != std::string::npos;
    rep.expect(round_trip, "custom sentences round-trip");

    // malformed requests
    for (const auto& [path, status] : std::vector<std::pair<std::string, int>>{
             {"/bert-ir", 400},
             {"/bert-ir?query=", 400},
             {"/bert-ir?query=x&alpha=abc", 400},
             {"/bert-ir?query=x&alpha=1.5", 400},
             {"/bert-ir?query=x&alpha=-0.1", 400},
             {"/bert-ir?query=x&alpha=nan", 400},
             {"/bert-ir?query=x&topn=0", 400},
             {"/bert-ir?query=x&topn=two", 400},
             {"/bert-ir?query=x&repository=missing", 404},
             {"/search", 400},
             {"/search?query=x&top_docs=11", 400},
             {"/search?query=x&top_snippets=-1", 400},
             {"/search?query=x&profile=missing", 404}}) {
        const auto r = srv.get(path);
        rep.expect(r && r->status == status, path + " should give " + std::to_string(status));
        if (r) {
            const auto ej = semir::detail::Json::parse(r->body, nullptr, false);
            rep.expect(!ej.is_discarded() && ej["error"]["code"].is_string() && ej["error"]["message"].is_string(),
                       path + ": error body shape");
        }
    }

    // /search serves exactly what the CLI prints
    if (st->pipeline) {
        const std::string sb = body_of("/search?query=" + enc(q) + "&profile=lexical&top_docs=3&id=q7", 200);
        rep.expect(sb == semir::search_answer(*st->pipeline, st->profiles.at("lexical"), {"q7", q}, 3, 10),
                   "/search differs from search_answer");
    }

    // 32 concurrent identical requests
    std::vector<std::future<std::string>> futures;
    for (int i = 0; i < 32; ++i) {
        futures.push_back(std::async(std::launch::async, [&] {
            auto r = srv.get("/bert-ir?query=" + enc(q) + "&topn=7&alpha=0.35");
            return r && r->status == 200 ? r->body : std::string("error");
        }));
    }
    std::vector<std::string> bodies;
    for (auto& f : futures) bodies.push_back(f.get());
    rep.expect(bodies.front() != "error" &&
                   std::all_of(bodies.begin(), bodies.end(), [&](const auto& b) { return b == bodies.front(); }),
               "concurrent responses differ");
    return rep;
}

}  // namespace semir_test
