#include <catch_amalgamated.hpp>

#include <random>

#include "semir/optimizer.hpp"
#include "support/planted.hpp"

using namespace semir;
using Catch::Matchers::ContainsSubstring;

namespace {

/// Deterministic bumpy function of the weights, for comparing searches
/// against brute force.
WeightObjective hashed_objective(std::uint64_t salt) {
    return [salt](const FusionWeights& w) {
        std::uint64_t h = salt;
        for (double x : w.flat()) {
            h = mix_seed(h, static_cast<std::uint64_t>(std::llround(x * 1e6)));
        }
        return Evaluation{w, static_cast<double>(h % 1000) / 1000.0, {}};
    };
}

WeightObjective distance_objective(std::array<double, 9> target) {
    return [target](const FusionWeights& w) {
        const auto f = w.flat();
        double d = 0.0;
        for (std::size_t i = 0; i < 9; ++i) d += (f[i] - target[i]) * (f[i] - target[i]);
        return Evaluation{w, -d, {}};
    };
}

}  // namespace

TEST_CASE("objective names and lattices", "[optimizer]") {
    for (auto o : {Objective::sent_map, Objective::doc_map, Objective::doc_f1}) {
        CHECK(parse_objective(to_string(o)) == o);
    }
    CHECK_THROWS(parse_objective("ndcg"));
    CHECK(detail::lattice(0.5) == std::vector<double>{0.0, 0.5, 1.0});
    CHECK(detail::lattice(0.2).size() == 6);
    CHECK(detail::lattice(0.3).back() == 1.0);
    CHECK(detail::lattice(1.0) == std::vector<double>{0.0, 1.0});
}

TEST_CASE("grid search on one free weight", "[optimizer]") {
    const auto init = FusionWeights::balanced(0.3);
    const std::array<std::size_t, 1> free{2};
    auto obj = [](const FusionWeights& w) { return Evaluation{w, -std::abs(w.alpha[2] - 1.0), {}}; };
    const auto r = search(GridSearch{0.5}, init, free, obj);
    CHECK(r.best.alpha[2] == 1.0);
    CHECK(r.best_value == 0.0);
    CHECK(r.evaluated.size() == 4);
    // frozen coordinates never move
    auto flat = r.best.flat();
    for (std::size_t i = 0; i < 9; ++i) {
        if (i != 2) CHECK(flat[i] == 0.3);
    }
}

TEST_CASE("grid search equals brute force over the lattice", "[optimizer][property]") {
    std::mt19937_64 rng(17);
    for (int c = 0; c < 60; ++c) {
        const std::size_t dims = 1 + c % 2;
        std::vector<std::size_t> free;
        while (free.size() < dims) {
            const std::size_t i = rng() % 9;
            if (std::find(free.begin(), free.end(), i) == free.end()) free.push_back(i);
        }
        FusionWeights init;
        auto flat = init.flat();
        for (double& x : flat) x = static_cast<double>(rng() % 11) / 10.0;
        init = FusionWeights::from_flat(flat);
        const auto obj = hashed_objective(static_cast<std::uint64_t>(c));
        const double step = c % 3 == 0 ? 0.25 : 0.2;

        // brute force: first strict maximum in row-major order, init only if strictly better
        const auto pts = detail::lattice(step);
        double best = -1.0;
        FusionWeights best_w;
        auto consider = [&](const std::vector<double>& coords) {
            auto f = init.flat();
            for (std::size_t d = 0; d < dims; ++d) f[free[d]] = coords[d];
            const auto w = FusionWeights::from_flat(f);
            const double v = obj(w).value;
            if (v > best) {
                best = v;
                best_w = w;
            }
        };
        for (double a : pts) {
            if (dims == 1) {
                consider({a});
            } else {
                for (double b : pts) consider({a, b});
            }
        }
        if (obj(init).value > best) best_w = init;

        const auto r = search(GridSearch{step}, init, free, obj);
        CHECK(r.best == best_w);
    }
}

TEST_CASE("searches are never worse than the starting point", "[optimizer][property]") {
    const std::array<std::size_t, 3> free{0, 4, 8};
    for (std::uint64_t salt = 0; salt < 20; ++salt) {
        const auto obj = hashed_objective(salt);
        const auto init = FusionWeights::balanced(0.37);
        const double at_init = obj(init).value;
        for (const SearchStrategy& s : {SearchStrategy{GridSearch{0.5}}, SearchStrategy{CoarseFineSearch{0.5, 0.1, 0.2}},
                                        SearchStrategy{GuidedSearch{15, salt}}}) {
            const auto r = search(s, init, free, obj);
            CHECK(r.best_value >= at_init);
            CHECK(obj(r.best).value == r.best_value);
        }
    }
}

TEST_CASE("coarse-to-fine refines around the coarse optimum", "[optimizer]") {
    std::array<double, 9> target{};
    target.fill(0.5);
    target[1] = 0.65;
    const std::array<std::size_t, 1> free{1};
    const auto coarse = search(GridSearch{0.2}, balanced_init(), free, distance_objective(target));
    const auto fine = search(CoarseFineSearch{0.2, 0.05, 0.2}, balanced_init(), free, distance_objective(target));
    CHECK(fine.best_value > coarse.best_value);
    CHECK(fine.best.alpha[1] == Catch::Approx(0.65));
}

TEST_CASE("guided search is deterministic and spends its budget", "[optimizer]") {
    std::array<double, 9> target{};
    target.fill(0.5);
    target[0] = 0.9;
    target[3] = 0.1;
    const auto obj = distance_objective(target);
    const auto a = search(GuidedSearch{40, 3}, balanced_init(), kAlphaParams, obj);
    const auto b = search(GuidedSearch{40, 3}, balanced_init(), kAlphaParams, obj);
    REQUIRE(a.evaluated.size() == 40);
    for (std::size_t i = 0; i < 40; ++i) CHECK(a.evaluated[i].weights == b.evaluated[i].weights);
    const auto c = search(GuidedSearch{40, 4}, balanced_init(), kAlphaParams, obj);
    CHECK_FALSE(c.evaluated[5].weights == a.evaluated[5].weights);
    // first candidate is the starting point; the surrogate closes in on the target
    CHECK(a.evaluated[0].weights == balanced_init());
    CHECK(a.best_value > -0.02);
    CHECK(search(GuidedSearch{1, 0}, balanced_init(), kAlphaParams, obj).evaluated.size() == 1);
}

TEST_CASE("search argument validation", "[optimizer]") {
    const auto obj = hashed_objective(0);
    const std::array<std::size_t, 2> dup{1, 1};
    const std::array<std::size_t, 1> out_of_range{9};
    const std::array<std::size_t, 7> seven{0, 1, 2, 3, 4, 5, 6};
    CHECK_THROWS_AS(search(GridSearch{0.5}, balanced_init(), dup, obj), ValidationError);
    CHECK_THROWS_AS(search(GridSearch{0.5}, balanced_init(), out_of_range, obj), ValidationError);
    CHECK_THROWS_AS(search(GridSearch{0.5}, balanced_init(), std::span<const std::size_t>{}, obj), ValidationError);
    CHECK_THROWS_WITH(search(GridSearch{0.1}, balanced_init(), seven, obj), ContainsSubstring("too large"));
    CHECK_THROWS_AS(search(GridSearch{0.0}, balanced_init(), kAlphaParams, obj), ValidationError);
    CHECK_THROWS_AS(search(GuidedSearch{0, 0}, balanced_init(), kAlphaParams, obj), ValidationError);
}

TEST_CASE("alternating optimization", "[optimizer][ao]") {
    OptimizeConfig cfg;
    cfg.strategy = GuidedSearch{25, 9};
    cfg.max_iters = 6;

    SECTION("accepted sentence objective values never decrease") {
        std::array<double, 9> target{0.9, 0.2, 0.6, 0.3, 0.8, 0.1, 0.7, 0.4, 0.2};
        const auto r = alternating_optimize(cfg, distance_objective(target), distance_objective(target));
        const auto acc = r.trace.accepted_values();
        REQUIRE_FALSE(acc.empty());
        for (std::size_t i = 1; i < acc.size(); ++i) CHECK(acc[i] > acc[i - 1]);
        CHECK(r.best_m_value == acc.back());
        CHECK(r.trace.phases.front().phase == 'E');
        CHECK(r.trace.phases[1].phase == 'M');
        for (std::size_t i = 0; i < r.trace.candidates.size(); ++i) CHECK(r.trace.candidates[i].seq == i);
    }
    SECTION("a flat objective stops after the second round") {
        auto flat = [](const FusionWeights& w) { return Evaluation{w, 0.5, {}}; };
        const auto r = alternating_optimize(cfg, flat, flat);
        REQUIRE(r.trace.phases.size() == 4);
        CHECK(r.trace.phases[1].accepted);
        CHECK_FALSE(r.trace.phases[3].accepted);
        CHECK(r.best == cfg.init);
        CHECK(r.best_m_value == 0.5);
    }
    SECTION("E phases move only document weights, M phases only alpha") {
        const auto r = alternating_optimize(cfg, hashed_objective(1), hashed_objective(2));
        FusionWeights prev = cfg.init;
        for (const auto& p : r.trace.phases) {
            const auto a = prev.flat();
            const auto b = p.weights.flat();
            for (std::size_t i = 0; i < 9; ++i) {
                const bool free = p.phase == 'E' ? i >= 4 : i < 4;
                if (!free) CHECK(a[i] == b[i]);
            }
            prev = p.weights;
        }
    }
    SECTION("max_iters bounds the rounds") {
        cfg.max_iters = 1;
        std::array<double, 9> target{};
        target.fill(0.1);
        const auto r = alternating_optimize(cfg, distance_objective(target), distance_objective(target));
        CHECK(r.trace.phases.size() == 2);
    }
}

TEST_CASE("optimizer config JSON", "[optimizer]") {
    OptimizeConfig c;
    c.e_objective = Objective::doc_f1;
    c.strategy = CoarseFineSearch{0.25, 0.05, 0.1};
    c.max_iters = 3;
    const auto back = OptimizeConfig::from_json(c.to_json());
    CHECK(back.e_objective == Objective::doc_f1);
    CHECK(back.max_iters == 3);
    CHECK(strategy_to_json(back.strategy) == strategy_to_json(c.strategy));
    CHECK(back.init == c.init);

    const auto d = OptimizeConfig::from_json(detail::Json::parse(R"({"init":"balanced","seed":42})"));
    CHECK(std::get<GuidedSearch>(d.strategy).seed == 42);
    CHECK(std::get<GuidedSearch>(d.strategy).budget == 200);
    CHECK(d.init == balanced_init());
    CHECK_THROWS_AS(OptimizeConfig::from_json(detail::Json::parse(R"({"max_iters":0})")), ValidationError);
    CHECK_THROWS_AS(OptimizeConfig::from_json(detail::Json::parse(R"({"strategy":{"type":"anneal"}})")),
                    ValidationError);
    CHECK_THROWS_AS(OptimizeConfig::from_json(detail::Json::parse("[]")), ParseError);
}

namespace {

/// Counts calls that reach the wrapped scorer.
class CountingScorer final : public Scorer {
public:
    explicit CountingScorer(std::shared_ptr<const Scorer> inner) : inner_(std::move(inner)) {}
    ScorerKind kind() const override { return inner_->kind(); }
    std::string id() const override { return inner_->id(); }
    std::vector<double> score_raw(std::span<const ScoringPair> pairs) const override {
        calls += pairs.size();
        return inner_->score_raw(pairs);
    }
    mutable std::atomic<std::size_t> calls{0};

private:
    std::shared_ptr<const Scorer> inner_;
};

}  // namespace

TEST_CASE("optimizing a dev set never calls the scorers", "[optimizer][dev]") {
    auto corpus = std::make_shared<Corpus>();
    for (int d = 0; d < 30; ++d) {
        corpus->add(make_document(std::to_string(100 + d), "Topic " + std::to_string(d % 5) + " review.",
                                  "Term" + std::to_string(d % 7) + " affects outcome " + std::to_string(d % 3) +
                                      ". Second finding about term" + std::to_string(d % 4) + "."));
    }
    auto index = std::make_shared<InvertedIndex>(InvertedIndex::build(*corpus));
    auto emb = std::make_shared<EmbeddingTable>(EmbeddingTable::hashed(index->terms(), 16));
    const auto ref = ScorerSet::reference(emb, index);
    auto rel = std::make_shared<CountingScorer>(ref.relevance);
    auto sts = std::make_shared<CountingScorer>(ref.sts);
    auto sia = std::make_shared<CountingScorer>(ref.sia);
    RankingParams rp;
    rp.pool_k = 10;
    const Pipeline pipe(corpus, index, ScorerSet{rel, sts, sia}, rp);

    QuerySet labelled;
    for (int q = 0; q < 6; ++q) {
        const std::string id = std::to_string(100 + q);
        const Document& doc = *corpus->find(id);
        GoldLabels g{{id}, {Snippet{id, Section::abstract, doc.sentences[1].begin, Section::abstract,
                                    doc.sentences[1].end, ""}}};
        labelled.add({{"q" + std::to_string(q), "term" + std::to_string(q % 7) + " outcome"}, g});
    }
    const DevSet dev = DevSet::build(pipe, labelled);
    const std::size_t after_build = rel->calls + sts->calls + sia->calls;
    CHECK(after_build > 0);

    OptimizeConfig cfg;
    cfg.strategy = GuidedSearch{12, 1};
    cfg.max_iters = 2;
    cfg.e_objective = Objective::doc_f1;
    const auto r = alternating_optimize(cfg, dev);
    CHECK(rel->calls + sts->calls + sia->calls == after_build);
    CHECK(r.best_m_value == evaluate_weights(r.best, dev).sent_map);

    const std::string jsonl = r.trace.to_jsonl();
    std::istringstream lines(jsonl);
    std::string line;
    std::size_t e_lines = 0;
    while (std::getline(lines, line)) {
        const auto j = detail::Json::parse(line);
        if (j.contains("summary")) continue;
        if (j["phase"] == "E") {
            CHECK(j["objective"] == "doc_f1");
            CHECK(j["value"] == j["doc_f1"]);
            ++e_lines;
        } else {
            CHECK(j["objective"] == "sent_map");
        }
    }
    CHECK(e_lines > 0);

    QuerySet unlabelled;
    unlabelled.add({{"x", "term1"}, std::nullopt});
    CHECK_THROWS_AS(DevSet::build(pipe, unlabelled), ValidationError);
    CHECK_THROWS_AS(evaluate_weights(balanced_init(), DevSet{}), ValidationError);
}

TEST_CASE("alternating optimization recovers planted weights", "[optimizer][planted]") {
    FusionWeights planted = FusionWeights::balanced(0.5);
    planted.alpha = {0.7, 0.3, 0.0, 0.0};
    const auto fx = semir_test::make_planted(40, 5, planted);
    const double target = evaluate_weights(planted, fx.dev).sent_map;
    CHECK(target == 1.0);
    OptimizeConfig cfg;
    cfg.strategy = GuidedSearch{60, 2};
    cfg.max_iters = 3;
    const auto r = alternating_optimize(cfg, fx.dev);
    CHECK(r.best_m_value >= 0.9 * target);
    CHECK(r.best_m_value > evaluate_weights(balanced_init(), fx.dev).sent_map);
}
