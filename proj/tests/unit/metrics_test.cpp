#include <catch_amalgamated.hpp>

#include <random>

#include "semir/metrics.hpp"
#include "support/oracles.hpp"

using namespace semir;
using Catch::Matchers::WithinAbs;

namespace {

using Ids = std::vector<std::string>;

Snippet snip(std::string doc, std::size_t b, std::size_t e, Section s = Section::abstract) {
    return {std::move(doc), s, b, s, e, "t"};
}

}  // namespace

TEST_CASE("average precision hand cases", "[metrics]") {
    const Ids gold = {"a", "b"};
    CHECK_THAT(average_precision<std::string>(Ids{"a", "x", "b"}, gold), WithinAbs(5.0 / 6.0, 1e-15));
    CHECK(average_precision<std::string>(Ids{"a", "b"}, gold) == 1.0);
    CHECK(average_precision<std::string>(Ids{}, gold) == 0.0);
    CHECK(average_precision<std::string>(Ids{"x"}, Ids{}) == 0.0);
    // duplicates only claim one gold item
    CHECK_THAT(average_precision<std::string>(Ids{"a", "a", "b"}, gold), WithinAbs((1.0 + 2.0 / 3.0) / 2.0, 1e-15));
}

TEST_CASE("capped denominator cuts both lists at the limit", "[metrics]") {
    Ids gold;
    for (int i = 0; i < 12; ++i) {
        gold.push_back("g" + std::to_string(i));
    }
    Ids ranked = gold;
    CHECK_THAT(average_precision<std::string>(ranked, gold, {}, DenomMode::gold), WithinAbs(1.0, 1e-15));
    CHECK_THAT(average_precision<std::string>(ranked, gold, {}, DenomMode::capped, 10), WithinAbs(1.0, 1e-15));
    Ids first10(ranked.begin(), ranked.begin() + 10);
    CHECK_THAT(average_precision<std::string>(first10, gold, {}, DenomMode::gold), WithinAbs(10.0 / 12.0, 1e-15));
}

TEST_CASE("precision, recall and F1", "[metrics]") {
    auto r = precision_recall_f1<std::string>(Ids{"a", "x"}, Ids{"a"});
    CHECK(r.precision == 0.5);
    CHECK(r.recall == 1.0);
    CHECK_THAT(r.f1, WithinAbs(2.0 / 3.0, 1e-15));
    auto empty = precision_recall_f1<std::string>(Ids{}, Ids{"a"});
    CHECK(empty.precision == 0.0);
    CHECK(empty.f1 == 0.0);
}

TEST_CASE("MAP and GMAP", "[metrics]") {
    const std::vector<double> aps = {0.0, 1.0};
    CHECK(mean_average_precision(aps) == 0.5);
    CHECK_THAT(geometric_map(aps), WithinAbs(std::sqrt(0.01 * 1.01), 1e-15));
    CHECK_THROWS_AS(mean_average_precision(std::vector<double>{}), ValidationError);
    CHECK_THROWS_AS(geometric_map(std::vector<double>{}), ValidationError);
    CHECK_THROWS_AS(geometric_map(aps, 0.0), ValidationError);
    // GMAP punishes a single failure harder than MAP
    const std::vector<double> uneven = {0.0, 1.0, 1.0, 1.0};
    CHECK(geometric_map(uneven) < mean_average_precision(uneven));
}

TEST_CASE("snippet overlap", "[metrics]") {
    CHECK(snippet_overlap(snip("d", 0, 10), snip("d", 5, 20)) == 5);
    CHECK(snippet_overlap(snip("d", 0, 10), snip("d", 10, 20)) == 0);
    CHECK(snippet_overlap(snip("d", 0, 10), snip("e", 0, 10)) == 0);
    CHECK(snippet_overlap(snip("d", 0, 10, Section::title), snip("d", 0, 10)) == 0);
    Snippet cross{"d", Section::title, 5, Section::abstract, 7, "t"};
    CHECK(snippet_overlap(cross, snip("d", 0, 20)) == 7);
    CHECK(snippet_overlap(cross, snip("d", 2, 9, Section::title)) == 4);

    MatchPolicy strict{6};
    CHECK_FALSE(answer_matches(snip("d", 0, 10), snip("d", 5, 20), strict));
    CHECK(answer_matches(snip("d", 0, 10), snip("d", 4, 20), strict));
}

TEST_CASE("metrics agree with the brute-force oracle", "[metrics][oracle][property]") {
    std::mt19937_64 rng(2024);
    auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n)(rng); };
    for (int fixture = 0; fixture < 300; ++fixture) {
        Ids universe;
        for (int i = 0; i < 15; ++i) {
            universe.push_back("d" + std::to_string(i));
        }
        std::shuffle(universe.begin(), universe.end(), rng);
        const Ids gold(universe.begin(), universe.begin() + static_cast<long>(1 + pick(9)));
        std::shuffle(universe.begin(), universe.end(), rng);
        const Ids ranked(universe.begin(), universe.begin() + static_cast<long>(pick(10)));

        CHECK_THAT(average_precision<std::string>(ranked, gold), WithinAbs(semir_test::oracle_ap(ranked, gold), 1e-12));
        const auto prf = precision_recall_f1<std::string>(ranked, gold);
        const auto o = semir_test::oracle_prf(ranked, gold);
        CHECK_THAT(prf.precision, WithinAbs(o[0], 1e-12));
        CHECK_THAT(prf.recall, WithinAbs(o[1], 1e-12));
        CHECK_THAT(prf.f1, WithinAbs(o[2], 1e-12));

        std::vector<Snippet> gs;
        std::vector<Snippet> rs;
        for (std::size_t i = 0, n = 1 + pick(5); i < n; ++i) {
            const std::size_t b = pick(40);
            gs.push_back(snip("d" + std::to_string(pick(2)), b, b + 1 + pick(20),
                              pick(3) == 0 ? Section::title : Section::abstract));
        }
        for (std::size_t i = 0, n = pick(8); i < n; ++i) {
            const std::size_t b = pick(40);
            rs.push_back(snip("d" + std::to_string(pick(2)), b, b + 1 + pick(20),
                              pick(3) == 0 ? Section::title : Section::abstract));
        }
        CHECK_THAT(average_precision<Snippet>(rs, gs), WithinAbs(semir_test::oracle_ap(rs, gs), 1e-12));
        const auto sp = precision_recall_f1<Snippet>(rs, gs);
        CHECK_THAT(sp.recall, WithinAbs(semir_test::oracle_prf(rs, gs)[1], 1e-12));
        CHECK(average_precision<Snippet>(rs, gs) <= 1.0);
    }
}

namespace {

QuerySet two_query_gold() {
    QuerySet g;
    g.add({{"q1", "one"}, GoldLabels{{"a", "b"}, {snip("a", 0, 10)}}});
    g.add({{"q2", "two"}, GoldLabels{{"c"}, {snip("c", 5, 9)}}});
    return g;
}

}  // namespace

TEST_CASE("evaluate_run averages over every gold query", "[metrics]") {
    const QuerySet gold = two_query_gold();
    RankedRun run;
    run.add({"q1", "one", {{"a", 1}, {"x", 0.5}, {"b", 0.2}}, {{snip("a", 2, 4), 1, std::nullopt}}});
    const EvalReport r = evaluate_run(run, gold);
    CHECK(r.query_count == 2);
    CHECK_THAT(r.docs.map, WithinAbs((5.0 / 6.0 + 0.0) / 2.0, 1e-15));
    CHECK_THAT(r.docs.gmap, WithinAbs(std::sqrt((5.0 / 6.0 + 0.01) * 0.01), 1e-15));
    CHECK_THAT(r.snippets.map, WithinAbs(0.5, 1e-15));
    CHECK_THAT(r.docs.mean_recall, WithinAbs(0.5, 1e-15));

    const std::string table = r.to_table();
    CHECK(table.find("MPrec") < table.find("MRec"));
    CHECK(table.find("MRec") < table.find("F-Measure"));
    CHECK(table.find("F-Measure") < table.find("MAP"));
    CHECK(table.find(" MAP") < table.find("GMAP"));
    CHECK(r.to_json()["documents"]["map"].get<double>() == r.docs.map);

    RankedRun stray;
    stray.add({"q9", "?", {}, {}});
    CHECK_THROWS_AS(evaluate_run(stray, gold), ValidationError);

    QuerySet unlabeled;
    unlabeled.add({{"q1", "one"}, std::nullopt});
    CHECK_THROWS_AS(evaluate_run(RankedRun{}, unlabeled), ValidationError);
}

TEST_CASE("a run equal to the gold scores perfectly", "[metrics]") {
    const QuerySet gold = two_query_gold();
    RankedRun run;
    for (const auto& e : gold.entries()) {
        RunEntry re{e.query.query_id, e.query.body, {}, {}};
        for (const auto& d : e.gold->doc_ids) {
            re.docs.push_back({d, 0});
        }
        for (const auto& s : e.gold->snippets) {
            re.snippets.push_back({s, 0, std::nullopt});
        }
        run.add(re);
    }
    const EvalReport r = evaluate_run(run, gold);
    for (const MetricSummary* m : {&r.docs, &r.snippets}) {
        CHECK(m->mean_precision == 1.0);
        CHECK(m->mean_recall == 1.0);
        CHECK(m->mean_f1 == 1.0);
        CHECK(m->map == 1.0);
    }
}
