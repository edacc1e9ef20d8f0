#include <catch_amalgamated.hpp>

#include <random>

#include "semir/lexindex.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace semir;

namespace {

Corpus small_corpus() {
    Corpus c;
    c.add(make_document("a", "Heart failure.", "Beta blockers reduce heart failure mortality."));
    c.add(make_document("b", "Diabetes.", "Insulin therapy for diabetes."));
    c.add(make_document("c", "Heart rhythm.", "Atrial fibrillation and heart rate control in the elderly."));
    return c;
}

Corpus random_corpus(std::size_t ndocs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::string> vocab;
    for (int i = 0; i < 60; ++i) {
        vocab.push_back("w" + std::to_string(i));
    }
    std::uniform_int_distribution<std::size_t> word(0, vocab.size() - 1);
    std::uniform_int_distribution<int> len(1, 40);
    Corpus c;
    for (std::size_t d = 0; d < ndocs; ++d) {
        auto text = [&] {
            std::string s;
            for (int k = len(rng); k > 0; --k) {
                s += vocab[word(rng)] + ' ';
            }
            return s;
        };
        c.add(make_document("doc" + std::to_string(d), text(), text()));
    }
    return c;
}

}  // namespace

TEST_CASE("tokenize lowercases alphanumeric runs", "[lexindex]") {
    CHECK(tokenize("Beta-blockers, ACE2 & p53!") == std::vector<std::string>{"beta", "blockers", "ace2", "p53"});
    CHECK(tokenize("").empty());
    CHECK(tokenize("the cats are here", {true, true}) == std::vector<std::string>{"cat", "here"});
    CHECK(detail::s_stem("studies") == "study");
    CHECK(detail::s_stem("glass") == "glass");
}

TEST_CASE("bm25 idf stays positive for common terms", "[lexindex]") {
    CHECK(bm25_idf(10, 10) > 0.0);
    CHECK(bm25_idf(10, 1) > bm25_idf(10, 5));
    CHECK(bm25_idf(3, 1) == Catch::Approx(std::log(1.0 + 2.5 / 1.5)));
}

TEST_CASE("build records postings, lengths and document frequencies", "[lexindex]") {
    const Corpus c = small_corpus();
    const auto idx = InvertedIndex::build(c);
    CHECK(idx.doc_count() == 3);
    CHECK(idx.df("heart") == 2);
    CHECK(idx.tf("heart", *idx.docno("a")) == 2);
    CHECK(idx.tf("heart", *idx.docno("b")) == 0);
    CHECK(idx.df("absent") == 0);
    CHECK(idx.postings("absent").empty());
    CHECK(idx.doc_length(*idx.docno("b")) == 5);
    CHECK_THROWS_AS(InvertedIndex::build(Corpus{}), ValidationError);
}

TEST_CASE("bm25_score edge cases", "[lexindex]") {
    const Corpus c = small_corpus();
    const auto idx = InvertedIndex::build(c);
    const Bm25Params p;
    const std::vector<std::string> none = {"zzz"};
    CHECK(bm25_score(idx, p, none, "a") == 0.0);
    CHECK(bm25_score(idx, p, std::vector<std::string>{}, "a") == 0.0);
    CHECK_THROWS_AS(bm25_score(idx, p, none, "nope"), NotFoundError);
    const std::vector<std::string> once = {"insulin"};
    const std::vector<std::string> twice = {"insulin", "insulin"};
    CHECK(bm25_score(idx, p, twice, "b") == Catch::Approx(2 * bm25_score(idx, p, once, "b")));
}

TEST_CASE("bm25 matches the direct formula on random corpora", "[lexindex][oracle]") {
    const Corpus c = random_corpus(40, 3);
    const auto idx = InvertedIndex::build(c);
    std::mt19937_64 rng(9);
    for (double k1 : {0.9, 1.2, 2.0}) {
        for (double b : {0.0, 0.4, 0.75, 1.0}) {
            const semir_test::DirectBm25 oracle(c, k1, b);
            const Bm25Params p{k1, b};
            for (int i = 0; i < 20; ++i) {
                std::string q = "w" + std::to_string(rng() % 70) + " w" + std::to_string(rng() % 70) + " w" +
                                std::to_string(rng() % 70);
                const auto toks = tokenize(q);
                const std::string& id = c[rng() % c.size()].doc_id;
                CHECK(std::abs(bm25_score(idx, p, toks, id) - oracle.score(toks, id)) <= 1e-9);
            }
        }
    }
}

TEST_CASE("coarse_search agrees with bm25_score and orders ties by id", "[lexindex]") {
    const Corpus c = random_corpus(60, 5);
    const auto idx = InvertedIndex::build(c);
    const Bm25Params p;
    const auto hits = coarse_search(idx, p, "w1 w2 w3 w1", 25);
    REQUIRE_FALSE(hits.empty());
    const auto toks = tokenize("w1 w2 w3 w1");
    for (std::size_t i = 0; i < hits.size(); ++i) {
        CHECK(hits[i].score == bm25_score(idx, p, toks, hits[i].doc_id));
        CHECK(hits[i].score > 0.0);
        if (i > 0) {
            CHECK((hits[i - 1].score > hits[i].score ||
                   (hits[i - 1].score == hits[i].score && hits[i - 1].doc_id < hits[i].doc_id)));
        }
    }
    CHECK(coarse_search(idx, p, "nothing matches", 5).empty());
    CHECK_THROWS_AS(coarse_search(idx, p, "w1", 0), ValidationError);

    Corpus twins;
    twins.add(make_document("z", "same text", "here"));
    twins.add(make_document("y", "same text", "here"));
    twins.add(make_document("x", "other", "words"));
    const auto tidx = InvertedIndex::build(twins);
    const auto th = coarse_search(tidx, p, "same", 10);
    REQUIRE(th.size() == 2);
    CHECK(th[0].doc_id == "y");
    CHECK(th[1].doc_id == "z");
}

TEST_CASE("index snapshots round-trip and reject damage", "[lexindex]") {
    semir_test::TempDir dir;
    const Corpus c = random_corpus(30, 8);
    const auto idx = InvertedIndex::build(c, FieldPolicy::title_abstract, {true, true});
    idx.save(dir.path() / "i.bin");
    const auto back = InvertedIndex::load(dir.path() / "i.bin");
    CHECK(back == idx);
    CHECK(back.fingerprint() == idx.fingerprint());
    CHECK(back.tokenizer_options() == idx.tokenizer_options());

    std::string bytes = idx.serialize();
    CHECK_THROWS_AS(InvertedIndex::deserialize(bytes.substr(0, bytes.size() / 2)), ParseError);
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(InvertedIndex::deserialize(bad_magic), ParseError);
    CHECK_THROWS_AS(InvertedIndex::load(dir.path() / "missing.bin"), NotFoundError);
}
