#include <gtest/gtest.h>

#include <algorithm>

#include "support/fixtures.hpp"

using namespace tk;

TEST(Tokenize, KeepsPunctuationAsTerms) {
    EXPECT_EQ(tokenize("The androgen receptor (AR),", 30),
              (std::vector<std::string>{"the", "androgen", "receptor", "(", "ar", ")", ","}));
}

TEST(Tokenize, EmptyAndTruncated) {
    EXPECT_TRUE(tokenize("").empty());
    EXPECT_TRUE(tokenize("   \t\n ").empty());
    EXPECT_EQ(tokenize("a b c d", 2), (std::vector<std::string>{"a", "b"}));
}

TEST(Tokenize, UnicodeLowercaseAndSpaces) {
    // Non-breaking space separates; accented capitals lower-case.
    EXPECT_EQ(tokenize("\xC3\x89" "T\xC3\x89\xC2\xA0" "Caf\xC3\xA9"), (std::vector<std::string>{"\xC3\xA9t\xC3\xA9", "caf\xC3\xA9"}));
    EXPECT_EQ(tokenize("\xCE\x91\xCE\x92\xCE\x93"), (std::vector<std::string>{"\xCE\xB1\xCE\xB2\xCE\xB3"}));
}

TEST(Tokenize, Deterministic) {
    const std::string text = "Hello, world! It's a test-case; 42.";
    EXPECT_EQ(tokenize(text), tokenize(text));
}

TEST(Vocabulary, CountsThreshold) {
    const std::vector<std::string> corpus{"a a b", "a c"};
    const auto v = build_vocabulary(corpus, 2);
    EXPECT_EQ(v.size(), 3u);
    EXPECT_EQ(v.id("a"), 2);
    EXPECT_EQ(v.id("b"), kOovId);
    EXPECT_EQ(v.term(kPadId), "<pad>");
}

TEST(Vocabulary, SingleAndEmptyCorpus) {
    EXPECT_EQ(build_vocabulary(std::vector<std::string>{"x"}, 1).terms(), (std::vector<std::string>{"x"}));
    EXPECT_EQ(build_vocabulary(std::vector<std::string>{}, 1).size(), 2u);
}

TEST(Vocabulary, OrderInsensitiveAndLexicographic) {
    std::vector<std::string> corpus{"zeta alpha beta", "beta gamma", "alpha zeta zeta", "gamma"};
    const auto v1 = build_vocabulary(corpus, 1);
    std::reverse(corpus.begin(), corpus.end());
    const auto v2 = build_vocabulary(corpus, 1);
    EXPECT_EQ(v1, v2);
    EXPECT_TRUE(std::is_sorted(v1.terms().begin(), v1.terms().end()));
    EXPECT_EQ(v1.id("alpha"), 2);
}

TEST(Vocabulary, SaveLoadRoundTrip) {
    fixtures::TempDir dir;
    const auto v = build_vocabulary(std::vector<std::string>{"b a c a", "c c"}, 2);
    v.save(dir / "vocab.tsv", "# some header\n");
    EXPECT_EQ(Vocabulary::load(dir / "vocab.tsv"), v);
}

TEST(Encode, MapsUnknownAndPads) {
    const Vocabulary v({"a"}, {1}, 1);
    const std::vector<std::string> terms{"a", "zzz"};
    const auto s = encode(terms, v, 4);
    EXPECT_EQ(s.ids, (std::vector<int>{2, 1, 0, 0}));
    EXPECT_EQ(s.length, 2u);
    const auto empty = encode(std::vector<std::string>{}, v, 3);
    EXPECT_EQ(empty.ids, (std::vector<int>{0, 0, 0}));
    EXPECT_EQ(empty.length, 0u);
    const auto trunc = encode(std::vector<std::string>{"a", "a", "a"}, v, 2);
    EXPECT_EQ(trunc.ids, (std::vector<int>{2, 2}));
    EXPECT_EQ(trunc.length, 2u);
}

TEST(Embeddings, CopiesRowsAndInitializesMissing) {
    fixtures::TempDir dir;
    const Vocabulary v({"hello", "missing"}, {1, 1}, 1);
    fixtures::write_file(dir / "emb.txt", "hello 0.1 -0.2 0.3 0.4\nother 1 2 3 4\n");
    Rng rng(7);
    const auto e = load_embeddings<float>(dir / "emb.txt", v, 4, rng);
    ASSERT_EQ(e.rows(), 4);
    EXPECT_FLOAT_EQ(e(2, 0), 0.1f);
    EXPECT_FLOAT_EQ(e(2, 1), -0.2f);
    EXPECT_TRUE(e.row(kPadId).isZero(0));
    for (int r : {kOovId, 3})
        for (int c = 0; c < 4; ++c) {
            EXPECT_LE(std::abs(e(r, c)), 0.05f);
        }
    EXPECT_GT(e.row(3).cwiseAbs().sum(), 0.0f);

    Rng rng2(7);
    EXPECT_EQ(load_embeddings<float>(dir / "emb.txt", v, 4, rng2), e);
}

TEST(Embeddings, WrongWidthNamesLine) {
    fixtures::TempDir dir;
    const Vocabulary v({"a"}, {1}, 1);
    fixtures::write_file(dir / "emb.txt", "a 1 2 3 4\nb 1 2 3\n");
    Rng rng(1);
    try {
        load_embeddings<float>(dir / "emb.txt", v, 4, rng);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2: expected 4 dims"), std::string::npos) << e.what();
    }
}

TEST(Records, ReadTsvAndRejectDuplicates) {
    fixtures::TempDir dir;
    fixtures::write_file(dir / "c.tsv", "d1\thello world\nd2\tsecond\n");
    const auto recs = read_tsv_records(dir / "c.tsv");
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_EQ(recs[1].text, "second");
    EXPECT_THROW(to_text_map({{"x", "a"}, {"x", "b"}}), DataError);
}
