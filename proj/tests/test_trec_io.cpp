#include <gtest/gtest.h>

#include <sstream>

#include "support/fixtures.hpp"

using namespace tk;

TEST(FormatDouble, ShortestRoundTrip) {
    for (double v : {0.1, -3.25, 1e-300, 123456789.125, 1.0 / 3.0}) EXPECT_EQ(parse_double(format_double(v), "x"), v);
    EXPECT_EQ(format_double(4.0), "4");
    EXPECT_THROW(parse_double("1.5x", "here"), DataError);
    EXPECT_THROW(parse_double("", "here"), DataError);
}

TEST(Run, RoundTrip) {
    Ranking r;
    r.tag = "mytag";
    r.lists["q1"] = {{"d1", 2.5, 1}, {"d2", 1.0 / 3.0, 2}};
    r.lists["q2"] = {{"d9", -1, 1}};
    std::stringstream ss;
    write_run(ss, r);
    EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "q1 Q0 d1 1 2.5 mytag");
    EXPECT_EQ(read_run(ss), r);
}

TEST(Run, OrdersByRankColumnAndSkipsComments) {
    std::istringstream in("# header\nq Q0 b 2 1.0 t\nq Q0 a 1 2.0 t\n\nq Q0 c 5 0.5 t\n");
    const auto r = read_run(in);
    const auto& l = r.lists.at("q");
    ASSERT_EQ(l.size(), 3u);
    EXPECT_EQ(l[0].doc_id, "a");
    EXPECT_EQ(l[2].doc_id, "c");
    EXPECT_EQ(l[2].rank, 3);
    EXPECT_EQ(r.tag, "t");
}

TEST(Run, MalformedLineNamed) {
    std::istringstream in("q Q0 a 1 2.0 t\nq Q0 b 2\n");
    try {
        read_run(in, "file.run");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("file.run:2"), std::string::npos) << e.what();
    }
    std::istringstream bad_score("q Q0 a 1 abc t\n");
    EXPECT_THROW(read_run(bad_score), DataError);
}

TEST(Qrels, Read) {
    std::istringstream in("q1 0 d1 1\nq1 0 d2 0\nq2 0 d3 3\n");
    const auto q = read_qrels(in);
    EXPECT_EQ(q.grade("q1", "d1"), 1);
    EXPECT_EQ(q.grade("q2", "d3"), 3);
    EXPECT_EQ(q.grade("q2", "zz"), 0);
    EXPECT_EQ(q.relevant_count("q1"), 1u);
    std::istringstream bad("q1 0 d1\n");
    EXPECT_THROW(read_qrels(bad), DataError);
}

TEST(Triples, ReadAndValidate) {
    fixtures::TempDir dir;
    fixtures::write_file(dir / "t.tsv", "q1\tp\tn\nq2\tp2\tn2\n");
    const auto t = read_triples(dir / "t.tsv");
    ASSERT_EQ(t.size(), 2u);
    EXPECT_EQ(t[1].negative_doc_id, "n2");
    fixtures::write_file(dir / "same.tsv", "q1\tp\tp\n");
    EXPECT_THROW(read_triples(dir / "same.tsv"), DataError);
    fixtures::write_file(dir / "short.tsv", "q1\tp\n");
    EXPECT_THROW(read_triples(dir / "short.tsv"), DataError);
    EXPECT_THROW(read_triples(dir / "missing.tsv"), DataError);
}

TEST(Sweep, TsvLines) {
    BudgetSweepResult r;
    r.points.push_back({0, 0, {0.5, 0.25, 0.125}});
    r.points.push_back({100, 400, {1, 1, 1}});
    std::stringstream ss;
    write_sweep(ss, r);
    EXPECT_EQ(ss.str(), "0\t0\t0.500000\t0.250000\t0.125000\n100\t400\t1.000000\t1.000000\t1.000000\n");
}
