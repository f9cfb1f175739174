#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace skystream;

namespace {

std::string temp_file(const std::string& name, const std::string& body) {
  auto p = std::filesystem::temp_directory_path() / ("skystream_" + name);
  std::ofstream(p) << body;
  return p.string();
}

WorkloadSpec small_spec(WorkloadKind kind) {
  WorkloadSpec s;
  s.kind = kind;
  s.object_count = 2000;
  s.query_count = 500;
  s.vocab_size = 1000;
  s.query_side = 0.01;
  s.seed = 3;
  return s;
}

}  // namespace

TEST(Vocabulary, PercentileWindowStaysInside) {
  Vocabulary v(1000, 1.0);
  auto top = v.percentile_window(1.0);
  auto bottom = v.percentile_window(0.0);
  ASSERT_EQ(top.size(), 10u);
  EXPECT_EQ(top.front(), 0u);  // most frequent words
  EXPECT_EQ(bottom.back(), 999u);
  EXPECT_EQ(bottom.front(), 990u);
  EXPECT_THROW(v.percentile_window(1.5), Error);
}

TEST(Vocabulary, TailNeverReachesObjects) {
  Vocabulary v(1000, 1.0);
  EXPECT_EQ(v.object_ranks(), 990u);
  auto bottom = v.percentile_window(0.0);
  for (auto r : bottom) EXPECT_GE(r, v.object_ranks());
}

TEST(Generator, IsDeterministic) {
  WorkloadGenerator a(small_spec(WorkloadKind::NormalTweets)), b(small_spec(WorkloadKind::NormalTweets));
  auto qa = a.queries(), qb = b.queries();
  ASSERT_EQ(qa.size(), 500u);
  for (std::size_t i = 0; i < qa.size(); ++i) {
    EXPECT_EQ(qa[i].mbr, qb[i].mbr);
    EXPECT_EQ(qa[i].text, qb[i].text);
  }
  auto oa = a.objects(), ob = b.objects();
  ASSERT_EQ(oa.size(), 2000u);
  for (std::size_t i = 0; i < oa.size(); ++i) {
    EXPECT_EQ(oa[i].text, ob[i].text);
    EXPECT_EQ(oa[i].ts, static_cast<Timestamp>(i + 1));
  }
}

TEST(Generator, QueriesAreValidAndInsideWorld) {
  for (auto kind : {WorkloadKind::NormalTweets, WorkloadKind::SpatiallySkewed, WorkloadKind::TextuallySelective}) {
    WorkloadGenerator g(small_spec(kind));
    for (const auto& q : g.queries()) {
      EXPECT_TRUE(q.mbr.valid());
      EXPECT_GE(q.mbr.xmin, 0.0);
      EXPECT_LE(q.mbr.xmax, 1.0);
      EXPECT_FALSE(q.text.empty());
    }
    for (const auto& o : g.objects()) EXPECT_TRUE(inside(o.loc, kUnitWorld));
  }
}

TEST(Generator, SelectiveQueriesUseTheWindow) {
  auto spec = small_spec(WorkloadKind::TextuallySelective);
  spec.selectivity_percentile = 0.0;
  WorkloadGenerator g(spec);
  std::set<std::string> window;
  for (auto r : g.selective_window()) window.insert(g.vocabulary().word(r));
  std::set<std::string> object_words;
  for (const auto& o : g.objects())
    for (const auto& w : o.text) object_words.insert(w);
  for (const auto& q : g.queries())
    for (const auto& w : q.text) {
      EXPECT_TRUE(window.count(w));
      EXPECT_FALSE(object_words.count(w));
    }
}

TEST(Generator, ScaleFactorShrinksCoordinates) {
  auto spec = small_spec(WorkloadKind::NormalTweets);
  spec.scale_factor = 0.5;
  WorkloadGenerator g(spec);
  for (const auto& o : g.objects()) EXPECT_LT(o.loc.x, 0.5 + 1e-12);
  for (const auto& q : g.queries()) EXPECT_LE(q.mbr.xmax, 0.5 + spec.query_side);
}

TEST(Generator, QueryLifetimeSetsExpiry) {
  auto spec = small_spec(WorkloadKind::NormalTweets);
  spec.query_lifetime = 100;
  WorkloadGenerator g(spec);
  EXPECT_EQ(g.next_query()->expiry, 100);
  g.next_object();
  EXPECT_EQ(g.next_query()->expiry, 101);
}

TEST(Tweets, WrapsAroundToReachTheLimit) {
  std::string body;
  for (int i = 1; i <= 10; ++i) body += std::to_string(i) + ", 40.0, -100.0, hello World " + std::to_string(i) + "\n";
  auto path = temp_file("ten.csv", body);
  auto objs = ingest_tweets(path, 25);
  ASSERT_EQ(objs.size(), 25u);
  EXPECT_EQ(objs[10].oid, objs[0].oid);
  EXPECT_EQ(objs[10].text, objs[0].text);
  EXPECT_EQ(objs[24].ts, 25);
  EXPECT_TRUE(objs[0].text.contains("hello"));
  EXPECT_TRUE(objs[0].text.contains("world"));
}

TEST(Tweets, EmptyFileIsAnError) {
  auto path = temp_file("empty.csv", "");
  try {
    ingest_tweets(path, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCorpus);
  }
  EXPECT_THROW(ingest_tweets("/nonexistent/skystream.csv", 5), Error);
}

TEST(Tweets, MalformedLinesAreSkipped) {
  std::string body;
  for (int i = 1; i <= 100; ++i) {
    if (i == 37) body += "not a tweet\n";
    else body += std::to_string(i) + ",30.5,-90.25,coffee\n";
  }
  auto path = temp_file("hundred.csv", body);
  std::size_t skipped = 0;
  auto objs = ingest_tweets(path, 99, {}, &skipped);
  EXPECT_EQ(skipped, 1u);
  std::set<ObjectId> ids;
  for (const auto& o : objs) ids.insert(o.oid);
  EXPECT_EQ(ids.size(), 99u);
}

TEST(Trace, RoundTrips) {
  Rng rng(12);
  auto trace = skystream::testing::random_trace(rng, {});
  std::stringstream ss;
  for (const auto& item : trace) write_trace_item(ss, item);
  auto back = read_trace(ss);
  ASSERT_EQ(back.size(), trace.size());
  EXPECT_EQ(skystream::testing::brute_force_matches(back), skystream::testing::brute_force_matches(trace));
  EXPECT_THROW(parse_trace_line("Q 1 0 0 1 1 SOMETIMES never a"), Error);
  EXPECT_THROW(parse_trace_line("X 1"), Error);
  auto q = std::get<ContinuousQuery>(parse_trace_line("Q 7 0 0 0.5 0.5 CONTAINS inf a,B"));
  EXPECT_EQ(q.expiry, kNever);
  EXPECT_EQ(q.text, (KeywordSet{"a", "b"}));
}
