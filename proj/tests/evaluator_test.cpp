#include <gtest/gtest.h>

#include "support.hpp"

using namespace skystream;
using namespace skystream::testing;

namespace {

ContinuousQuery cell_query(QueryId id, const GridGeometry& g, CellCoord c, KeywordSet w, Timestamp expiry = kNever) {
  Rect r = g.cell_rect_world({c.x, c.y, c.x, c.y});
  double dx = r.width() * 0.1, dy = r.height() * 0.1;
  return {id, {r.xmin + dx, r.ymin + dy, r.xmax - dx, r.ymax - dy}, std::move(w), Predicate::Overlaps, expiry};
}

SpatialKeywordObject cell_object(ObjectId id, const GridGeometry& g, CellCoord c, KeywordSet w, Timestamp ts = 0) {
  Rect r = g.cell_rect_world({c.x, c.y, c.x, c.y});
  return {id, {(r.xmin + r.xmax) / 2, (r.ymin + r.ymax) / 2}, std::move(w), ts};
}

ContinuousQuery random_query(Rng& rng, QueryId id, int vocab, double max_side, Timestamp horizon) {
  double w = 0.01 + max_side * uniform01(rng), h = 0.01 + max_side * uniform01(rng);
  double x = uniform01(rng) * (1 - w), y = uniform01(rng) * (1 - h);
  ContinuousQuery q{id, {x, y, x + w, y + h}, random_words(rng, vocab, 3),
                    uniform01(rng) < 0.3 ? Predicate::Contains : Predicate::Overlaps, kNever};
  if (horizon > 0 && uniform01(rng) < 0.4) q.expiry = static_cast<Timestamp>(uniform_index(rng, horizon));
  return q;
}

// Recomputes every aggregate from the cell map.
void expect_aggregates_consistent(const EvaluatorState& s) {
  const auto& g = s.geometry();
  std::vector<std::int64_t> rows(g.m, 0), cols(g.n, 0), rq(g.m, 0), cq(g.n, 0);
  std::int64_t total = 0, q = 0;
  std::set<QueryId> ids;
  for (const auto& [key, cell] : s.cells()) {
    CellCoord c = g.coord(key);
    rows[c.y] += cell.cost;
    cols[c.x] += cell.cost;
    total += cell.cost;
    rq[c.y] += static_cast<std::int64_t>(cell.queries.size());
    cq[c.x] += static_cast<std::int64_t>(cell.queries.size());
    q += static_cast<std::int64_t>(cell.queries.size());
    for (const auto& qq : cell.queries) ids.insert(qq->qid);
  }
  EXPECT_EQ(s.row_agg(), rows);
  EXPECT_EQ(s.col_agg(), cols);
  EXPECT_EQ(s.row_q(), rq);
  EXPECT_EQ(s.col_q(), cq);
  EXPECT_EQ(s.overall_cost(), total);
  EXPECT_EQ(s.overall_q(), q);
  EXPECT_EQ(s.query_count(), static_cast<std::int64_t>(ids.size()));
}

}  // namespace

TEST(Evaluator, ThreeObjectReplayAggregates) {
  GridGeometry g(5, 5);
  EvaluatorState s(0, g, g.full());
  s.register_query(cell_query(1, g, {2, 3}, {"a"}));
  s.register_query(cell_query(2, g, {4, 2}, {"a"}));
  s.register_query(cell_query(3, g, {4, 2}, {"a"}));
  s.register_query(cell_query(4, g, {4, 4}, {"a"}));
  s.process_object(cell_object(1, g, {2, 3}, {"a"}));
  s.process_object(cell_object(2, g, {4, 2}, {"a"}));
  s.process_object(cell_object(3, g, {4, 4}, {"a"}));
  EXPECT_EQ(s.overall_cost(), 4);
  auto split = s.find_best_split();
  EXPECT_EQ(split.axis, SplitAxis::Horizontal);
  EXPECT_EQ(split.cut, 2);
  EXPECT_EQ(split.imbalance(), 0);
}

TEST(Evaluator, MatchesAndCandidatesAgreeWithBruteForce) {
  Rng rng(21);
  GridGeometry g(20, 20);
  EvaluatorState s(0, g, g.full());
  std::vector<ContinuousQuery> qs;
  for (int i = 0; i < 300; ++i) {
    qs.push_back(random_query(rng, static_cast<QueryId>(i + 1), 15, 0.3, 400));
    s.register_query(qs.back());
  }
  std::int64_t want_candidates = 0;
  for (int i = 0; i < 400; ++i) {
    SpatialKeywordObject o{static_cast<ObjectId>(i + 1), {uniform01(rng), uniform01(rng)}, random_words(rng, 15, 4), i};
    auto got = sorted(s.process_object(o));
    std::vector<MatchResult> want;
    CellCoord c = g.cell_of(o.loc);
    for (const auto& q : qs) {
      bool in_cell = g.cell_range(q.mbr).contains(c);
      if (in_cell && live_at(q, o.ts) && q.text.intersects(o.text)) ++want_candidates;
      if (matches(o, q) && live_at(q, o.ts)) want.push_back({q.qid, o.oid, o.ts});
    }
    ASSERT_EQ(got, sorted(want));
  }
  EXPECT_EQ(s.counters().candidates, want_candidates);
  EXPECT_EQ(s.overall_cost(), want_candidates);
}

TEST(Evaluator, LiveScanCostCountsLiveQueries) {
  GridGeometry g(4, 4);
  EvaluatorState s(0, g, g.full());
  s.set_cost_mode(CostMode::LiveScan);
  s.register_query(cell_query(1, g, {0, 0}, {"a"}, 5));
  s.register_query(cell_query(2, g, {1, 1}, {"b"}));
  s.register_query(cell_query(3, g, {2, 2}, {"c"}, 3));
  s.process_object(cell_object(1, g, {3, 3}, {"z"}, 1));
  EXPECT_EQ(s.overall_cost(), 3);
  s.process_object(cell_object(2, g, {3, 3}, {"z"}, 4));
  EXPECT_EQ(s.overall_cost(), 5);
  s.expire_queries(5);
  s.process_object(cell_object(3, g, {3, 3}, {"z"}, 6));
  EXPECT_EQ(s.overall_cost(), 6);
}

TEST(Evaluator, DuplicateAndOutsideRegistrations) {
  GridGeometry g(4, 4);
  EvaluatorState s(0, g, CellRect{0, 0, 1, 3});
  auto q = cell_query(1, g, {0, 0}, {"a"});
  EXPECT_EQ(s.register_query(q), RegisterStatus::Registered);
  EXPECT_EQ(s.register_query(q), RegisterStatus::Duplicate);
  EXPECT_EQ(s.register_query(cell_query(2, g, {3, 3}, {"a"})), RegisterStatus::NoOverlap);
  EXPECT_THROW(s.process_object(cell_object(1, g, {3, 3}, {"a"})), Error);
}

TEST(Evaluator, AggregatesSurviveRandomOperations) {
  Rng rng(33);
  GridGeometry g(16, 16);
  EvaluatorState s(0, g, g.full());
  QueryId next = 1;
  for (int step = 0; step < 3000; ++step) {
    auto k = uniform_index(rng, 10);
    if (k < 4) {
      s.register_query(random_query(rng, next++, 10, 0.25, 3000));
    } else if (k < 9) {
      s.process_object({static_cast<ObjectId>(step), {uniform01(rng), uniform01(rng)}, random_words(rng, 10, 3), step});
    } else {
      s.cleaning_step(step, 1 + uniform_index(rng, 20));
    }
  }
  expect_aggregates_consistent(s);
  s.expire_queries(2000);
  expect_aggregates_consistent(s);
  for (const auto& [key, cell] : s.cells())
    for (const auto& q : cell.queries) EXPECT_GT(q->expiry, 2000);
}

TEST(Evaluator, CleaningCycleRebuildsSummary) {
  Rng rng(44);
  GridGeometry g(12, 12);
  EvaluatorState s(0, g, g.full());
  std::vector<ContinuousQuery> qs;
  for (int i = 0; i < 200; ++i) {
    qs.push_back(random_query(rng, static_cast<QueryId>(i + 1), 40, 0.2, 100));
    s.register_query(qs.back());
  }
  std::optional<KeywordSet> words;
  while (!(words = s.cleaning_step(50, 3))) {}
  KeywordSet want;
  for (const auto& q : qs)
    if (q.expiry > 50) want.merge(summary_contribution(q));
  EXPECT_EQ(*words, want);
  EXPECT_EQ(s.live_summary(), want);
}

TEST(Evaluator, BestSplitMatchesExhaustiveScan) {
  Rng rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    GridGeometry g(10, 10);
    CellRect b = random_cell_range(10, 10, rng);
    if (b.count() < 2) continue;
    EvaluatorState s(0, g, b);
    for (int i = 0; i < 30; ++i) {
      int x = b.xmin + static_cast<int>(uniform_index(rng, b.width()));
      int y = b.ymin + static_cast<int>(uniform_index(rng, b.height()));
      s.register_query(cell_query(static_cast<QueryId>(i + 1), g, {x, y}, {"a"}));
      for (int k = static_cast<int>(uniform_index(rng, 4)); k > 0; --k)
        s.process_object(cell_object(static_cast<ObjectId>(i * 10 + k), g, {x, y}, {"a"}));
    }
    std::optional<SplitChoice> want;
    auto consider = [&](SplitAxis axis, int cut) {
      auto [lo, hi] = split_rect(b, axis, cut);
      SplitChoice c{axis, cut, s.region_cost(lo), s.region_cost(hi)};
      if (!want || c.imbalance() < want->imbalance()) want = c;
    };
    for (int y = b.ymin; y < b.ymax; ++y) consider(SplitAxis::Horizontal, y);
    for (int x = b.xmin; x < b.xmax; ++x) consider(SplitAxis::Vertical, x);
    auto got = s.find_best_split();
    EXPECT_EQ(got.imbalance(), want->imbalance());
    EXPECT_EQ(got.axis, want->axis);
    EXPECT_EQ(got.cut, want->cut);
    EXPECT_EQ(got.cost_low + got.cost_high, s.overall_cost());
  }
}

TEST(Evaluator, ShiftCutMatchesExhaustiveScan) {
  Rng rng(66);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    GridGeometry g(12, 12);
    CellRect b = random_cell_range(12, 12, rng);
    EvaluatorState s(0, g, b);
    for (int i = 0; i < 25; ++i) {
      int x = b.xmin + static_cast<int>(uniform_index(rng, b.width()));
      int y = b.ymin + static_cast<int>(uniform_index(rng, b.height()));
      s.register_query(cell_query(static_cast<QueryId>(i + 1), g, {x, y}, {"a"}));
      s.process_object(cell_object(static_cast<ObjectId>(i + 1), g, {x, y}, {"a"}));
    }
    Side side = static_cast<Side>(uniform_index(rng, 4));
    double total = static_cast<double>(s.overall_cost());
    double target = total * uniform01(rng);
    bool rows = side == Side::Top || side == Side::Bottom;
    int span = rows ? b.height() : b.width();
    std::optional<std::pair<int, std::int64_t>> best;
    double best_gap = 0;
    for (int w = 1; w < span; ++w) {
      std::int64_t c = s.region_cost(strip_toward(b, side, w));
      double gap = std::abs(total - static_cast<double>(c) - target);
      if (!best || gap < best_gap) best = {w, c}, best_gap = gap;
    }
    bool improves = best && best->second > 0 &&
                    std::max(total - best->second, 2 * target - total + best->second) < total;
    if (!improves) {
      EXPECT_THROW(s.find_shift_cut(target, side), Error);
      continue;
    }
    auto cut = s.find_shift_cut(target, side);
    EXPECT_EQ(cut.strip, strip_toward(b, side, best->first));
    EXPECT_EQ(cut.cost, best->second);
    EXPECT_EQ(cut.query_count, s.region_query_count(cut.strip));
    ++checked;
  }
  EXPECT_GT(checked, 50);
}

TEST(Evaluator, ExtractAndAbsorbPreserveState) {
  Rng rng(77);
  GridGeometry g(10, 10);
  EvaluatorState a(0, g, CellRect{0, 0, 5, 9}), b(1, g, CellRect{6, 0, 9, 9});
  for (int i = 0; i < 80; ++i) {
    auto q = random_query(rng, static_cast<QueryId>(i + 1), 8, 0.3, 0);
    a.register_query(q);
    b.register_query(q);
  }
  for (int i = 0; i < 300; ++i) {
    SpatialKeywordObject o{static_cast<ObjectId>(i + 1), {uniform01(rng), uniform01(rng)}, random_words(rng, 8, 3), i};
    if (a.holds(g.cell_of(o.loc))) a.process_object(o);
    else b.process_object(o);
  }
  CellRect strip{4, 0, 5, 9};
  std::int64_t moved_cost = a.region_cost(strip), before_total = a.overall_cost() + b.overall_cost();
  auto batch = a.extract_cells(strip);
  b.absorb_cells(batch);
  EXPECT_EQ(a.bounds(), (CellRect{0, 0, 3, 9}));
  EXPECT_EQ(b.bounds(), (CellRect{4, 0, 9, 9}));
  EXPECT_EQ(b.region_cost(strip), moved_cost);
  EXPECT_EQ(a.overall_cost() + b.overall_cost(), before_total);
  expect_aggregates_consistent(a);
  expect_aggregates_consistent(b);
  EXPECT_THROW(a.extract_cells({1, 1, 2, 2}), Error);
}
