#pragma once

// Brute-force oracles and random fixtures shared by the unit and acceptance tests.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "skystream/skystream.hpp"

namespace skystream::testing {

// Every (query, object) pair where the query entered the stream first, is still live at the
// object's timestamp, and matches it.
inline std::vector<MatchResult> brute_force_matches(const std::vector<TraceItem>& trace) {
  std::vector<MatchResult> out;
  std::vector<const ContinuousQuery*> seen;
  std::set<QueryId> ids;
  for (const auto& item : trace) {
    if (const auto* q = std::get_if<ContinuousQuery>(&item)) {
      if (q->text.empty() || !ids.insert(q->qid).second) continue;
      seen.push_back(q);
      continue;
    }
    const auto& o = std::get<SpatialKeywordObject>(item);
    if (!inside(o.loc, kUnitWorld)) continue;
    for (const auto* q : seen) {
      if (!(o.ts < q->expiry)) continue;
      if (!(q->mbr.xmin <= o.loc.x && o.loc.x < q->mbr.xmax && q->mbr.ymin <= o.loc.y && o.loc.y < q->mbr.ymax)) continue;
      bool ok = false;
      if (q->predicate == Predicate::Overlaps) {
        for (const auto& w : q->text) ok = ok || o.text.contains(w);
      } else {
        ok = true;
        for (const auto& w : q->text) ok = ok && o.text.contains(w);
      }
      if (ok) out.push_back({q->qid, o.oid, o.ts});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<MatchResult> sorted(std::vector<MatchResult> v) {
  std::sort(v.begin(), v.end());
  return v;
}

inline std::size_t duplicate_count(const std::vector<MatchResult>& sorted_results) {
  std::size_t d = 0;
  for (std::size_t i = 1; i < sorted_results.size(); ++i) d += sorted_results[i] == sorted_results[i - 1];
  return d;
}

// Owner set of a cell range by scanning every cell against every partition rectangle.
inline std::vector<PartitionId> brute_force_owners(const PartitionsMap& pm, const CellRect& r) {
  std::set<PartitionId> s;
  for (int y = r.ymin; y <= r.ymax; ++y)
    for (int x = r.xmin; x <= r.xmax; ++x)
      for (auto pid : pm.pids())
        if (pm.at(pid).contains(CellCoord{x, y})) s.insert(pid);
  return {s.begin(), s.end()};
}

// Random guillotine partitioning: repeatedly split a random splittable rectangle at a random line.
inline PartitionsMap random_partitioning(int n, int m, int parts, Rng& rng) {
  std::vector<CellRect> rects{{0, 0, n - 1, m - 1}};
  for (int guard = 0; static_cast<int>(rects.size()) < parts && guard < parts * 50; ++guard) {
    std::size_t i = uniform_index(rng, rects.size());
    CellRect r = rects[i];
    bool can_h = r.height() >= 2, can_v = r.width() >= 2;
    if (!can_h && !can_v) continue;
    bool horizontal = can_h && (!can_v || uniform_index(rng, 2) == 0);
    if (horizontal) {
      int cut = r.ymin + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(r.height() - 1)));
      rects[i] = {r.xmin, r.ymin, r.xmax, cut};
      rects.push_back({r.xmin, cut + 1, r.xmax, r.ymax});
    } else {
      int cut = r.xmin + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(r.width() - 1)));
      rects[i] = {r.xmin, r.ymin, cut, r.ymax};
      rects.push_back({cut + 1, r.ymin, r.xmax, r.ymax});
    }
  }
  PartitionsMap pm;
  for (std::size_t i = 0; i < rects.size(); ++i) pm.set(static_cast<PartitionId>(i), rects[i]);
  return pm;
}

inline CellRect random_cell_range(int n, int m, Rng& rng) {
  int x0 = static_cast<int>(uniform_index(rng, n)), x1 = static_cast<int>(uniform_index(rng, n));
  int y0 = static_cast<int>(uniform_index(rng, m)), y1 = static_cast<int>(uniform_index(rng, m));
  return {std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1)};
}

inline KeywordSet random_words(Rng& rng, int vocab, int max_words) {
  std::vector<std::string> w;
  int k = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_words)));
  for (int i = 0; i < k; ++i) w.push_back("k" + std::to_string(uniform_index(rng, static_cast<std::uint64_t>(vocab))));
  return KeywordSet(std::move(w));
}

struct TraceShape {
  int queries = 40;
  int objects = 300;
  int vocab = 8;
  double max_side = 0.4;
  double contains_share = 0.3;
  double expiring_share = 0.3;
};

// Interleaved queries and objects with ascending object timestamps.
inline std::vector<TraceItem> random_trace(Rng& rng, const TraceShape& s) {
  std::vector<TraceItem> out;
  int q = 0, o = 0;
  while (q < s.queries || o < s.objects) {
    bool take_query = o >= s.objects ||
                      (q < s.queries && uniform_index(rng, static_cast<std::uint64_t>(s.queries + s.objects)) <
                                            static_cast<std::uint64_t>(s.queries));
    if (take_query) {
      ContinuousQuery cq;
      cq.qid = static_cast<QueryId>(++q);
      double w = 0.01 + s.max_side * uniform01(rng), h = 0.01 + s.max_side * uniform01(rng);
      double x = uniform01(rng) * (1 - w), y = uniform01(rng) * (1 - h);
      cq.mbr = {x, y, x + w, y + h};
      cq.text = random_words(rng, s.vocab, 3);
      cq.predicate = uniform01(rng) < s.contains_share ? Predicate::Contains : Predicate::Overlaps;
      if (uniform01(rng) < s.expiring_share)
        cq.expiry = o + 1 + static_cast<Timestamp>(uniform_index(rng, static_cast<std::uint64_t>(s.objects / 2 + 1)));
      out.emplace_back(cq);
    } else {
      SpatialKeywordObject so;
      so.oid = static_cast<ObjectId>(++o);
      so.ts = o;
      so.loc = {uniform01(rng), uniform01(rng)};
      so.text = random_words(rng, s.vocab, 4);
      out.emplace_back(so);
    }
  }
  return out;
}

// 16x16 layout used by the protocol tests: a left half, a top-right block and two bottom-right
// columns. Evaluator 4 starts idle.
inline PartitionsMap protocol_layout() {
  PartitionsMap pm;
  pm.set(0, {0, 0, 7, 15});
  pm.set(1, {8, 8, 15, 15});
  pm.set(2, {8, 0, 11, 7});
  pm.set(3, {12, 0, 15, 7});
  return pm;
}

inline RebalanceOp shift_op(OpKind kind, PartitionId from, PartitionId to, Side side, std::optional<CellRect> region,
                            double target = 0) {
  RebalanceOp op;
  op.kind = kind;
  op.from = from;
  op.to = to;
  op.side = side;
  op.region = region;
  op.target_cost = target;
  return op;
}

inline RebalanceOp split_merge_op(PartitionId from, SplitAxis axis, int cut, bool move_high, PartitionId keep,
                                  PartitionId donor, PartitionId aux) {
  RebalanceOp op;
  op.kind = OpKind::SplitMerge;
  op.from = from;
  op.split.axis = axis;
  op.split.cut = cut;
  op.move_high = move_high;
  op.merge_keep = keep;
  op.merge_donor = donor;
  op.aux = aux;
  return op;
}

// ---- rebalance selection oracle ----------------------------------------------------------------

// Touching rectangles: the side of `a` where `b` lies and both spans along the shared edge.
struct Touch {
  Side side;
  int a0, a1, b0, b1;
};

inline std::optional<Touch> touch(const CellRect& a, const CellRect& b) {
  Touch t{Side::Left, 0, 0, 0, 0};
  if (b.xmin == a.xmax + 1) t = {Side::Right, a.ymin, a.ymax, b.ymin, b.ymax};
  else if (b.xmax + 1 == a.xmin) t = {Side::Left, a.ymin, a.ymax, b.ymin, b.ymax};
  else if (b.ymin == a.ymax + 1) t = {Side::Top, a.xmin, a.xmax, b.xmin, b.xmax};
  else if (b.ymax + 1 == a.ymin) t = {Side::Bottom, a.xmin, a.xmax, b.xmin, b.xmax};
  else return std::nullopt;
  if (t.b1 < t.a0 || t.a1 < t.b0) return std::nullopt;
  return t;
}

// Cells of `a` that `b` could take over to form a rectangle when b's edge is a strict, end-aligned
// part of a's edge.
inline std::optional<CellRect> corner_cells(const CellRect& a, const CellRect& b) {
  auto t = touch(a, b);
  if (!t) return std::nullopt;
  bool strict = (t->a0 < t->b0 || t->b1 < t->a1) && t->a0 <= t->b0 && t->b1 <= t->a1;
  bool aligned = t->a0 == t->b0 || t->a1 == t->b1;
  if (!strict || !aligned) return std::nullopt;
  if (t->side == Side::Left || t->side == Side::Right) return CellRect{a.xmin, t->b0, a.xmax, t->b1};
  return CellRect{t->b0, a.ymin, t->b1, a.ymax};
}

struct OracleChoice {
  OpKind kind;
  PartitionId from, to;
  double cr, ct;
};

// Exhaustive enumeration of the candidate operations for the heaviest partition, then the
// tie-broken argmax among those with Cr > Ct.
inline std::optional<OracleChoice> oracle_select(const WorkloadSnapshot& s, double beta) {
  PartitionId a = kNoPartition;
  for (const auto& [pid, st] : s.stats)
    if (a == kNoPartition || st.overall_cost > s.stats.at(a).overall_cost) a = pid;
  if (a == kNoPartition) return std::nullopt;
  const auto& sa = s.stats.at(a);
  double ca = static_cast<double>(sa.overall_cost);
  if (ca <= 0) return std::nullopt;
  std::vector<OracleChoice> all;
  const CellRect ra = s.pm.at(a);

  if (sa.split && !s.idle.empty()) {
    std::optional<std::pair<PartitionId, PartitionId>> best;
    double best_cost = 0;
    for (auto y : s.pm.pids())
      for (auto z : s.pm.pids()) {
        if (!(y < z) || y == a || z == a) continue;
        const CellRect ry = s.pm.at(y), rz = s.pm.at(z);
        auto t = touch(ry, rz);
        if (!t || t->a0 != t->b0 || t->a1 != t->b1) continue;
        double c = static_cast<double>(s.stats.at(y).overall_cost + s.stats.at(z).overall_cost);
        if (!best || c < best_cost) best = {y, z}, best_cost = c;
      }
    if (best) {
      auto [y, z] = *best;
      PartitionId keep = s.stats.at(z).query_count > s.stats.at(y).query_count ? z : y;
      PartitionId donor = keep == y ? z : y;
      double x1 = static_cast<double>(sa.split->choice.cost_low), x2 = static_cast<double>(sa.split->choice.cost_high);
      double moved_q = static_cast<double>(sa.split->qc_high <= sa.split->qc_low ? sa.split->qc_high : sa.split->qc_low);
      double cr = ca - std::max({x1, x2, best_cost});
      double ct = beta * (moved_q + static_cast<double>(s.stats.at(donor).query_count));
      all.push_back({OpKind::SplitMerge, a, keep, cr, ct});
    }
  }
  for (auto b : s.pm.pids()) {
    if (b == a) continue;
    auto t = touch(ra, s.pm.at(b));
    if (!t || t->a0 != t->b0 || t->a1 != t->b1) continue;
    double cb = static_cast<double>(s.stats.at(b).overall_cost);
    if (cb >= ca) continue;
    double cr = (ca - cb) / 2;
    double ct = beta * static_cast<double>(sa.query_count) * cr / ca;
    OpKind k = (t->side == Side::Left || t->side == Side::Right) ? OpKind::VerticalShift : OpKind::HorizontalShift;
    all.push_back({k, a, b, cr, ct});
  }
  for (const auto& c : sa.corners) {
    if (!s.pm.has(c.neighbor) || corner_cells(ra, s.pm.at(c.neighbor)) != c.region) continue;
    double cb = static_cast<double>(s.stats.at(c.neighbor).overall_cost), mv = static_cast<double>(c.cost);
    double cr = ca - std::max(ca - mv, cb + mv);
    all.push_back({OpKind::CornerShift, a, c.neighbor, cr, beta * static_cast<double>(c.query_count)});
  }
  std::optional<OracleChoice> pick;
  auto key = [](const OracleChoice& o) {
    return std::make_tuple(-o.cr, o.kind == OpKind::SplitMerge ? 1 : 0, o.from, o.to, static_cast<int>(o.kind));
  };
  for (const auto& o : all) {
    if (!(o.cr > o.ct)) continue;
    if (!pick || key(o) < key(*pick)) pick = o;
  }
  return pick;
}

// Random snapshot over a random tiling, with corner candidates derived from the geometry.
inline WorkloadSnapshot random_snapshot(Rng& rng, int n, int m) {
  WorkloadSnapshot s;
  int parts = 2 + static_cast<int>(uniform_index(rng, 7));
  s.pm = random_partitioning(n, m, parts, rng);
  for (auto pid : s.pm.pids()) {
    PartitionStats st;
    st.overall_cost = static_cast<std::int64_t>(uniform_index(rng, 1000));
    st.query_count = static_cast<std::int64_t>(uniform_index(rng, 400));
    const CellRect r = s.pm.at(pid);
    if (r.count() >= 2) {
      SplitInfo si;
      si.choice.axis = r.height() >= 2 ? SplitAxis::Horizontal : SplitAxis::Vertical;
      si.choice.cut = si.choice.axis == SplitAxis::Horizontal ? r.ymin : r.xmin;
      si.choice.cost_low = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(st.overall_cost + 1)));
      si.choice.cost_high = st.overall_cost - si.choice.cost_low;
      si.qc_low = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(st.query_count + 1)));
      si.qc_high = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(st.query_count + 1)));
      st.split = si;
    }
    s.stats[pid] = st;
  }
  for (auto pid : s.pm.pids()) {
    auto& st = s.stats[pid];
    for (auto other : s.pm.pids()) {
      if (other == pid) continue;
      if (auto region = corner_cells(s.pm.at(pid), s.pm.at(other))) {
        std::int64_t c = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(st.overall_cost + 1)));
        std::int64_t q = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(st.query_count + 1)));
        st.corners.push_back({other, *region, c, q});
      }
    }
  }
  if (uniform_index(rng, 3) != 0) s.idle.push_back(static_cast<PartitionId>(s.pm.capacity()));
  return s;
}

}  // namespace skystream::testing
