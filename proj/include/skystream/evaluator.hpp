#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "agrid.hpp"
#include "error.hpp"
#include "grid.hpp"
#include "model.hpp"
#include "routing.hpp"

namespace skystream {

// Horizontal cuts separate rows (scored with row aggregates); vertical cuts separate columns.
enum class SplitAxis { Horizontal, Vertical };

inline const char* to_string(SplitAxis a) { return a == SplitAxis::Horizontal ? "horizontal" : "vertical"; }

struct SplitChoice {
  SplitAxis axis = SplitAxis::Horizontal;
  int cut = 0;               // cells with index <= cut on the axis form the low side
  std::int64_t cost_low = 0;
  std::int64_t cost_high = 0;

  std::int64_t imbalance() const { return cost_low > cost_high ? cost_low - cost_high : cost_high - cost_low; }
};

// Where the neighbour lies relative to this evaluator's rectangle.
enum class Side { Left, Right, Bottom, Top };

inline const char* to_string(Side s) {
  switch (s) {
    case Side::Left: return "left";
    case Side::Right: return "right";
    case Side::Bottom: return "bottom";
    case Side::Top: return "top";
  }
  return "?";
}

struct ShiftCut {
  int cut = 0;
  CellRect strip;            // cells handed to the neighbour
  std::int64_t cost = 0;
  std::int64_t query_count = 0;
};

// The `width` rows or columns of `r` nearest to `side`.
inline CellRect strip_toward(const CellRect& r, Side side, int width) {
  switch (side) {
    case Side::Top: return {r.xmin, r.ymax - width + 1, r.xmax, r.ymax};
    case Side::Bottom: return {r.xmin, r.ymin, r.xmax, r.ymin + width - 1};
    case Side::Right: return {r.xmax - width + 1, r.ymin, r.xmax, r.ymax};
    case Side::Left: return {r.xmin, r.ymin, r.xmin + width - 1, r.ymax};
  }
  return r;
}

// Cell contents as shipped between evaluators.
struct CellPayload {
  CellCoord cell;
  std::int64_t cost = 0;
  std::vector<QueryPtr> queries;
};

struct CellTransferBatch {
  CellRect region;
  std::vector<CellPayload> cells;
};

enum class RegisterStatus { Registered, Duplicate, NoOverlap };

enum class CostMode {
  Candidates,  // candidates found through the cell's inverted lists
  LiveScan,    // every live query at the evaluator (a matcher without an index)
};

struct EvaluatorCounters {
  std::int64_t duplicate_registrations = 0;
  std::int64_t no_overlap_registrations = 0;
  std::int64_t objects_processed = 0;
  std::int64_t candidates = 0;
  std::int64_t matches = 0;
  std::int64_t expired_removed = 0;
};

class EvaluatorState {
 public:
  struct Cell {
    std::int64_t cost = 0;
    std::vector<QueryPtr> queries;
    std::unordered_map<std::string, std::vector<const ContinuousQuery*>> inverted;

    bool has(QueryId qid) const {
      return std::any_of(queries.begin(), queries.end(), [&](const QueryPtr& q) { return q->qid == qid; });
    }
  };

  EvaluatorState() = default;
  EvaluatorState(PartitionId pid, GridGeometry geom, std::optional<CellRect> bounds, SummaryPolicy policy = {})
      : pid_(pid), geom_(geom), bounds_(bounds), policy_(std::move(policy)),
        row_agg_(geom.m, 0), col_agg_(geom.n, 0), row_q_(geom.m, 0), col_q_(geom.n, 0) {
    if (bounds_ && !geom_.full().contains(*bounds_))
      throw Error(ErrorCode::RegionMismatch, "bounds outside grid");
  }

  PartitionId pid() const { return pid_; }
  const GridGeometry& geometry() const { return geom_; }
  const std::optional<CellRect>& bounds() const { return bounds_; }
  const std::optional<CellRect>& incoming() const { return incoming_; }
  const SummaryPolicy& policy() const { return policy_; }

  std::int64_t overall_cost() const { return overall_cost_; }
  std::int64_t overall_q() const { return overall_q_; }
  std::int64_t query_count() const { return static_cast<std::int64_t>(registry_.size()); }
  const std::vector<std::int64_t>& row_agg() const { return row_agg_; }
  const std::vector<std::int64_t>& col_agg() const { return col_agg_; }
  const std::vector<std::int64_t>& row_q() const { return row_q_; }
  const std::vector<std::int64_t>& col_q() const { return col_q_; }
  const std::map<std::int64_t, Cell>& cells() const { return cells_; }
  const EvaluatorCounters& counters() const { return counters_; }

  void set_cost_mode(CostMode m) { cost_mode_ = m; }
  void set_emit_filter(std::function<bool(const ContinuousQuery&, const SpatialKeywordObject&)> f) {
    emit_filter_ = std::move(f);
  }

  bool holds(CellCoord c) const {
    return (bounds_ && bounds_->contains(c)) || (incoming_ && incoming_->contains(c));
  }

  void set_bounds(std::optional<CellRect> b) { bounds_ = b; }
  void set_incoming(std::optional<CellRect> r) { incoming_ = r; }

  bool has_query(QueryId qid) const { return registry_.count(qid) != 0; }

  std::vector<QueryPtr> live_queries() const {
    std::vector<QueryPtr> out;
    out.reserve(registry_.size());
    for (const auto& [qid, e] : registry_) out.push_back(e.query);
    std::sort(out.begin(), out.end(), [](const QueryPtr& a, const QueryPtr& b) { return a->qid < b->qid; });
    return out;
  }

  // Attaches q to every held cell its range overlaps.
  RegisterStatus register_query(QueryPtr q) {
    if (registry_.count(q->qid)) {
      ++counters_.duplicate_registrations;
      return RegisterStatus::Duplicate;
    }
    if (attach_query(q) == 0) {
      ++counters_.no_overlap_registrations;
      return RegisterStatus::NoOverlap;
    }
    return RegisterStatus::Registered;
  }

  RegisterStatus register_query(const ContinuousQuery& q) {
    return register_query(std::make_shared<const ContinuousQuery>(q));
  }

  // Attaches q to held cells overlapping its range, skipping cells that already carry it. Returns the
  // number of cells newly attached.
  std::size_t attach_query(const QueryPtr& q) {
    auto range = geom_.try_cell_range(q->mbr);
    if (!range) return 0;
    std::size_t attached = 0;
    for (const auto* area : {&bounds_, &incoming_}) {
      if (!*area) continue;
      auto inter = range->intersection(**area);
      if (!inter) continue;
      for (int y = inter->ymin; y <= inter->ymax; ++y)
        for (int x = inter->xmin; x <= inter->xmax; ++x) attached += attach_to_cell({x, y}, q) ? 1 : 0;
    }
    return attached;
  }

  // Like attach_query, restricted to cells inside `area`.
  std::size_t attach_query_within(const QueryPtr& q, const CellRect& area) {
    auto range = geom_.try_cell_range(q->mbr);
    if (!range) return 0;
    auto inter = range->intersection(area);
    if (!inter) return 0;
    std::size_t attached = 0;
    for (int y = inter->ymin; y <= inter->ymax; ++y)
      for (int x = inter->xmin; x <= inter->xmax; ++x)
        if (holds({x, y})) attached += attach_to_cell({x, y}, q) ? 1 : 0;
    return attached;
  }

  std::vector<MatchResult> process_object(const SpatialKeywordObject& o) {
    std::vector<MatchResult> out;
    process_object(o, out);
    return out;
  }

  void process_object(const SpatialKeywordObject& o, std::vector<MatchResult>& out) {
    CellCoord c = geom_.cell_of(o.loc);
    if (!holds(c)) throw Error(ErrorCode::OutOfBounds, "object outside evaluator bounds");
    ++counters_.objects_processed;
    std::int64_t key = geom_.key(c);
    auto it = cells_.find(key);
    scratch_.clear();
    if (it != cells_.end()) {
      for (const auto& w : o.text) {
        auto lst = it->second.inverted.find(w);
        if (lst == it->second.inverted.end()) continue;
        scratch_.insert(scratch_.end(), lst->second.begin(), lst->second.end());
      }
      std::sort(scratch_.begin(), scratch_.end(),
                [](const ContinuousQuery* a, const ContinuousQuery* b) { return a->qid < b->qid; });
      scratch_.erase(std::unique(scratch_.begin(), scratch_.end()), scratch_.end());
    }
    std::int64_t live = 0;
    for (const ContinuousQuery* q : scratch_) {
      if (!live_at(*q, o.ts)) continue;
      ++live;
      if (matches(o, *q) && (!emit_filter_ || emit_filter_(*q, o))) {
        out.push_back({q->qid, o.oid, o.ts});
        ++counters_.matches;
      }
    }
    std::int64_t cost = cost_mode_ == CostMode::Candidates ? live : live_query_count(o.ts);
    counters_.candidates += cost;
    if (cost > 0) add_cost(c, cost);
  }

  // Removes every expired query immediately (one full cleaning cycle).
  std::size_t expire_queries(Timestamp now) {
    std::int64_t before = counters_.expired_removed;
    reset_cleaning();
    while (!cleaning_step(now, cells_.size() + 1)) {}
    return static_cast<std::size_t>(counters_.expired_removed - before);
  }

  // Visits the next `budget` occupied cells in row-major order, dropping queries whose expiry is at
  // or before `now`. Returns the rebuilt summary when the cursor wraps.
  std::optional<KeywordSet> cleaning_step(Timestamp now, std::size_t budget) {
    if (budget == 0) throw Error(ErrorCode::InvalidArgument, "cleaning budget must be positive");
    if (!cycle_active_) {
      cycle_active_ = true;
      cursor_ = -1;
      acc_.clear();
    }
    auto it = cells_.upper_bound(cursor_);
    for (std::size_t visited = 0; visited < budget && it != cells_.end(); ++visited) {
      cursor_ = it->first;
      CellCoord c = geom_.coord(it->first);
      Cell& cell = it->second;
      std::vector<QueryPtr> keep;
      keep.reserve(cell.queries.size());
      for (auto& q : cell.queries) {
        if (q->expiry <= now) {
          if (detach_query_stats(c, *q)) ++counters_.expired_removed;
          unindex(cell, *q);
        } else {
          keep.push_back(q);
        }
      }
      cell.queries.swap(keep);
      for (const auto& q : cell.queries) accumulate(*q);
      ++it;
    }
    if (it != cells_.end()) return std::nullopt;
    cycle_active_ = false;
    std::vector<std::string> words;
    words.reserve(acc_.size());
    for (const auto& [w, n] : acc_) words.push_back(w);
    acc_.clear();
    return KeywordSet(std::move(words));
  }

  void reset_cleaning() {
    cycle_active_ = false;
    acc_.clear();
  }

  bool cleaning_in_progress() const { return cycle_active_; }

  SplitChoice find_best_split() const {
    if (!bounds_) throw Error(ErrorCode::Unsplittable, "evaluator owns no cells");
    const CellRect& b = *bounds_;
    if (b.width() < 2 && b.height() < 2) throw Error(ErrorCode::Unsplittable, "single cell");
    std::optional<SplitChoice> best;
    auto consider = [&](const SplitChoice& s) {
      if (!best || s.imbalance() < best->imbalance()) best = s;
    };
    if (b.height() >= 2) consider(scan_axis(row_agg_, b.ymin, b.ymax, SplitAxis::Horizontal));
    if (b.width() >= 2) consider(scan_axis(col_agg_, b.xmin, b.xmax, SplitAxis::Vertical));
    return *best;
  }

  // Picks the strip toward `side` whose removal brings this evaluator closest to target_cost.
  ShiftCut find_shift_cut(double target_cost, Side side) const {
    if (!bounds_) throw Error(ErrorCode::NoImprovement, "evaluator owns no cells");
    const CellRect& b = *bounds_;
    double total = static_cast<double>(overall_cost_);
    if (target_cost >= total) throw Error(ErrorCode::NoImprovement, "already at or below target");
    bool rows = side == Side::Top || side == Side::Bottom;
    const auto& agg = rows ? row_agg_ : col_agg_;
    int lo = rows ? b.ymin : b.xmin, hi = rows ? b.ymax : b.xmax;
    bool from_high = side == Side::Top || side == Side::Right;
    int span = hi - lo + 1;
    if (span < 2) throw Error(ErrorCode::NoImprovement, "no strip can leave cells behind");
    std::int64_t strip = 0;
    int best_w = 0;
    std::int64_t best_cost = 0;
    double best_gap = 0;
    for (int w = 1; w < span; ++w) {
      strip += agg[from_high ? hi - w + 1 : lo + w - 1];
      double gap = std::abs(total - static_cast<double>(strip) - target_cost);
      if (best_w == 0 || gap < best_gap) {
        best_w = w;
        best_gap = gap;
        best_cost = strip;
      }
    }
    double neighbour = 2 * target_cost - total;
    double after = std::max(total - static_cast<double>(best_cost), neighbour + static_cast<double>(best_cost));
    if (best_cost <= 0 || after >= total) throw Error(ErrorCode::NoImprovement, "no strip lowers the maximum");
    ShiftCut out;
    out.strip = strip_toward(b, side, best_w);
    out.cut = from_high ? hi - best_w : lo + best_w - 1;
    out.cost = best_cost;
    out.query_count = region_query_count(out.strip);
    return out;
  }

  // Removes a region from the edge of this evaluator's rectangle (or the whole rectangle).
  CellTransferBatch extract_cells(const CellRect& region) {
    if (!bounds_ || !bounds_->contains(region)) throw Error(ErrorCode::RegionMismatch, "region not owned");
    std::optional<CellRect> rest = remainder(*bounds_, region);
    if (!rest && region != *bounds_) throw Error(ErrorCode::RegionMismatch, "remainder would not be a rectangle");
    CellTransferBatch batch = copy_cells(region, 0, region.count());
    drop_cells(region);
    bounds_ = rest;
    return batch;
  }

  void absorb_cells(const CellTransferBatch& batch) {
    if (bounds_) {
      auto merged = bounds_->rect_union(batch.region);
      if (!merged) throw Error(ErrorCode::RegionMismatch, "region not adjacent or overlaps bounds");
      bounds_ = merged;
    } else {
      if (!geom_.full().contains(batch.region)) throw Error(ErrorCode::RegionMismatch, "region outside grid");
      bounds_ = batch.region;
    }
    absorb_partial(batch);
  }

  // Copies occupied cells of `region` whose row-major position inside the region is in [from, to).
  CellTransferBatch copy_cells(const CellRect& region, std::int64_t from, std::int64_t to) const {
    CellTransferBatch batch;
    batch.region = region;
    std::int64_t w = region.width();
    from = std::max<std::int64_t>(from, 0);
    to = std::min(to, region.count());
    if (from >= to) return batch;
    int y0 = region.ymin + static_cast<int>(from / w);
    int y1 = region.ymin + static_cast<int>((to - 1) / w);
    for (int y = y0; y <= y1; ++y) {
      auto it = cells_.lower_bound(geom_.key({region.xmin, y}));
      auto end = cells_.upper_bound(geom_.key({region.xmax, y}));
      for (; it != end; ++it) {
        CellCoord c = geom_.coord(it->first);
        std::int64_t pos = static_cast<std::int64_t>(y - region.ymin) * w + (c.x - region.xmin);
        if (pos < from || pos >= to) continue;
        batch.cells.push_back({c, it->second.cost, it->second.queries});
      }
    }
    return batch;
  }

  void drop_cells(const CellRect& region) {
    for (int y = region.ymin; y <= region.ymax; ++y) {
      auto it = cells_.lower_bound(geom_.key({region.xmin, y}));
      auto end = cells_.upper_bound(geom_.key({region.xmax, y}));
      while (it != end) {
        CellCoord c = geom_.coord(it->first);
        Cell& cell = it->second;
        for (const auto& q : cell.queries) detach_query_stats(c, *q);
        sub_cost(c, cell.cost);
        it = cells_.erase(it);
      }
    }
    if (cycle_active_) reset_cleaning();
  }

  void absorb_partial(const CellTransferBatch& batch) {
    for (const auto& p : batch.cells) {
      if (!batch.region.contains(p.cell)) throw Error(ErrorCode::ProtocolViolation, "cell outside batch region");
      if (p.cost > 0) add_cost(p.cell, p.cost);
      for (const auto& q : p.queries) attach_to_cell(p.cell, q);
    }
  }

  std::int64_t region_cost(const CellRect& region) const {
    std::int64_t total = 0;
    for_each_cell(region, [&](CellCoord, const Cell& c) { total += c.cost; });
    return total;
  }

  std::int64_t region_query_count(const CellRect& region) const {
    std::unordered_set<QueryId> seen;
    for_each_cell(region, [&](CellCoord, const Cell& c) {
      for (const auto& q : c.queries) seen.insert(q->qid);
    });
    return static_cast<std::int64_t>(seen.size());
  }

  template <typename F>
  void for_each_cell(const CellRect& region, F&& f) const {
    for (int y = region.ymin; y <= region.ymax; ++y) {
      auto it = cells_.lower_bound(geom_.key({region.xmin, y}));
      auto end = cells_.upper_bound(geom_.key({region.xmax, y}));
      for (; it != end; ++it) f(geom_.coord(it->first), it->second);
    }
  }

  // Union of summary contributions over queries currently registered here.
  KeywordSet live_summary() const {
    KeywordSet out;
    for (const auto& [qid, e] : registry_) out.merge(summary_contribution(*e.query, policy_));
    return out;
  }

 private:
  struct RegistryEntry {
    QueryPtr query;
    std::int64_t cells = 0;
  };

  static std::optional<CellRect> remainder(const CellRect& b, const CellRect& r) {
    if (r == b) return std::nullopt;
    if (r.xmin == b.xmin && r.xmax == b.xmax) {
      if (r.ymax == b.ymax) return CellRect{b.xmin, b.ymin, b.xmax, r.ymin - 1};
      if (r.ymin == b.ymin) return CellRect{b.xmin, r.ymax + 1, b.xmax, b.ymax};
    }
    if (r.ymin == b.ymin && r.ymax == b.ymax) {
      if (r.xmax == b.xmax) return CellRect{b.xmin, b.ymin, r.xmin - 1, b.ymax};
      if (r.xmin == b.xmin) return CellRect{r.xmax + 1, b.ymin, b.xmax, b.ymax};
    }
    return std::nullopt;
  }

  // Linear scan with early exit: the imbalance shrinks until the prefix passes half the total and
  // grows afterwards, so the first minimum is the smallest optimal cut.
  static SplitChoice scan_axis(const std::vector<std::int64_t>& agg, int lo, int hi, SplitAxis axis) {
    std::int64_t total = 0;
    for (int i = lo; i <= hi; ++i) total += agg[i];
    SplitChoice best;
    bool have = false;
    std::int64_t prefix = 0;
    for (int cut = lo; cut < hi; ++cut) {
      prefix += agg[cut];
      SplitChoice s{axis, cut, prefix, total - prefix};
      if (!have || s.imbalance() < best.imbalance()) {
        best = s;
        have = true;
      }
      if (2 * prefix >= total) break;
    }
    return best;
  }

  bool attach_to_cell(CellCoord c, const QueryPtr& q) {
    Cell& cell = cells_[geom_.key(c)];
    if (cell.has(q->qid)) return false;
    cell.queries.push_back(q);
    for (const auto& w : q->text) cell.inverted[w].push_back(q.get());
    ++row_q_[c.y];
    ++col_q_[c.x];
    ++overall_q_;
    auto [it, inserted] = registry_.try_emplace(q->qid, RegistryEntry{q, 0});
    ++it->second.cells;
    if (inserted) {
      if (cost_mode_ == CostMode::LiveScan) insert_expiry(q->expiry);
      if (cycle_active_) accumulate(*q);
    }
    return true;
  }

  void unindex(Cell& cell, const ContinuousQuery& q) {
    for (const auto& w : q.text) {
      auto it = cell.inverted.find(w);
      if (it == cell.inverted.end()) continue;
      auto& v = it->second;
      v.erase(std::remove(v.begin(), v.end(), &q), v.end());
      if (v.empty()) cell.inverted.erase(it);
    }
  }

  // Returns true when this was the query's last cell here.
  bool detach_query_stats(CellCoord c, const ContinuousQuery& q) {
    --row_q_[c.y];
    --col_q_[c.x];
    --overall_q_;
    auto it = registry_.find(q.qid);
    if (it == registry_.end() || --it->second.cells > 0) return false;
    if (cost_mode_ == CostMode::LiveScan) erase_expiry(q.expiry);
    registry_.erase(it);
    return true;
  }

  void accumulate(const ContinuousQuery& q) {
    for (const auto& w : summary_contribution(q, policy_)) ++acc_[w];
  }

  void add_cost(CellCoord c, std::int64_t v) {
    cells_[geom_.key(c)].cost += v;
    row_agg_[c.y] += v;
    col_agg_[c.x] += v;
    overall_cost_ += v;
  }

  void sub_cost(CellCoord c, std::int64_t v) {
    row_agg_[c.y] -= v;
    col_agg_[c.x] -= v;
    overall_cost_ -= v;
  }

  // Expiries kept sorted lazily: registrations arrive in bursts, lookups come from objects.
  void insert_expiry(Timestamp t) {
    expiries_.push_back(t);
    expiries_sorted_ = false;
  }
  void erase_expiry(Timestamp t) {
    sort_expiries();
    auto it = std::lower_bound(expiries_.begin(), expiries_.end(), t);
    if (it != expiries_.end() && *it == t) expiries_.erase(it);
  }
  void sort_expiries() const {
    if (expiries_sorted_) return;
    std::sort(expiries_.begin(), expiries_.end());
    expiries_sorted_ = true;
  }
  std::int64_t live_query_count(Timestamp ts) const {
    sort_expiries();
    return expiries_.end() - std::upper_bound(expiries_.begin(), expiries_.end(), ts);
  }

  PartitionId pid_ = kNoPartition;
  GridGeometry geom_;
  std::optional<CellRect> bounds_;
  std::optional<CellRect> incoming_;
  SummaryPolicy policy_;
  CostMode cost_mode_ = CostMode::Candidates;
  std::function<bool(const ContinuousQuery&, const SpatialKeywordObject&)> emit_filter_;

  std::map<std::int64_t, Cell> cells_;
  std::vector<std::int64_t> row_agg_, col_agg_, row_q_, col_q_;
  std::int64_t overall_cost_ = 0;
  std::int64_t overall_q_ = 0;
  std::unordered_map<QueryId, RegistryEntry> registry_;
  mutable std::vector<Timestamp> expiries_;
  mutable bool expiries_sorted_ = true;

  bool cycle_active_ = false;
  std::int64_t cursor_ = -1;
  std::unordered_map<std::string, std::uint32_t> acc_;

  EvaluatorCounters counters_;
  std::vector<const ContinuousQuery*> scratch_;
};

}  // namespace skystream
