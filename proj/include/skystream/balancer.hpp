#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <tuple>
#include <vector>

#include "agrid.hpp"
#include "error.hpp"
#include "evaluator.hpp"
#include "grid.hpp"

namespace skystream {

// ---- cost model ---------------------------------------------------------------------------------

inline double cost_reduction_split_merge(double cost_x, double cost_x1, double cost_x2, double cost_y,
                                         double cost_z) {
  return cost_x - std::max({cost_x1, cost_x2, cost_y + cost_z});
}

inline double transfer_overhead_split_merge(double qc_x2, double qc_z, double beta) {
  return beta * (qc_x2 + qc_z);
}

struct ShiftEstimate {
  double cr = 0;
  double ct = 0;
};

inline ShiftEstimate estimate_shift(double cost_a, double cost_b, double qc_a, double beta) {
  if (cost_a <= cost_b) throw Error(ErrorCode::InvalidDirection, "shift must go from heavier to lighter");
  double cr = cost_a - (cost_a + cost_b) / 2;
  return {cr, beta * qc_a * cr / cost_a};
}

// ---- initial decomposition ----------------------------------------------------------------------

// Dense n x m cost array (row-major, y * n + x) with O(1) rectangle sums.
class CostGrid {
 public:
  CostGrid(int n, int m) : n_(n), m_(m), cost_(static_cast<std::size_t>(n) * m, 0) {}
  CostGrid(int n, int m, std::vector<std::int64_t> cost) : n_(n), m_(m), cost_(std::move(cost)) {
    if (cost_.size() != static_cast<std::size_t>(n) * m) throw Error(ErrorCode::InvalidArgument, "cost grid size");
  }

  int n() const { return n_; }
  int m() const { return m_; }
  std::int64_t& at(int x, int y) {
    prefix_.clear();
    return cost_[static_cast<std::size_t>(y) * n_ + x];
  }
  std::int64_t at(int x, int y) const { return cost_[static_cast<std::size_t>(y) * n_ + x]; }

  std::int64_t sum(const CellRect& r) const {
    build();
    auto P = [&](int x, int y) { return prefix_[static_cast<std::size_t>(y) * (n_ + 1) + x]; };
    return P(r.xmax + 1, r.ymax + 1) - P(r.xmin, r.ymax + 1) - P(r.xmax + 1, r.ymin) + P(r.xmin, r.ymin);
  }

 private:
  void build() const {
    if (!prefix_.empty()) return;
    prefix_.assign(static_cast<std::size_t>(n_ + 1) * (m_ + 1), 0);
    for (int y = 0; y < m_; ++y)
      for (int x = 0; x < n_; ++x)
        prefix_[static_cast<std::size_t>(y + 1) * (n_ + 1) + x + 1] =
            cost_[static_cast<std::size_t>(y) * n_ + x] + prefix_[static_cast<std::size_t>(y) * (n_ + 1) + x + 1] +
            prefix_[static_cast<std::size_t>(y + 1) * (n_ + 1) + x] - prefix_[static_cast<std::size_t>(y) * (n_ + 1) + x];
  }

  int n_, m_;
  std::vector<std::int64_t> cost_;
  mutable std::vector<std::int64_t> prefix_;
};

struct DecompositionStep {
  CellRect parent;
  SplitAxis axis = SplitAxis::Horizontal;
  int cut = 0;
  std::int64_t cost_low = 0;
  std::int64_t cost_high = 0;
};

// Cut of `r` minimising the larger side; ties prefer horizontal, then the smaller index.
inline std::optional<DecompositionStep> best_minmax_cut(const CostGrid& g, const CellRect& r) {
  std::optional<DecompositionStep> best;
  auto consider = [&](SplitAxis axis, int cut, CellRect lo, CellRect hi) {
    DecompositionStep s{r, axis, cut, g.sum(lo), g.sum(hi)};
    if (!best || std::max(s.cost_low, s.cost_high) < std::max(best->cost_low, best->cost_high)) best = s;
  };
  for (int y = r.ymin; y < r.ymax; ++y)
    consider(SplitAxis::Horizontal, y, {r.xmin, r.ymin, r.xmax, y}, {r.xmin, y + 1, r.xmax, r.ymax});
  for (int x = r.xmin; x < r.xmax; ++x)
    consider(SplitAxis::Vertical, x, {r.xmin, r.ymin, x, r.ymax}, {x + 1, r.ymin, r.xmax, r.ymax});
  return best;
}

inline std::pair<CellRect, CellRect> split_rect(const CellRect& r, SplitAxis axis, int cut) {
  if (axis == SplitAxis::Horizontal) return {{r.xmin, r.ymin, r.xmax, cut}, {r.xmin, cut + 1, r.xmax, r.ymax}};
  return {{r.xmin, r.ymin, cut, r.ymax}, {cut + 1, r.ymin, r.xmax, r.ymax}};
}

// Recursive decomposition: repeatedly split the heaviest partition on the gridline that minimises the
// larger half. Pids are assigned in (ymin, xmin) order of the final rectangles.
inline PartitionsMap initial_partitioning(const CostGrid& g, int max_partitions,
                                          std::vector<DecompositionStep>* steps = nullptr) {
  if (max_partitions < 1) throw Error(ErrorCode::InvalidArgument, "maxPartitions must be >= 1");
  using Entry = std::tuple<std::int64_t, std::int64_t, CellRect>;  // cost, -sequence, rect
  auto cmp = [](const Entry& a, const Entry& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> heap(cmp);
  std::int64_t seq = 0;
  CellRect full{0, 0, g.n() - 1, g.m() - 1};
  heap.emplace(g.sum(full), -seq++, full);
  std::vector<CellRect> done;
  while (static_cast<int>(heap.size() + done.size()) < max_partitions && !heap.empty()) {
    auto [cost, order, r] = heap.top();
    if (r.count() == 1) break;
    heap.pop();
    auto step = best_minmax_cut(g, r);
    if (steps) steps->push_back(*step);
    auto [lo, hi] = split_rect(r, step->axis, step->cut);
    heap.emplace(step->cost_low, -seq++, lo);
    heap.emplace(step->cost_high, -seq++, hi);
  }
  while (!heap.empty()) {
    done.push_back(std::get<2>(heap.top()));
    heap.pop();
  }
  std::sort(done.begin(), done.end(),
            [](const CellRect& a, const CellRect& b) { return std::tie(a.ymin, a.xmin) < std::tie(b.ymin, b.xmin); });
  PartitionsMap pm;
  for (std::size_t i = 0; i < done.size(); ++i) pm.set(static_cast<PartitionId>(i), done[i]);
  return pm;
}

// Equal-area tiling into `parts` rectangles (rows x columns as close to square as possible).
inline PartitionsMap uniform_partitioning(int n, int m, int parts) {
  if (parts < 1) throw Error(ErrorCode::InvalidArgument, "parts must be >= 1");
  int cols = static_cast<int>(std::floor(std::sqrt(static_cast<double>(parts))));
  while (parts % cols != 0) --cols;
  int rows = parts / cols;
  if (cols > n || rows > m) throw Error(ErrorCode::InvalidArgument, "grid too small for uniform layout");
  PartitionsMap pm;
  PartitionId pid = 0;
  for (int j = 0; j < rows; ++j)
    for (int i = 0; i < cols; ++i)
      pm.set(pid++, CellRect{i * n / cols, j * m / rows, (i + 1) * n / cols - 1, (j + 1) * m / rows - 1});
  return pm;
}

// ---- neighbourhood ------------------------------------------------------------------------------

enum class EdgeKind {
  FullHorizontal,  // shares an entire horizontal boundary (neighbour above or below)
  FullVertical,    // shares an entire vertical boundary (neighbour left or right)
  Corner,          // neighbour's side is a strict, end-aligned part of ours
  Partial,         // touching, but no rectangular hand-over exists
};

struct Adjacency {
  PartitionId other = kNoPartition;
  Side side = Side::Left;  // where `other` lies
  EdgeKind kind = EdgeKind::Partial;
  std::optional<CellRect> corner_region;  // cells of ours that `other` could absorb
};

inline std::optional<Adjacency> adjacency_between(const CellRect& a, const CellRect& b, PartitionId other) {
  std::optional<Side> side;
  int a0 = 0, a1 = 0, b0 = 0, b1 = 0;
  if (b.xmin == a.xmax + 1 || b.xmax + 1 == a.xmin) {
    side = b.xmin == a.xmax + 1 ? Side::Right : Side::Left;
    a0 = a.ymin, a1 = a.ymax, b0 = b.ymin, b1 = b.ymax;
  } else if (b.ymin == a.ymax + 1 || b.ymax + 1 == a.ymin) {
    side = b.ymin == a.ymax + 1 ? Side::Top : Side::Bottom;
    a0 = a.xmin, a1 = a.xmax, b0 = b.xmin, b1 = b.xmax;
  }
  if (!side || std::max(a0, b0) > std::min(a1, b1)) return std::nullopt;
  Adjacency adj{other, *side, EdgeKind::Partial, std::nullopt};
  bool vertical_edge = *side == Side::Left || *side == Side::Right;
  if (a0 == b0 && a1 == b1) {
    adj.kind = vertical_edge ? EdgeKind::FullVertical : EdgeKind::FullHorizontal;
  } else if (a0 <= b0 && b1 <= a1 && (a0 == b0 || a1 == b1)) {
    adj.kind = EdgeKind::Corner;
    adj.corner_region = vertical_edge ? CellRect{a.xmin, b0, a.xmax, b1} : CellRect{b0, a.ymin, b1, a.ymax};
  }
  return adj;
}

inline std::vector<Adjacency> adjacency(const PartitionsMap& pm, PartitionId a) {
  std::vector<Adjacency> out;
  const CellRect& ra = pm.at(a);
  for (auto b : pm.pids()) {
    if (b == a) continue;
    if (auto adj = adjacency_between(ra, pm.at(b), b)) out.push_back(*adj);
  }
  return out;
}

// ---- snapshots and operation selection ----------------------------------------------------------

struct SplitInfo {
  SplitChoice choice;
  std::int64_t qc_low = 0;
  std::int64_t qc_high = 0;
};

struct CornerCandidate {
  PartitionId neighbor = kNoPartition;
  CellRect region;
  std::int64_t cost = 0;
  std::int64_t query_count = 0;
};

struct PartitionStats {
  std::int64_t overall_cost = 0;
  std::int64_t query_count = 0;
  std::optional<SplitInfo> split;
  std::vector<CornerCandidate> corners;
};

struct WorkloadSnapshot {
  PartitionsMap pm;
  std::map<PartitionId, PartitionStats> stats;  // one entry per pid in pm
  std::vector<PartitionId> idle;                // evaluators without cells

  double alpha() const {
    std::int64_t a = 0;
    for (const auto& [pid, s] : stats) a = std::max(a, s.overall_cost);
    return static_cast<double>(a);
  }
};

enum class OpKind { HorizontalShift, VerticalShift, CornerShift, SplitMerge };

inline const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::HorizontalShift: return "HorizontalShift";
    case OpKind::VerticalShift: return "VerticalShift";
    case OpKind::CornerShift: return "CornerShift";
    case OpKind::SplitMerge: return "SplitMerge";
  }
  return "?";
}

struct RebalanceOp {
  OpKind kind = OpKind::HorizontalShift;
  // Shifts: cells leave `from` toward `to`, which lies on `side` of `from`.
  PartitionId from = kNoPartition;
  PartitionId to = kNoPartition;
  Side side = Side::Left;
  std::optional<CellRect> region;  // corner region, or a fixed strip
  double target_cost = 0;          // H/V shifts: (cost(from) + cost(to)) / 2
  // Split/merge: `from` splits, its `split_high` side (cells above the cut) or low side moves to
  // `aux`; `merge_donor` hands all cells to `merge_keep` and becomes idle.
  SplitChoice split;
  bool move_high = true;
  PartitionId merge_keep = kNoPartition;
  PartitionId merge_donor = kNoPartition;
  PartitionId aux = kNoPartition;
  double cr = 0;
  double ct = 0;

  bool is_shift() const { return kind != OpKind::SplitMerge; }
};

inline int kind_rank(OpKind k) { return k == OpKind::SplitMerge ? 1 : 0; }

// Ordering used to pick among candidates: larger Cr first, then shifts before split/merge, then
// lower from-pid, lower to-pid, and the enum order of the kind.
inline bool better_candidate(const RebalanceOp& a, const RebalanceOp& b) {
  if (a.cr != b.cr) return a.cr > b.cr;
  if (kind_rank(a.kind) != kind_rank(b.kind)) return kind_rank(a.kind) < kind_rank(b.kind);
  if (a.from != b.from) return a.from < b.from;
  PartitionId ta = a.is_shift() ? a.to : a.merge_keep, tb = b.is_shift() ? b.to : b.merge_keep;
  if (ta != tb) return ta < tb;
  return static_cast<int>(a.kind) < static_cast<int>(b.kind);
}

inline PartitionId heaviest(const WorkloadSnapshot& s) {
  PartitionId best = kNoPartition;
  std::int64_t cost = -1;
  for (const auto& [pid, st] : s.stats)
    if (st.overall_cost > cost) best = pid, cost = st.overall_cost;
  return best;
}

// Every candidate operation for the heaviest evaluator, scored; unfiltered by Cr > Ct.
inline std::vector<RebalanceOp> enumerate_candidates(const WorkloadSnapshot& s, double beta) {
  std::vector<RebalanceOp> out;
  PartitionId a = heaviest(s);
  if (a == kNoPartition) return out;
  const PartitionStats& sa = s.stats.at(a);
  double cost_a = static_cast<double>(sa.overall_cost);
  if (cost_a <= 0) return out;

  if (sa.split && !s.idle.empty()) {
    std::optional<std::pair<PartitionId, PartitionId>> pair;
    std::int64_t pair_cost = 0;
    auto pids = s.pm.pids();
    for (std::size_t i = 0; i < pids.size(); ++i) {
      for (std::size_t j = i + 1; j < pids.size(); ++j) {
        PartitionId y = pids[i], z = pids[j];
        if (y == a || z == a || !s.pm.at(y).rect_union(s.pm.at(z))) continue;
        std::int64_t c = s.stats.at(y).overall_cost + s.stats.at(z).overall_cost;
        if (!pair || c < pair_cost) pair = {y, z}, pair_cost = c;
      }
    }
    if (pair) {
      RebalanceOp op;
      op.kind = OpKind::SplitMerge;
      op.from = a;
      op.split = sa.split->choice;
      op.move_high = sa.split->qc_high <= sa.split->qc_low;
      auto [y, z] = *pair;
      if (s.stats.at(y).query_count < s.stats.at(z).query_count) std::swap(y, z);
      op.merge_keep = y;
      op.merge_donor = z;
      op.aux = *std::min_element(s.idle.begin(), s.idle.end());
      double x1 = static_cast<double>(op.split.cost_low), x2 = static_cast<double>(op.split.cost_high);
      op.cr = cost_reduction_split_merge(cost_a, x1, x2, static_cast<double>(s.stats.at(y).overall_cost),
                                         static_cast<double>(s.stats.at(z).overall_cost));
      double qc_moved = static_cast<double>(op.move_high ? sa.split->qc_high : sa.split->qc_low);
      op.ct = transfer_overhead_split_merge(qc_moved, static_cast<double>(s.stats.at(z).query_count), beta);
      out.push_back(op);
    }
  }

  for (const auto& adj : adjacency(s.pm, a)) {
    if (adj.kind != EdgeKind::FullHorizontal && adj.kind != EdgeKind::FullVertical) continue;
    double cost_b = static_cast<double>(s.stats.at(adj.other).overall_cost);
    if (cost_b >= cost_a) continue;
    auto est = estimate_shift(cost_a, cost_b, static_cast<double>(sa.query_count), beta);
    RebalanceOp op;
    op.kind = adj.kind == EdgeKind::FullHorizontal ? OpKind::HorizontalShift : OpKind::VerticalShift;
    op.from = a;
    op.to = adj.other;
    op.side = adj.side;
    op.target_cost = (cost_a + cost_b) / 2;
    op.cr = est.cr;
    op.ct = est.ct;
    out.push_back(op);
  }

  for (const auto& c : sa.corners) {
    auto it = s.stats.find(c.neighbor);
    if (it == s.stats.end()) continue;
    auto adj = adjacency_between(s.pm.at(a), s.pm.at(c.neighbor), c.neighbor);
    if (!adj || adj->kind != EdgeKind::Corner || adj->corner_region != c.region) continue;
    double cost_b = static_cast<double>(it->second.overall_cost);
    double moved = static_cast<double>(c.cost);
    RebalanceOp op;
    op.kind = OpKind::CornerShift;
    op.from = a;
    op.to = c.neighbor;
    op.side = adj->side;
    op.region = c.region;
    op.cr = cost_a - std::max(cost_a - moved, cost_b + moved);
    op.ct = beta * static_cast<double>(c.query_count);
    out.push_back(op);
  }
  return out;
}

inline std::optional<RebalanceOp> select_rebalance_op(const WorkloadSnapshot& s, double beta) {
  std::optional<RebalanceOp> best;
  for (const auto& op : enumerate_candidates(s, beta)) {
    if (!(op.cr > op.ct)) continue;
    if (!best || better_candidate(op, *best)) best = op;
  }
  return best;
}

// Partitioning after an operation is carried out.
inline PartitionsMap apply_op(const PartitionsMap& pm, const RebalanceOp& op, const CellRect& moved) {
  PartitionsMap out = pm;
  const CellRect& src = pm.at(op.from);
  auto rest = [&](const CellRect& whole, const CellRect& part) -> CellRect {
    if (part.xmin == whole.xmin && part.xmax == whole.xmax)
      return part.ymin == whole.ymin ? CellRect{whole.xmin, part.ymax + 1, whole.xmax, whole.ymax}
                                     : CellRect{whole.xmin, whole.ymin, whole.xmax, part.ymin - 1};
    return part.xmin == whole.xmin ? CellRect{part.xmax + 1, whole.ymin, whole.xmax, whole.ymax}
                                   : CellRect{whole.xmin, whole.ymin, part.xmin - 1, whole.ymax};
  };
  if (op.is_shift()) {
    auto merged = pm.at(op.to).rect_union(moved);
    if (!merged || !src.contains(moved) || moved == src)
      throw Error(ErrorCode::RegionMismatch, "shift region does not yield rectangles");
    out.set(op.from, rest(src, moved));
    out.set(op.to, *merged);
    return out;
  }
  auto merged = pm.at(op.merge_keep).rect_union(pm.at(op.merge_donor));
  if (!merged) throw Error(ErrorCode::RegionMismatch, "merge pair is not mergeable");
  out.set(op.from, rest(src, moved));
  out.set(op.aux, moved);
  out.set(op.merge_keep, *merged);
  out.erase(op.merge_donor);
  return out;
}

inline CellRect split_moved_region(const CellRect& bounds, const RebalanceOp& op) {
  auto [lo, hi] = split_rect(bounds, op.split.axis, op.split.cut);
  return op.move_high ? hi : lo;
}

// ---- granularity --------------------------------------------------------------------------------

struct GranularityModel {
  double lambda_d = 10;
  double lambda_q = 1;
  double k = 1e5;          // steady-state number of registered queries
  double r_q = 0.001;      // mean query side length (unit world)
  double overlap = 1.0;    // cells touched by a query smaller than a cell, in [1, 4)
  std::function<double(double)> F = [](double d) { return d; };
};

// Evaluator demand for cell side r_c: data cost from queries per cell plus registration cost from
// cells per query.
inline double evaluator_demand(const GranularityModel& g, double r_c) {
  if (g.r_q < r_c) return g.lambda_d * g.F(g.overlap * g.k * r_c * r_c) + g.lambda_q * g.overlap;
  double ratio = g.r_q / r_c;
  return g.lambda_d * g.F(g.k * g.r_q * g.r_q) + g.lambda_q * ratio * ratio;
}

struct GranularityAdvice {
  double r_c = 0;
  int cells_per_axis = 0;
  std::vector<std::pair<double, double>> sweep;  // (r_c, demand)
};

inline GranularityAdvice advise_granularity(const GranularityModel& g,
                                            const std::vector<double>& multipliers = {0.25, 0.5, 1, 2, 4}) {
  if (!(g.r_q > 0 && g.r_q <= 1) || g.k <= 0 || g.lambda_d < 0 || g.lambda_q < 0)
    throw Error(ErrorCode::InvalidArgument, "invalid granularity model");
  GranularityAdvice a;
  a.r_c = g.r_q;
  a.cells_per_axis = static_cast<int>(std::lround(1.0 / g.r_q));
  for (double mult : multipliers) a.sweep.emplace_back(mult * g.r_q, evaluator_demand(g, mult * g.r_q));
  return a;
}

}  // namespace skystream
