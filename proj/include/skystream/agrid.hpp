#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "grid.hpp"
#include "model.hpp"

namespace skystream {

using PartitionId = std::int32_t;
using Generation = std::uint64_t;

inline constexpr PartitionId kNoPartition = -1;

// pid -> cell rectangle. Dense by pid; a pid without a rectangle is inactive (e.g. the auxiliary
// evaluator).
class PartitionsMap {
 public:
  PartitionsMap() = default;

  void set(PartitionId pid, CellRect r) {
    if (pid < 0) throw Error(ErrorCode::InvalidArgument, "negative pid");
    if (static_cast<std::size_t>(pid) >= entries_.size()) entries_.resize(pid + 1);
    entries_[pid] = r;
  }

  void erase(PartitionId pid) {
    if (has(pid)) entries_[pid].reset();
  }

  bool has(PartitionId pid) const {
    return pid >= 0 && static_cast<std::size_t>(pid) < entries_.size() && entries_[pid].has_value();
  }

  const CellRect& at(PartitionId pid) const {
    if (!has(pid)) throw Error(ErrorCode::InvalidArgument, "unknown pid " + std::to_string(pid));
    return *entries_[pid];
  }

  std::optional<CellRect> find(PartitionId pid) const {
    if (!has(pid)) return std::nullopt;
    return entries_[pid];
  }

  std::vector<PartitionId> pids() const {
    std::vector<PartitionId> out;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i]) out.push_back(static_cast<PartitionId>(i));
    return out;
  }

  std::size_t size() const {
    return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(),
                                                  [](const auto& e) { return e.has_value(); }));
  }

  // One past the largest pid ever set.
  std::size_t capacity() const { return entries_.size(); }

  friend bool operator==(const PartitionsMap& a, const PartitionsMap& b) { return a.pids_and_rects() == b.pids_and_rects(); }

 private:
  std::vector<std::pair<PartitionId, CellRect>> pids_and_rects() const {
    std::vector<std::pair<PartitionId, CellRect>> v;
    for (auto p : pids()) v.emplace_back(p, *entries_[p]);
    return v;
  }

  std::vector<std::optional<CellRect>> entries_;
};

// Fills `owner` (n*m, row-major) from pm and checks the tiling invariant.
inline void fill_owners(const PartitionsMap& pm, int n, int m, std::vector<PartitionId>& owner) {
  owner.assign(static_cast<std::size_t>(n) * m, kNoPartition);
  CellRect full{0, 0, n - 1, m - 1};
  for (auto pid : pm.pids()) {
    const CellRect& r = pm.at(pid);
    if (r.empty() || !full.contains(r))
      throw Error(ErrorCode::InvalidArgument, "partition " + std::to_string(pid) + " outside grid");
    for (int y = r.ymin; y <= r.ymax; ++y) {
      for (int x = r.xmin; x <= r.xmax; ++x) {
        auto& o = owner[static_cast<std::size_t>(y) * n + x];
        if (o != kNoPartition) throw Error(ErrorCode::InvalidArgument, "partitions overlap");
        o = pid;
      }
    }
  }
  if (std::find(owner.begin(), owner.end(), kNoPartition) != owner.end())
    throw Error(ErrorCode::InvalidArgument, "partitions do not cover the grid");
}

struct SearchStats {
  std::int64_t pops = 0;
  std::int64_t pushes = 0;
};

class AGrid {
 public:
  AGrid() : AGrid(GridGeometry{}, single_partition(1, 1)) {}

  AGrid(GridGeometry geom, PartitionsMap pm, Generation gen = 0)
      : geom_(geom), pm_(std::move(pm)), gen_(gen) {
    fill_owners(pm_, geom_.n, geom_.m, owner_);
    marks_.assign(pm_.capacity(), 0);
  }

  static PartitionsMap single_partition(int n, int m) {
    PartitionsMap pm;
    pm.set(0, CellRect{0, 0, n - 1, m - 1});
    return pm;
  }

  const GridGeometry& geometry() const { return geom_; }
  int n() const { return geom_.n; }
  int m() const { return geom_.m; }
  const PartitionsMap& pm() const { return pm_; }
  Generation generation() const { return gen_; }

  PartitionId owner(CellCoord c) const { return owner_[static_cast<std::size_t>(c.y) * geom_.n + c.x]; }

  CellCoord cell_of(const Point& p) const { return geom_.cell_of(p); }

  PartitionId route_point(const Point& p) const { return owner(geom_.cell_of(p)); }

  std::optional<PartitionId> try_route_point(const Point& p) const {
    auto c = geom_.try_cell_of(p);
    if (!c) return std::nullopt;
    return owner(*c);
  }

  CellCoord dominant_cell(PartitionId pid, const CellRect& r) const {
    auto inter = pm_.at(pid).intersection(r);
    if (!inter) throw Error(ErrorCode::NoOverlap, "partition does not overlap range");
    return inter->top_left();
  }

  std::optional<CellCoord> right_dominant(CellCoord c, const CellRect& r) const {
    const CellRect& p = pm_.at(owner(c));
    int x = p.xmax + 1;
    if (x > r.xmax || x >= geom_.n) return std::nullopt;
    return dominant_cell(owner({x, c.y}), r);
  }

  std::optional<CellCoord> bottom_dominant(CellCoord c, const CellRect& r) const {
    const CellRect& p = pm_.at(owner(c));
    int y = p.ymin - 1;
    if (y < r.ymin || y < 0) return std::nullopt;
    return dominant_cell(owner({c.x, y}), r);
  }

  // Partitions overlapping a cell range, found by walking right/bottom dominant-cell shortcuts
  // from the range's top-left cell. Not reentrant: uses per-grid visit marks.
  std::vector<PartitionId> neighbor_search(const CellRect& r, SearchStats* stats = nullptr) const {
    if (++epoch_ == 0) {
      std::fill(marks_.begin(), marks_.end(), 0);
      epoch_ = 1;
    }
    std::vector<PartitionId> out;
    stack_.clear();
    stack_.push_back(r.top_left());
    std::int64_t pops = 0, pushes = 1;
    while (!stack_.empty()) {
      CellCoord c = stack_.back();
      stack_.pop_back();
      ++pops;
      PartitionId p = owner(c);
      if (marks_[p] == epoch_) continue;
      marks_[p] = epoch_;
      out.push_back(p);
      if (auto rc = right_dominant(c, r)) {
        stack_.push_back(*rc);
        ++pushes;
      }
      if (auto bc = bottom_dominant(c, r)) {
        stack_.push_back(*bc);
        ++pushes;
      }
    }
    if (stats) {
      stats->pops += pops;
      stats->pushes += pushes;
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<PartitionId> neighbor_search(const Rect& r, SearchStats* stats = nullptr) const {
    return neighbor_search(geom_.cell_range(r), stats);
  }

  // Installs a new partitioning; rejects layouts that do not tile the grid.
  void apply(PartitionsMap pm, Generation gen) {
    std::vector<PartitionId> owner;
    fill_owners(pm, geom_.n, geom_.m, owner);
    owner_ = std::move(owner);
    pm_ = std::move(pm);
    gen_ = gen;
    if (marks_.size() < pm_.capacity()) marks_.resize(pm_.capacity(), 0);
  }

 private:
  GridGeometry geom_;
  PartitionsMap pm_;
  Generation gen_ = 0;
  std::vector<PartitionId> owner_;
  mutable std::vector<std::uint32_t> marks_;
  mutable std::uint32_t epoch_ = 0;
  mutable std::vector<CellCoord> stack_;
};

// Text snapshot: header `agrid n m generation`, then `pid xcellmin ycellmin xcellmax ycellmax`.
inline void write_snapshot(std::ostream& os, const AGrid& g) {
  os << "agrid " << g.n() << ' ' << g.m() << ' ' << g.generation() << '\n';
  for (auto pid : g.pm().pids()) {
    const auto& r = g.pm().at(pid);
    os << pid << ' ' << r.xmin << ' ' << r.ymin << ' ' << r.xmax << ' ' << r.ymax << '\n';
  }
}

inline AGrid read_snapshot(std::istream& is, Rect world = kUnitWorld) {
  std::string line, tag;
  if (!std::getline(is, line)) throw Error(ErrorCode::Parse, "empty snapshot");
  std::istringstream head(line);
  int n = 0, m = 0;
  Generation gen = 0;
  if (!(head >> tag >> n >> m >> gen) || tag != "agrid")
    throw Error(ErrorCode::Parse, "bad snapshot header: " + line);
  PartitionsMap pm;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    PartitionId pid;
    CellRect r;
    if (!(ls >> pid >> r.xmin >> r.ymin >> r.xmax >> r.ymax))
      throw Error(ErrorCode::Parse, "bad snapshot line: " + line);
    if (pm.has(pid)) throw Error(ErrorCode::Parse, "duplicate pid in snapshot");
    pm.set(pid, r);
  }
  return AGrid(GridGeometry(n, m, world), std::move(pm), gen);
}

}  // namespace skystream
