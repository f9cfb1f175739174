#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "agrid.hpp"
#include "grid.hpp"
#include "model.hpp"

namespace skystream {

// Sort-tile-recursive packed R-tree over closed rectangles, used as the hierarchical reference
// index in routing benchmarks. Counts visited nodes.
class PackedRTree {
 public:
  struct Box {
    double xmin = 0, ymin = 0, xmax = 0, ymax = 0;

    bool intersects(const Box& o) const { return xmin <= o.xmax && o.xmin <= xmax && ymin <= o.ymax && o.ymin <= ymax; }
    bool contains(double x, double y) const { return xmin <= x && x <= xmax && ymin <= y && y <= ymax; }
    void expand(const Box& o) {
      xmin = std::min(xmin, o.xmin);
      ymin = std::min(ymin, o.ymin);
      xmax = std::max(xmax, o.xmax);
      ymax = std::max(ymax, o.ymax);
    }
  };

  PackedRTree() = default;

  PackedRTree(std::vector<std::pair<Box, int>> items, int fanout = 8) : fanout_(std::max(2, fanout)) {
    if (items.empty()) return;
    std::vector<int> level;
    for (auto& [box, id] : items) {
      nodes_.push_back({box, true, id, {}});
      level.push_back(static_cast<int>(nodes_.size()) - 1);
    }
    while (level.size() > 1) level = pack(level);
    root_ = level.front();
  }

  int height() const {
    int h = 0;
    for (int n = root_; n >= 0; n = nodes_[n].leaf ? -1 : nodes_[n].children.front()) ++h;
    return h;
  }

  std::vector<int> query_point(double x, double y, std::int64_t* visited = nullptr) const {
    std::vector<int> out;
    if (root_ < 0) return out;
    std::vector<int> stack{root_};
    while (!stack.empty()) {
      int n = stack.back();
      stack.pop_back();
      if (visited) ++*visited;
      const Node& nd = nodes_[n];
      if (!nd.box.contains(x, y)) continue;
      if (nd.leaf) out.push_back(nd.id);
      else stack.insert(stack.end(), nd.children.begin(), nd.children.end());
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<int> query_range(const Box& r, std::int64_t* visited = nullptr) const {
    std::vector<int> out;
    if (root_ < 0) return out;
    std::vector<int> stack{root_};
    while (!stack.empty()) {
      int n = stack.back();
      stack.pop_back();
      if (visited) ++*visited;
      const Node& nd = nodes_[n];
      if (!nd.box.intersects(r)) continue;
      if (nd.leaf) out.push_back(nd.id);
      else stack.insert(stack.end(), nd.children.begin(), nd.children.end());
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Node {
    Box box;
    bool leaf = false;
    int id = -1;
    std::vector<int> children;
  };

  static double cx(const Box& b) { return (b.xmin + b.xmax) / 2; }
  static double cy(const Box& b) { return (b.ymin + b.ymax) / 2; }

  std::vector<int> pack(std::vector<int> level) {
    std::size_t n = level.size();
    std::size_t groups = (n + fanout_ - 1) / fanout_;
    std::size_t slices = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(groups))));
    std::size_t per_slice = slices * fanout_;
    std::sort(level.begin(), level.end(), [&](int a, int b) { return cx(nodes_[a].box) < cx(nodes_[b].box); });
    std::vector<int> parents;
    for (std::size_t s = 0; s < n; s += per_slice) {
      auto first = level.begin() + static_cast<long>(s);
      auto last = level.begin() + static_cast<long>(std::min(n, s + per_slice));
      std::sort(first, last, [&](int a, int b) { return cy(nodes_[a].box) < cy(nodes_[b].box); });
      for (auto it = first; it < last; it += std::min<long>(fanout_, last - it)) {
        Node p;
        p.box = nodes_[*it].box;
        for (auto c = it; c < std::min(last, it + fanout_); ++c) {
          p.children.push_back(*c);
          p.box.expand(nodes_[*c].box);
        }
        nodes_.push_back(std::move(p));
        parents.push_back(static_cast<int>(nodes_.size()) - 1);
      }
    }
    return parents;
  }

  int fanout_ = 8;
  int root_ = -1;
  std::vector<Node> nodes_;
};

// Partition rectangles in world coordinates, indexed by an R-tree.
inline PackedRTree partition_rtree(const AGrid& g, int fanout = 8) {
  std::vector<std::pair<PackedRTree::Box, int>> items;
  for (auto pid : g.pm().pids()) {
    const CellRect& c = g.pm().at(pid);
    Rect w = g.geometry().cell_rect_world(c);
    // Shrink the far edges slightly so touching partitions do not both claim a shared boundary.
    double ex = w.width() * 1e-9, ey = w.height() * 1e-9;
    items.push_back({{w.xmin, w.ymin, w.xmax - ex, w.ymax - ey}, pid});
  }
  return PackedRTree(std::move(items), fanout);
}

// Grid-file style routing: every cell of the range is looked up in the owner table.
inline std::vector<PartitionId> grid_scan_route(const AGrid& g, const CellRect& r, std::int64_t* cells = nullptr) {
  std::vector<PartitionId> out;
  for (int y = r.ymin; y <= r.ymax; ++y)
    for (int x = r.xmin; x <= r.xmax; ++x) out.push_back(g.owner({x, y}));
  if (cells) *cells += r.count();
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace skystream
