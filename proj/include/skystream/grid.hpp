#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>

#include "error.hpp"
#include "model.hpp"

namespace skystream {

struct CellCoord {
  int x = 0;
  int y = 0;
  friend bool operator==(const CellCoord&, const CellCoord&) = default;
};

// Rectangle of cells, inclusive on both corners.
struct CellRect {
  int xmin = 0;
  int ymin = 0;
  int xmax = -1;
  int ymax = -1;

  int width() const { return xmax - xmin + 1; }
  int height() const { return ymax - ymin + 1; }
  std::int64_t count() const { return static_cast<std::int64_t>(width()) * height(); }
  bool empty() const { return xmax < xmin || ymax < ymin; }

  bool contains(CellCoord c) const { return xmin <= c.x && c.x <= xmax && ymin <= c.y && c.y <= ymax; }
  bool contains(const CellRect& o) const {
    return xmin <= o.xmin && o.xmax <= xmax && ymin <= o.ymin && o.ymax <= ymax;
  }
  bool intersects(const CellRect& o) const {
    return xmin <= o.xmax && o.xmin <= xmax && ymin <= o.ymax && o.ymin <= ymax;
  }
  std::optional<CellRect> intersection(const CellRect& o) const {
    CellRect r{std::max(xmin, o.xmin), std::max(ymin, o.ymin), std::min(xmax, o.xmax),
               std::min(ymax, o.ymax)};
    if (r.empty()) return std::nullopt;
    return r;
  }

  // Union when the two rectangles are disjoint and together form a rectangle.
  std::optional<CellRect> rect_union(const CellRect& o) const {
    if (intersects(o)) return std::nullopt;
    if (xmin == o.xmin && xmax == o.xmax && (ymax + 1 == o.ymin || o.ymax + 1 == ymin))
      return CellRect{xmin, std::min(ymin, o.ymin), xmax, std::max(ymax, o.ymax)};
    if (ymin == o.ymin && ymax == o.ymax && (xmax + 1 == o.xmin || o.xmax + 1 == xmin))
      return CellRect{std::min(xmin, o.xmin), ymin, std::max(xmax, o.xmax), ymax};
    return std::nullopt;
  }

  CellCoord top_left() const { return {xmin, ymax}; }

  friend bool operator==(const CellRect&, const CellRect&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const CellRect& r) {
  return os << '[' << r.xmin << ',' << r.ymin << ".." << r.xmax << ',' << r.ymax << ']';
}

inline std::ostream& operator<<(std::ostream& os, const CellCoord& c) {
  return os << '(' << c.x << ',' << c.y << ')';
}

// Maps world coordinates onto an n x m cell lattice.
struct GridGeometry {
  int n = 1;
  int m = 1;
  Rect world = kUnitWorld;

  GridGeometry() = default;
  GridGeometry(int n_, int m_, Rect w = kUnitWorld) : n(n_), m(m_), world(w) {
    if (n < 1 || m < 1) throw Error(ErrorCode::InvalidArgument, "grid dimensions must be positive");
    if (!world.valid()) throw Error(ErrorCode::InvalidArgument, "world rectangle must have positive area");
  }

  CellRect full() const { return {0, 0, n - 1, m - 1}; }
  std::int64_t cell_count() const { return static_cast<std::int64_t>(n) * m; }
  std::int64_t key(CellCoord c) const { return static_cast<std::int64_t>(c.y) * n + c.x; }
  CellCoord coord(std::int64_t key) const {
    return {static_cast<int>(key % n), static_cast<int>(key / n)};
  }

  int col_of(double x) const {
    return static_cast<int>(std::floor(n * ((x - world.xmin) / world.width())));
  }
  int row_of(double y) const {
    return static_cast<int>(std::floor(m * ((y - world.ymin) / world.height())));
  }

  std::optional<CellCoord> try_cell_of(const Point& p) const {
    if (!inside(p, world)) return std::nullopt;
    CellCoord c{std::clamp(col_of(p.x), 0, n - 1), std::clamp(row_of(p.y), 0, m - 1)};
    return c;
  }

  CellCoord cell_of(const Point& p) const {
    auto c = try_cell_of(p);
    if (!c) throw Error(ErrorCode::OutOfWorld, "point outside world");
    return *c;
  }

  // Cells overlapped by a half-open rectangle, after clipping to the world. The upper index is
  // taken from the largest representable coordinate below the max edge so that every point
  // accepted by inside() lands in a returned cell.
  std::optional<CellRect> try_cell_range(const Rect& r) const {
    Rect c = r.intersection(world);
    if (!c.valid()) return std::nullopt;
    double hx = std::nextafter(c.xmax, c.xmin);
    double hy = std::nextafter(c.ymax, c.ymin);
    CellRect out{std::clamp(col_of(c.xmin), 0, n - 1), std::clamp(row_of(c.ymin), 0, m - 1),
                 std::clamp(col_of(hx), 0, n - 1), std::clamp(row_of(hy), 0, m - 1)};
    return out;
  }

  CellRect cell_range(const Rect& r) const {
    auto c = try_cell_range(r);
    if (!c) throw Error(ErrorCode::EmptyIntersection, "range does not intersect world");
    return *c;
  }

  Rect cell_rect_world(const CellRect& c) const {
    double cw = world.width() / n, ch = world.height() / m;
    return {world.xmin + c.xmin * cw, world.ymin + c.ymin * ch, world.xmin + (c.xmax + 1) * cw,
            world.ymin + (c.ymax + 1) * ch};
  }
};

}  // namespace skystream
