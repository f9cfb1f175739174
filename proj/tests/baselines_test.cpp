#include <gtest/gtest.h>

#include "support.hpp"

using namespace skystream;
using namespace skystream::testing;

TEST(PackedRTree, PointQueriesFindTheOwner) {
  Rng rng(1);
  AGrid g(GridGeometry(64, 64), random_partitioning(64, 64, 40, rng));
  PackedRTree t = partition_rtree(g);
  EXPECT_GE(t.height(), 2);
  for (int i = 0; i < 3000; ++i) {
    Point p{uniform01(rng), uniform01(rng)};
    std::int64_t visited = 0;
    auto hits = t.query_point(p.x, p.y, &visited);
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(hits[0], g.route_point(p));
    EXPECT_GT(visited, 0);
  }
}

TEST(PackedRTree, RangeQueriesAgreeWithNeighborSearch) {
  Rng rng(2);
  AGrid g(GridGeometry(64, 64), random_partitioning(64, 64, 30, rng));
  PackedRTree t = partition_rtree(g);
  for (int i = 0; i < 1000; ++i) {
    CellRect cr = random_cell_range(64, 64, rng);
    Rect w = g.geometry().cell_rect_world(cr);
    // shrink inward so the closed query box stays inside the cell range
    double e = 1e-7;
    auto hits = t.query_range({w.xmin + e, w.ymin + e, w.xmax - e, w.ymax - e});
    std::sort(hits.begin(), hits.end());
    EXPECT_EQ(std::vector<PartitionId>(hits.begin(), hits.end()), brute_force_owners(g.pm(), cr));
  }
}

TEST(GridScan, CountsEveryCell) {
  Rng rng(3);
  AGrid g(GridGeometry(32, 32), random_partitioning(32, 32, 12, rng));
  for (int i = 0; i < 300; ++i) {
    CellRect cr = random_cell_range(32, 32, rng);
    std::int64_t cells = 0;
    EXPECT_EQ(grid_scan_route(g, cr, &cells), brute_force_owners(g.pm(), cr));
    EXPECT_EQ(cells, cr.count());
  }
}

TEST(Bench, AGridPointRoutingIsConstant) {
  BenchConfig cfg;
  cfg.grid = 200;
  cfg.partitions = {4, 64};
  cfg.fractions = {0.01};
  cfg.probes = 200;
  auto rows = run_bench(cfg);
  for (const auto& r : rows)
    if (r.structure == "agrid" && r.kind == "point") {
      EXPECT_EQ(r.max_ops, 1);
    }
  std::ostringstream os;
  write_bench(os, rows);
  EXPECT_NE(os.str().find("partitions,structure"), std::string::npos);
}
