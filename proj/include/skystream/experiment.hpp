#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "agrid.hpp"
#include "balancer.hpp"
#include "baselines.hpp"
#include "evaluator.hpp"
#include "random.hpp"
#include "runtime.hpp"
#include "workload.hpp"

namespace skystream {

struct RunConfig {
  int grid = 1000;
  int evaluators = 4;
  int routers = 1;
  double beta = 1.0;
  std::int64_t stats_cadence = 10000;
  bool adaptive = false;
  RoutingMode mode = RoutingMode::AGrid;
  ContainsRule contains = ContainsRule::FilterKeyword;
  SummarySync sync = SummarySync::Forward;
  SchedulePolicy policy = SchedulePolicy::RoundRobin;
  WorkloadSpec workload;
  std::optional<std::string> trace;   // replaces the generated workload
  std::optional<std::string> tweets;  // replaces the generated objects
  std::size_t sample_objects = 20000;
  std::size_t sample_queries = 5000;
  std::size_t cleaning_divisor = 32;
  bool cleaning = true;
  bool keep_results = false;
  std::uint64_t seed = 1;

  void validate() const {
    if (grid < 1) throw Error(ErrorCode::InvalidArgument, "grid must be positive");
    if (evaluators < 1 || routers < 1) throw Error(ErrorCode::InvalidArgument, "need at least one evaluator and router");
    if (beta < 0) throw Error(ErrorCode::InvalidArgument, "beta must be non-negative");
    workload.validate();
  }
};

struct RunOutput {
  RuntimeTotals totals;
  double final_alpha = 0;
  std::vector<MetricsRow> rows;
  std::vector<DecisionRecord> decisions;
  std::vector<MatchResult> results;
  PartitionsMap initial_pm;
  PartitionsMap final_pm;
};

// Cell costs measured by one evaluator over the whole grid. Every object also counts once for
// its own cell so that regions with traffic but no candidates are still weighed.
inline CostGrid sample_cost_grid(const GridGeometry& geom, const std::vector<ContinuousQuery>& queries,
                                 const std::vector<SpatialKeywordObject>& objects, const SummaryPolicy& policy = {}) {
  EvaluatorState global(0, geom, geom.full(), policy);
  for (const auto& q : queries)
    if (geom.try_cell_range(q.mbr)) global.register_query(q);
  CostGrid g(geom.n, geom.m);
  std::vector<MatchResult> sink;
  for (const auto& o : objects) {
    auto c = geom.try_cell_of(o.loc);
    if (!c) continue;
    sink.clear();
    global.process_object(o, sink);
    ++g.at(c->x, c->y);
  }
  for (const auto& [key, cell] : global.cells()) {
    CellCoord c = geom.coord(key);
    g.at(c.x, c.y) += cell.cost;
  }
  return g;
}

inline RunOutput run_experiment(const RunConfig& cfg) {
  cfg.validate();
  GridGeometry geom(cfg.grid, cfg.grid);
  std::vector<TraceItem> trace;
  std::vector<ContinuousQuery> sample_q;
  std::vector<SpatialKeywordObject> sample_o;
  auto spec = cfg.workload;
  if (cfg.trace) {
    std::ifstream in(*cfg.trace);
    if (!in) throw Error(ErrorCode::Io, "cannot open trace " + *cfg.trace);
    trace = read_trace(in);
    for (const auto& item : trace) {
      if (const auto* q = std::get_if<ContinuousQuery>(&item)) {
        if (sample_q.size() < cfg.sample_queries) sample_q.push_back(*q);
      } else if (sample_o.size() < cfg.sample_objects) {
        sample_o.push_back(std::get<SpatialKeywordObject>(item));
      }
    }
  } else if (cfg.tweets) {
    WorkloadSpec s = spec;
    s.object_count = 0;
    WorkloadGenerator qg(s);
    auto objects = ingest_tweets(*cfg.tweets, spec.object_count);
    for (auto& q : qg.queries()) {
      if (sample_q.size() < cfg.sample_queries) sample_q.push_back(q);
      trace.emplace_back(std::move(q));
    }
    for (auto& o : objects) {
      if (sample_o.size() < cfg.sample_objects) sample_o.push_back(o);
      trace.emplace_back(std::move(o));
    }
  } else {
    // The initialization sample follows the untransformed distribution.
    WorkloadSpec s = spec;
    s.scale_factor = 1.0;
    s.seed = spec.seed + 7919;
    s.object_count = std::min<std::uint64_t>(spec.object_count, cfg.sample_objects);
    s.query_count = std::min<std::uint64_t>(spec.query_count, cfg.sample_queries);
    WorkloadGenerator sg(s);
    sample_q = sg.queries();
    sample_o = sg.objects();
  }

  SummaryPolicy policy;
  policy.contains = cfg.contains;
  if (cfg.contains == ContainsRule::RarestKeyword) {
    Vocabulary v(spec.vocab_size, spec.zipf_s);
    policy.frequencies = std::make_shared<const std::unordered_map<std::string, std::uint64_t>>(v.frequency_table());
  }

  PartitionsMap pm;
  if (cfg.mode == RoutingMode::AGrid) {
    pm = initial_partitioning(sample_cost_grid(geom, sample_q, sample_o, policy), cfg.evaluators);
  } else if (cfg.mode == RoutingMode::Uniform) {
    pm = uniform_partitioning(geom.n, geom.m, cfg.evaluators);
  } else {
    pm = AGrid::single_partition(geom.n, geom.m);
  }

  RuntimeConfig rc;
  rc.geometry = geom;
  rc.evaluators = cfg.evaluators;
  rc.routers = cfg.routers;
  rc.beta = cfg.beta;
  rc.stats_cadence = cfg.stats_cadence;
  rc.adaptive = cfg.adaptive && cfg.mode == RoutingMode::AGrid;
  rc.mode = cfg.mode;
  rc.summary = policy;
  rc.sync = cfg.sync;
  rc.policy = cfg.policy;
  rc.seed = cfg.seed;
  rc.cleaning = cfg.cleaning;
  rc.cleaning_divisor = cfg.cleaning_divisor;
  rc.keep_results = cfg.keep_results;

  Simulator sim(rc, pm);
  if (cfg.trace || cfg.tweets) {
    sim.set_trace(std::move(trace));
  } else {
    auto gen = std::make_shared<WorkloadGenerator>(spec);
    sim.set_source([gen]() -> std::optional<TraceItem> {
      if (auto q = gen->next_query()) return TraceItem{std::move(*q)};
      if (auto o = gen->next_object()) return TraceItem{std::move(*o)};
      return std::nullopt;
    });
  }
  sim.run();
  sim.record_metrics();

  RunOutput out;
  out.totals = sim.totals();
  out.final_alpha = sim.alpha();
  out.rows = sim.metric_rows();
  out.decisions = sim.decisions();
  out.results = sim.take_results();
  out.initial_pm = pm;
  out.final_pm = sim.partitions();
  return out;
}

// ---- routing benchmark --------------------------------------------------------------------------

struct BenchRow {
  int partitions = 0;
  std::string structure;  // agrid | grid | rtree
  std::string kind;       // point | range
  double fraction = 0;    // range side as a fraction of the world side; 0 for points
  double mean_ops = 0;
  std::int64_t max_ops = 0;
};

struct BenchConfig {
  int grid = 1000;
  std::vector<int> partitions{16, 64, 256, 1024};
  std::vector<double> fractions{0.0005, 0.001, 0.005, 0.015};
  int probes = 2000;
  std::uint64_t seed = 1;
};

// Partitioning used by the benchmark: recursive decomposition of a random cost field.
inline PartitionsMap bench_partitioning(int grid, int parts, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::int64_t> cost(static_cast<std::size_t>(grid) * grid);
  for (auto& c : cost) c = 1 + static_cast<std::int64_t>(uniform_index(rng, 16));
  return initial_partitioning(CostGrid(grid, grid, std::move(cost)), parts);
}

inline std::vector<BenchRow> run_bench(const BenchConfig& cfg) {
  std::vector<BenchRow> rows;
  GridGeometry geom(cfg.grid, cfg.grid);
  for (int parts : cfg.partitions) {
    AGrid g(geom, bench_partitioning(cfg.grid, parts, cfg.seed + static_cast<std::uint64_t>(parts)));
    PackedRTree tree = partition_rtree(g);
    Rng rng(cfg.seed * 31 + static_cast<std::uint64_t>(parts));
    auto add = [&](const char* structure, const char* kind, double fraction, const std::vector<std::int64_t>& ops) {
      BenchRow r{parts, structure, kind, fraction, 0, 0};
      for (auto o : ops) {
        r.mean_ops += static_cast<double>(o);
        r.max_ops = std::max(r.max_ops, o);
      }
      r.mean_ops /= static_cast<double>(std::max<std::size_t>(1, ops.size()));
      rows.push_back(r);
    };
    std::vector<std::int64_t> a_ops, g_ops, t_ops;
    for (int i = 0; i < cfg.probes; ++i) {
      Point p{uniform01(rng), uniform01(rng)};
      g.route_point(p);
      a_ops.push_back(1);  // one owner-table lookup
      g_ops.push_back(1);
      std::int64_t visited = 0;
      tree.query_point(p.x, p.y, &visited);
      t_ops.push_back(visited);
    }
    add("agrid", "point", 0, a_ops);
    add("grid", "point", 0, g_ops);
    add("rtree", "point", 0, t_ops);
    for (double f : cfg.fractions) {
      a_ops.clear(), g_ops.clear(), t_ops.clear();
      for (int i = 0; i < cfg.probes; ++i) {
        Point c{uniform01(rng), uniform01(rng)};
        Rect r = square_around(c, f);
        if (!r.valid()) continue;
        CellRect cr = geom.cell_range(r);
        SearchStats st;
        g.neighbor_search(cr, &st);
        a_ops.push_back(st.pops);
        std::int64_t cells = 0;
        grid_scan_route(g, cr, &cells);
        g_ops.push_back(cells);
        std::int64_t visited = 0;
        tree.query_range({r.xmin, r.ymin, r.xmax, r.ymax}, &visited);
        t_ops.push_back(visited);
      }
      add("agrid", "range", f, a_ops);
      add("grid", "range", f, g_ops);
      add("rtree", "range", f, t_ops);
    }
  }
  return rows;
}

inline void write_bench(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << "partitions,structure,kind,fraction,meanOps,maxOps\n";
  for (const auto& r : rows)
    os << r.partitions << ',' << r.structure << ',' << r.kind << ',' << r.fraction << ',' << r.mean_ops << ','
       << r.max_ops << '\n';
}

}  // namespace skystream
