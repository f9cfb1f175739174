#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "skystream/skystream.hpp"

using namespace skystream;

namespace {

struct WorkloadFlags {
  std::string kind = "normal";
  std::uint64_t objects = 100000;
  std::uint64_t queries = 10000;
  double percentile = 1.0;
  double contains_fraction = 0.0;
  double sf = 1.0;
  double query_side = 0.001;
  std::int64_t lifetime = 0;

  void add(CLI::App* app) {
    app->add_option("--workload", kind, "normal | skewed | selective")->check(CLI::IsMember({"normal", "skewed", "selective"}));
    app->add_option("--objects", objects, "objects to stream");
    app->add_option("--queries", queries, "queries to register before streaming");
    app->add_option("--percentile", percentile, "keyword selectivity percentile for the selective workload")
        ->check(CLI::Range(0.0, 1.0));
    app->add_option("--contains-fraction", contains_fraction, "share of CONTAINS queries")->check(CLI::Range(0.0, 1.0));
    app->add_option("--sf", sf, "coordinate scale factor applied after initialization")->check(CLI::PositiveNumber);
    app->add_option("--query-side", query_side, "query side length as a fraction of the world");
    app->add_option("--lifetime", lifetime, "query lifetime in object timestamps, 0 for never");
  }

  WorkloadSpec spec(std::uint64_t seed) const {
    WorkloadSpec s;
    s.kind = parse_workload_kind(kind);
    s.object_count = objects;
    s.query_count = queries;
    s.selectivity_percentile = percentile;
    s.contains_fraction = contains_fraction;
    s.scale_factor = sf;
    s.query_side = query_side;
    s.query_lifetime = lifetime;
    s.seed = seed;
    return s;
  }
};

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + p.string());
  return os;
}

int cmd_run(const RunConfig& cfg, const std::string& out_dir, bool write_matches) {
  auto out = run_experiment(cfg);
  std::filesystem::create_directories(out_dir);
  {
    auto os = open_out(std::filesystem::path(out_dir) / "metrics.csv");
    write_metrics_header(os);
    for (const auto& r : out.rows) write_metrics_row(os, r);
  }
  {
    auto os = open_out(std::filesystem::path(out_dir) / "decisions.log");
    for (const auto& d : out.decisions) write_decision(os, d);
  }
  if (write_matches) {
    auto os = open_out(std::filesystem::path(out_dir) / "results.txt");
    write_results(os, out.results);
  }
  const auto& t = out.totals;
  std::cout << "mode " << to_string(cfg.mode) << (cfg.adaptive ? " adaptive" : "") << '\n'
            << "ticks " << t.ticks << " messages " << t.messages << '\n'
            << "objects " << t.objects_in << " queries " << t.queries_in << '\n'
            << "forwarded " << t.forwarded_objects << " dropped " << t.dropped_by_summary << " outOfWorld "
            << t.out_of_world << '\n'
            << "candidates " << t.candidates << " matches " << t.matches << '\n'
            << "rebalances " << t.rebalances << " finalAlpha " << out.final_alpha << '\n';
  if (t.protocol_violations > 0) {
    std::cerr << "protocol violations: " << t.protocol_violations << '\n';
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatial-keyword stream routing simulator"};
  app.require_subcommand(1);

  RunConfig run_cfg;
  WorkloadFlags wf;
  std::string mode = "agrid", contains = "filter", sync = "forward", policy = "round-robin";
  std::string out_dir = "out";
  std::string trace, tweets;
  bool write_matches = false;
  auto* run = app.add_subcommand("run", "run a workload or trace through the simulator");
  run->add_option("--grid", run_cfg.grid, "cells per axis");
  run->add_option("--evaluators", run_cfg.evaluators, "partition owners (one auxiliary is added)");
  run->add_option("--routers", run_cfg.routers, "routing units");
  run->add_option("--beta", run_cfg.beta, "weight of cell-transfer overhead");
  run->add_option("--stats-cadence", run_cfg.stats_cadence, "ticks between statistics rounds");
  run->add_option("--mode", mode, "agrid | uniform | textual | broadcast-baseline")
      ->check(CLI::IsMember({"agrid", "uniform", "textual", "broadcast-baseline"}));
  run->add_flag("--adaptive", run_cfg.adaptive, "rebalance at runtime");
  run->add_option("--contains-rule", contains, "filter | rarest | all")->check(CLI::IsMember({"filter", "rarest", "all"}));
  run->add_option("--sync", sync, "forward | broadcast")->check(CLI::IsMember({"forward", "broadcast"}));
  run->add_option("--policy", policy, "round-robin | random")->check(CLI::IsMember({"round-robin", "random"}));
  run->add_option("--trace", trace, "trace file instead of a generated workload");
  run->add_option("--tweets", tweets, "tweet CSV (id,lat,lon,text) supplying the objects")->excludes("--trace");
  run->add_option("--seed", run_cfg.seed, "random seed");
  run->add_option("--out", out_dir, "output directory");
  run->add_flag("--results", write_matches, "write results.txt");
  wf.add(run);

  BenchConfig bench_cfg;
  std::string bench_out;
  auto* bench = app.add_subcommand("bench", "count routing operations for points and ranges");
  bench->add_option("--grid", bench_cfg.grid, "cells per axis");
  bench->add_option("--probes", bench_cfg.probes, "probes per configuration");
  bench->add_option("--seed", bench_cfg.seed, "random seed");
  bench->add_option("--out", bench_out, "CSV output path (stdout when omitted)");

  GranularityModel model;
  auto* advise = app.add_subcommand("advise", "recommend the grid cell size");
  advise->add_option("--lambda-d", model.lambda_d, "object arrival rate");
  advise->add_option("--lambda-q", model.lambda_q, "query arrival rate");
  advise->add_option("--k", model.k, "registered queries");
  advise->add_option("--rq", model.r_q, "mean query side length");
  advise->add_option("--overlap", model.overlap, "cells touched by a sub-cell query");

  auto* part = app.add_subcommand("partition", "build or inspect partitionings");
  part->require_subcommand(1);
  int part_grid = 1000, part_evaluators = 4;
  std::uint64_t part_seed = 1;
  std::string dump_path, load_path;
  WorkloadFlags pwf;
  auto* dump = part->add_subcommand("dump", "write the initial partitioning for a workload sample");
  dump->add_option("--grid", part_grid, "cells per axis");
  dump->add_option("--evaluators", part_evaluators, "partitions");
  dump->add_option("--seed", part_seed, "random seed");
  dump->add_option("--out", dump_path, "snapshot path")->required();
  pwf.add(dump);
  auto* load = part->add_subcommand("load", "validate a snapshot and print it");
  load->add_option("path", load_path, "snapshot path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      run_cfg.mode = parse_routing_mode(mode);
      run_cfg.contains = contains == "filter" ? ContainsRule::FilterKeyword
                         : contains == "rarest" ? ContainsRule::RarestKeyword
                                                : ContainsRule::AllKeywords;
      run_cfg.sync = sync == "forward" ? SummarySync::Forward : SummarySync::Broadcast;
      run_cfg.policy = policy == "random" ? SchedulePolicy::Random : SchedulePolicy::RoundRobin;
      run_cfg.workload = wf.spec(run_cfg.seed);
      if (!trace.empty()) run_cfg.trace = trace;
      if (!tweets.empty()) run_cfg.tweets = tweets;
      run_cfg.keep_results = write_matches || !trace.empty();
      return cmd_run(run_cfg, out_dir, run_cfg.keep_results);
    }
    if (*bench) {
      auto rows = run_bench(bench_cfg);
      if (bench_out.empty()) {
        write_bench(std::cout, rows);
      } else {
        auto os = open_out(bench_out);
        write_bench(os, rows);
      }
      return 0;
    }
    if (*advise) {
      auto a = advise_granularity(model);
      std::cout << "r_c " << a.r_c << "\ncellsPerAxis " << a.cells_per_axis << "\nr_c,demand\n";
      for (const auto& [rc, d] : a.sweep) std::cout << rc << ',' << d << '\n';
      return 0;
    }
    if (*dump) {
      GridGeometry geom(part_grid, part_grid);
      WorkloadSpec s = pwf.spec(part_seed);
      s.object_count = std::min<std::uint64_t>(s.object_count, 20000);
      s.query_count = std::min<std::uint64_t>(s.query_count, 5000);
      WorkloadGenerator gen(s);
      auto qs = gen.queries();
      auto os_ = gen.objects();
      AGrid g(geom, initial_partitioning(sample_cost_grid(geom, qs, os_), part_evaluators));
      auto os = open_out(dump_path);
      write_snapshot(os, g);
      return 0;
    }
    if (*load) {
      std::ifstream in(load_path);
      if (!in) throw Error(ErrorCode::Io, "cannot open " + load_path);
      AGrid g = read_snapshot(in);
      std::cout << "grid " << g.n() << 'x' << g.m() << " generation " << g.generation() << " partitions "
                << g.pm().size() << '\n';
      write_snapshot(std::cout, g);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
