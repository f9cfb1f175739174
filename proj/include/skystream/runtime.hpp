#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "agrid.hpp"
#include "balancer.hpp"
#include "error.hpp"
#include "evaluator.hpp"
#include "log.hpp"
#include "model.hpp"
#include "random.hpp"
#include "routing.hpp"

namespace skystream {

enum class RoutingMode {
  AGrid,      // adaptive grid partitioning with textual summaries
  Uniform,    // equal-size partitions, otherwise as AGrid
  Textual,    // keyword-hash routing; objects replicated per keyword
  Broadcast,  // every query to every evaluator, objects to one, no index
};

inline const char* to_string(RoutingMode m) {
  switch (m) {
    case RoutingMode::AGrid: return "agrid";
    case RoutingMode::Uniform: return "uniform";
    case RoutingMode::Textual: return "textual";
    case RoutingMode::Broadcast: return "broadcast-baseline";
  }
  return "?";
}

inline RoutingMode parse_routing_mode(const std::string& s) {
  if (s == "agrid") return RoutingMode::AGrid;
  if (s == "uniform") return RoutingMode::Uniform;
  if (s == "textual") return RoutingMode::Textual;
  if (s == "broadcast-baseline" || s == "broadcast") return RoutingMode::Broadcast;
  throw Error(ErrorCode::InvalidArgument, "unknown routing mode: " + s);
}

// How routers tell each other about summary additions.
enum class SummarySync {
  Forward,    // only keywords that are new somewhere, when there are any
  Broadcast,  // every query in full to every other router
};

enum class SchedulePolicy { RoundRobin, Random };

enum class TransientPhase { Normal, CellTransfer, RoutingUpdate };

using TraceItem = std::variant<SpatialKeywordObject, ContinuousQuery>;

// ---- scheduler ----------------------------------------------------------------------------------

// FIFO channels between numbered workers plus one external producer. Round-robin visits non-empty
// channels (and the producer, which sits after every channel) in a fixed cyclic order; random picks
// uniformly among them.
template <typename Body>
class Scheduler {
 public:
  struct Envelope {
    int from = 0;
    int to = 0;
    std::uint64_t seq = 0;
    Body body;
  };

  enum class Pick { None, External, Message };

  Scheduler(int workers, SchedulePolicy policy, std::uint64_t seed)
      : workers_(workers), policy_(policy), rng_(seed),
        channels_(static_cast<std::size_t>(workers) * workers), pos_(channels_.size(), -1) {}

  void push(int from, int to, Body body) {
    if (from < 0 || to < 0 || from >= workers_ || to >= workers_)
      throw Error(ErrorCode::InvalidArgument, "bad channel endpoint");
    long id = static_cast<long>(from) * workers_ + to;
    Channel& c = channels_[id];
    c.queue.push_back(Envelope{from, to, ++c.next_seq, std::move(body)});
    if (c.queue.size() == 1) {
      nonempty_.insert(id);
      pos_[id] = static_cast<long>(ready_.size());
      ready_.push_back(id);
    }
    ++pending_;
    peak_depth_ = std::max(peak_depth_, c.queue.size());
  }

  Pick next(bool external_ready, Envelope& out) {
    long id = -1;
    long external = static_cast<long>(channels_.size());
    if (policy_ == SchedulePolicy::RoundRobin) {
      auto after = [&](long p) -> long {
        auto it = nonempty_.upper_bound(p);
        if (it != nonempty_.end()) return *it;
        return external_ready && external > p ? external : -1;
      };
      id = after(cursor_);
      if (id < 0) id = after(-1);
      if (id < 0) return Pick::None;
      cursor_ = id;
    } else {
      std::uint64_t n = ready_.size() + (external_ready ? 1 : 0);
      if (n == 0) return Pick::None;
      std::uint64_t k = uniform_index(rng_, n);
      id = k == ready_.size() ? external : ready_[k];
    }
    if (id == external) return Pick::External;
    Channel& c = channels_[id];
    out = std::move(c.queue.front());
    c.queue.pop_front();
    if (out.seq <= c.last_delivered) throw Error(ErrorCode::ProtocolViolation, "channel reordered");
    c.last_delivered = out.seq;
    --pending_;
    if (c.queue.empty()) {
      nonempty_.erase(id);
      long p = pos_[id];
      ready_[p] = ready_.back();
      pos_[ready_[p]] = p;
      ready_.pop_back();
      pos_[id] = -1;
    }
    return Pick::Message;
  }

  std::size_t pending() const { return pending_; }
  std::size_t peak_depth() const { return peak_depth_; }
  int workers() const { return workers_; }

 private:
  struct Channel {
    std::deque<Envelope> queue;
    std::uint64_t next_seq = 0;
    std::uint64_t last_delivered = 0;
  };

  int workers_;
  SchedulePolicy policy_;
  Rng rng_;
  std::vector<Channel> channels_;
  std::set<long> nonempty_;
  std::vector<long> ready_;
  std::vector<long> pos_;
  long cursor_ = -1;
  std::size_t pending_ = 0;
  std::size_t peak_depth_ = 0;
};

// ---- messages -----------------------------------------------------------------------------------

struct Transfer {
  PartitionId src = kNoPartition;
  PartitionId dst = kNoPartition;
  CellRect region;
};

namespace msg {

struct IngestObject {
  SpatialKeywordObject o;
  std::uint64_t pos = 0;  // position in the input stream
};
struct IngestQuery {
  QueryPtr q;
};
struct Watermark {
  Timestamp ts = 0;
  int router = -1;  // relaying router, -1 when sent by the source
};
struct RegistrationPlan {
  QueryId qid = 0;
  int expected = 0;
};
struct Ack {
  QueryId qid = 0;
};
struct KeywordForward {
  QueryId qid = 0;
  int origin = 0;
  Generation stamp = 0;
  KeywordSet words;
  std::vector<PartitionId> targets;
};
struct Object {
  SpatialKeywordObject o;
  std::uint64_t pos = 0;
  Generation gen = 0;
};
struct Query {
  QueryPtr q;
  int origin = -1;  // routing unit that sent it; -1 for evaluator-to-evaluator copies
  std::uint64_t seq = 0;
  Generation gen = 0;
  bool ack = true;
};
struct CollectStats {};
struct StatsReport {
  PartitionId pid = kNoPartition;
  Generation gen = 0;
  PartitionStats stats;
};
struct ShiftQuery {
  std::uint64_t op = 0;
  double target = 0;
  Side side = Side::Left;
};
struct ShiftReply {
  std::uint64_t op = 0;
  std::optional<CellRect> strip;
};
struct RebalanceStart {
  std::uint64_t op = 0;
  Generation from_gen = 0;
  std::vector<Transfer> transfers;
};
struct TransferCommand {
  std::uint64_t op = 0;
  CellRect region;
  PartitionId dst = kNoPartition;
  Generation to_gen = 0;
};
struct ExpectTransfer {
  std::uint64_t op = 0;
  CellRect region;
  PartitionId src = kNoPartition;
  Generation to_gen = 0;
};
struct ContinueTransfer {
  std::uint64_t op = 0;
};
struct CellBatch {
  std::uint64_t op = 0;
  PartitionId src = kNoPartition;
  Generation to_gen = 0;
  CellTransferBatch batch;
};
struct Phase1Done {
  std::uint64_t op = 0;
  PartitionId src = kNoPartition;
};
struct PartitionUpdate {
  std::uint64_t op = 0;
  Generation gen = 0;
  PartitionsMap pm;
  std::vector<PartitionId> sources;
};
struct GenerationAck {
  std::uint64_t op = 0;
  int router = 0;
};
struct TransferDone {
  std::uint64_t op = 0;
  PartitionId src = kNoPartition;
};
struct DestinationReady {
  std::uint64_t op = 0;
  PartitionId dst = kNoPartition;
};
struct SummaryRefresh {
  PartitionId pid = kNoPartition;
  std::uint64_t id = 0;
  KeywordSet words;
  std::vector<std::uint64_t> seen;  // highest query sequence indexed, per routing unit
  Generation gen = 0;
};
struct RefreshRelay {
  SummaryRefresh refresh;
};
struct RefreshConfirm {
  PartitionId pid = kNoPartition;
  std::uint64_t id = 0;
  int router = 0;
  TextualSummary::Stamped keep;
};
struct RefreshApplied {
  PartitionId pid = kNoPartition;
  std::uint64_t id = 0;
};
struct ForcedOp {
  RebalanceOp op;
};

}  // namespace msg

using Payload = std::variant<msg::IngestObject, msg::IngestQuery, msg::Watermark, msg::RegistrationPlan, msg::Ack,
                             msg::KeywordForward, msg::Object, msg::Query, msg::CollectStats, msg::StatsReport,
                             msg::ShiftQuery, msg::ShiftReply, msg::RebalanceStart, msg::TransferCommand,
                             msg::ExpectTransfer, msg::ContinueTransfer, msg::CellBatch, msg::Phase1Done,
                             msg::PartitionUpdate, msg::GenerationAck, msg::TransferDone, msg::DestinationReady,
                             msg::SummaryRefresh, msg::RefreshRelay, msg::RefreshConfirm, msg::RefreshApplied,
                             msg::ForcedOp>;

// Approximate wire sizes used to compare summary synchronisation strategies.
inline std::size_t words_bytes(const KeywordSet& w) {
  std::size_t n = 0;
  for (const auto& s : w) n += s.size() + 1;
  return n;
}
inline std::size_t forward_bytes(const KeywordSet& words, std::size_t targets) {
  return 16 + 8 + words_bytes(words) + 4 * targets;
}
inline std::size_t broadcast_bytes(const ContinuousQuery& q) { return 16 + 8 + 32 + 1 + 8 + words_bytes(q.text); }

// ---- configuration and reporting ----------------------------------------------------------------

struct RuntimeConfig {
  GridGeometry geometry{1000, 1000};
  int evaluators = 4;  // partition owners; one auxiliary evaluator is added
  int routers = 1;
  double beta = 1.0;
  std::int64_t stats_cadence = 10000;  // ticks between statistics rounds; 0 disables
  bool adaptive = false;
  RoutingMode mode = RoutingMode::AGrid;
  SummaryPolicy summary;
  SummarySync sync = SummarySync::Forward;
  SchedulePolicy policy = SchedulePolicy::RoundRobin;
  std::uint64_t seed = 1;
  bool cleaning = true;
  std::size_t cleaning_interval = 256;  // messages an evaluator handles between cleaning steps
  std::size_t cleaning_divisor = 32;    // cells per step = occupied cells / divisor, at least 1
  Timestamp watermark_interval = 1000;
  std::int64_t batch_cells = 1024;      // cell positions per transfer batch
  bool keep_results = true;
};

struct MetricsRow {
  std::int64_t tick = 0;
  double alpha = 0;
  std::int64_t total_cost = 0;
  std::int64_t forwarded_objects = 0;
  std::int64_t dropped_by_summary = 0;
  std::size_t peak_channel_depth = 0;
  std::int64_t rebalance_count = 0;
};

inline void write_metrics_header(std::ostream& os) {
  os << "tick,alpha,totalCost,forwardedObjects,droppedBySummary,peakChannelDepth,rebalanceCount\n";
}

inline void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  os << r.tick << ',' << r.alpha << ',' << r.total_cost << ',' << r.forwarded_objects << ','
     << r.dropped_by_summary << ',' << r.peak_channel_depth << ',' << r.rebalance_count << '\n';
}

struct DecisionRecord {
  std::int64_t tick = 0;
  RebalanceOp op;
  double alpha_before = 0;
  WorkloadSnapshot snapshot;
};

inline std::string op_pids(const RebalanceOp& op) {
  if (op.is_shift()) return std::to_string(op.from) + ";" + std::to_string(op.to);
  return std::to_string(op.from) + ";" + std::to_string(op.merge_keep) + ";" + std::to_string(op.merge_donor) + ";" +
         std::to_string(op.aux);
}

inline void write_decision(std::ostream& os, const DecisionRecord& d) {
  os << d.tick << ',' << to_string(d.op.kind) << ',' << op_pids(d.op) << ',' << d.op.cr << ',' << d.op.ct << ','
     << d.alpha_before << '\n';
}

struct RuntimeTotals {
  std::int64_t ticks = 0;
  std::int64_t messages = 0;
  std::int64_t objects_in = 0;
  std::int64_t queries_in = 0;
  std::int64_t forwarded_objects = 0;
  std::int64_t dropped_by_summary = 0;
  std::int64_t out_of_world = 0;
  std::int64_t rejected_queries = 0;
  std::int64_t query_messages = 0;
  std::int64_t keyword_forwards = 0;
  std::int64_t sync_bytes = 0;
  std::int64_t search_pops = 0;
  std::int64_t candidates = 0;
  std::int64_t matches = 0;
  std::int64_t forwarded_tuples = 0;
  std::int64_t protocol_violations = 0;
  std::int64_t rebalances = 0;
  std::int64_t abandoned_ops = 0;
  std::int64_t refreshes_applied = 0;
  std::int64_t refreshes_discarded = 0;
  std::size_t peak_channel_depth = 0;
};

// ---- simulator ----------------------------------------------------------------------------------

class Simulator {
 public:
  using Sched = Scheduler<Payload>;
  using Envelope = Sched::Envelope;

  struct OutgoingTransfer {
    std::uint64_t op = 0;
    CellRect region;
    PartitionId dst = kNoPartition;
    Generation to_gen = 0;
    std::int64_t cursor = 0;  // positions below the cursor are transmitted
    bool routing_update = false;
    int acks = 0;
  };

  struct IncomingTransfer {
    std::uint64_t op = 0;
    CellRect region;
    PartitionId src = kNoPartition;
    std::deque<std::pair<int, Payload>> held;  // routing-unit traffic for the region
  };

  struct EvaluatorWorker {
    EvaluatorState state;
    Generation known_gen = 0;
    PartitionsMap pm;
    std::optional<OutgoingTransfer> out;
    std::optional<IncomingTransfer> in;
    std::deque<std::pair<int, Payload>> future;  // traffic from a generation not yet announced here
    std::vector<std::uint64_t> seen;
    std::vector<Timestamp> watermarks;
    std::size_t since_clean = 0;
    std::int64_t expired_at_cycle_start = 0;
    bool changed_since_refresh = false;
    std::uint64_t refresh_id = 0;
    std::int64_t forwarded_tuples = 0;
    std::int64_t protocol_violations = 0;

    TransientPhase phase() const {
      if (out) return out->routing_update ? TransientPhase::RoutingUpdate : TransientPhase::CellTransfer;
      if (in) return TransientPhase::CellTransfer;
      return TransientPhase::Normal;
    }
  };

  struct LogEntry {
    std::uint64_t seq = 0;
    KeywordSet words;
    Generation stamp = 0;
  };

  struct PendingRefresh {
    bool relayed = false;
    msg::SummaryRefresh refresh;
    std::set<int> confirmed;  // other routing units whose confirmation arrived
    TextualSummary::Stamped keep;
    TextualSummary::Stamped post;
  };

  struct ActiveOp {
    std::uint64_t id = 0;
    RebalanceOp op;
    bool forced = false;
    bool awaiting_cut = false;
    Generation from_gen = 0;
    std::vector<Transfer> transfers;
    PartitionsMap next_pm;
    int phase1_pending = 0;
    int done_pending = 0;
    int ready_pending = 0;
  };

  struct CoordinatorState {
    PartitionsMap pm;
    Generation gen = 0;
    std::map<PartitionId, msg::StatsReport> reports;
    std::optional<ActiveOp> active;
    std::deque<msg::SummaryRefresh> held;
    std::map<std::pair<PartitionId, std::uint64_t>, int> refreshes;
    std::deque<RebalanceOp> forced;
    std::vector<TransferRecord> history;
    std::uint64_t next_op = 1;
  };

  struct RouterWorker {
    RoutingUnit unit;
    int index = 0;
    Rng rng;
    Timestamp watermark = std::numeric_limits<Timestamp>::min();
    std::vector<std::uint64_t> sent_seq;
    std::vector<std::deque<LogEntry>> log;
    std::map<std::pair<PartitionId, std::uint64_t>, PendingRefresh> pending;
    std::int64_t forwarded_objects = 0;
    std::int64_t dropped_by_summary = 0;
    std::int64_t out_of_world = 0;
    std::int64_t rejected_queries = 0;
    std::int64_t query_messages = 0;
    std::int64_t keyword_forwards = 0;
    std::int64_t sync_bytes = 0;
    SearchStats search;
  };

  Simulator(RuntimeConfig cfg, const PartitionsMap& initial)
      : cfg_(std::move(cfg)),
        n_eval_(cfg_.evaluators + 1),
        sched_(workers(), cfg_.policy, cfg_.seed ^ 0x5bd1e995ull),
        source_rng_(cfg_.seed) {
    if (cfg_.evaluators < 1 || cfg_.routers < 1) throw Error(ErrorCode::InvalidArgument, "need at least one evaluator and router");
    PartitionsMap pm = initial;
    if (!spatial()) pm = AGrid::single_partition(cfg_.geometry.n, cfg_.geometry.m);
    if (static_cast<int>(pm.capacity()) > n_eval_) throw Error(ErrorCode::InvalidArgument, "partition ids exceed evaluator count");
    AGrid grid(cfg_.geometry, pm, 0);
    for (int r = 0; r < cfg_.routers; ++r) {
      RouterWorker w;
      w.unit = RoutingUnit(r, grid, cfg_.summary);
      w.index = r;
      w.rng = Rng(cfg_.seed * 1000003ull + static_cast<std::uint64_t>(r));
      w.sent_seq.assign(n_eval_, 0);
      w.log.resize(n_eval_);
      routers_.push_back(std::move(w));
    }
    coord_.pm = pm;
    for (int e = 0; e < n_eval_; ++e) {
      std::optional<CellRect> bounds;
      if (spatial()) bounds = pm.find(e);
      else if (e < cfg_.evaluators) bounds = cfg_.geometry.full();
      auto w = std::make_unique<EvaluatorWorker>();
      w->state = EvaluatorState(e, cfg_.geometry, bounds, cfg_.summary);
      if (cfg_.mode == RoutingMode::Broadcast) w->state.set_cost_mode(CostMode::LiveScan);
      w->state.set_emit_filter([this, e](const ContinuousQuery& q, const SpatialKeywordObject& o) {
        auto it = query_pos_.find(q.qid);
        if (it != query_pos_.end() && it->second > current_pos_) return false;
        if (cfg_.mode == RoutingMode::Textual && q.predicate == Predicate::Overlaps)
          return keyword_evaluator(q.text.first_common(o.text)) == e;
        return true;
      });
      w->pm = pm;
      w->seen.assign(cfg_.routers, 0);
      w->watermarks.assign(cfg_.routers, std::numeric_limits<Timestamp>::min());
      evals_.push_back(std::move(w));
    }
  }

  const RuntimeConfig& config() const { return cfg_; }

  void set_source(std::function<std::optional<TraceItem>()> next) {
    next_ = std::move(next);
    exhausted_ = false;
    peeked_.reset();
  }

  void set_trace(std::vector<TraceItem> items) {
    auto data = std::make_shared<std::vector<TraceItem>>(std::move(items));
    auto i = std::make_shared<std::size_t>(0);
    set_source([data, i]() -> std::optional<TraceItem> {
      if (*i >= data->size()) return std::nullopt;
      return (*data)[(*i)++];
    });
  }

  // Queues an operation at the coordinator, bypassing selection. Shifts without a region ask the
  // source evaluator for a strip; split/merge uses op.split as given.
  void request_op(const RebalanceOp& op) { send(system_id(), router_id(0), msg::ForcedOp{op}); }

  // Delivers one message (or lets the source emit one tuple). Returns false once nothing is left.
  bool tick() {
    Envelope env;
    auto pick = sched_.next(source_ready(), env);
    if (pick == Sched::Pick::None) return false;
    ++ticks_;
    if (pick == Sched::Pick::External) {
      source_step();
    } else {
      ++messages_;
      dispatch(env.from, env.to, env.body);
    }
    if (cfg_.stats_cadence > 0 && ++since_stats_ >= cfg_.stats_cadence && !exhausted_) {
      since_stats_ = 0;
      record_metrics();
      if (cfg_.adaptive && spatial())
        for (int e = 0; e < n_eval_; ++e) send(system_id(), eval_id(e), msg::CollectStats{});
    }
    return true;
  }

  std::int64_t run(std::int64_t max_ticks = std::numeric_limits<std::int64_t>::max()) {
    std::int64_t n = 0;
    while (n < max_ticks && tick()) ++n;
    return n;
  }

  bool idle() { return sched_.pending() == 0 && !source_ready(); }

  std::int64_t ticks() const { return ticks_; }
  const std::vector<MatchResult>& results() const { return results_; }
  std::vector<MatchResult> take_results() { return std::move(results_); }
  const std::vector<DecisionRecord>& decisions() const { return decisions_; }
  const std::vector<MetricsRow>& metric_rows() const { return rows_; }
  const RouterWorker& router(int r) const { return routers_.at(r); }
  const EvaluatorWorker& evaluator(int e) const { return *evals_.at(e); }
  int evaluator_count() const { return n_eval_; }
  const PartitionsMap& partitions() const { return coord_.pm; }
  Generation generation() const { return coord_.gen; }
  bool op_active() const { return coord_.active.has_value(); }

  double alpha() const {
    std::int64_t a = 0;
    for (const auto& e : evals_) a = std::max(a, e->state.overall_cost());
    return static_cast<double>(a);
  }

  MetricsRow snapshot_metrics() const {
    RuntimeTotals t = totals();
    return {ticks_, alpha(), t.candidates, t.forwarded_objects, t.dropped_by_summary, t.peak_channel_depth, t.rebalances};
  }

  void record_metrics() { rows_.push_back(snapshot_metrics()); }

  RuntimeTotals totals() const {
    RuntimeTotals t;
    t.ticks = ticks_;
    t.messages = messages_;
    t.objects_in = objects_in_;
    t.queries_in = queries_in_;
    for (const auto& r : routers_) {
      t.forwarded_objects += r.forwarded_objects;
      t.dropped_by_summary += r.dropped_by_summary;
      t.out_of_world += r.out_of_world;
      t.rejected_queries += r.rejected_queries;
      t.query_messages += r.query_messages;
      t.keyword_forwards += r.keyword_forwards;
      t.sync_bytes += r.sync_bytes;
      t.search_pops += r.search.pops;
    }
    for (const auto& e : evals_) {
      t.candidates += e->state.counters().candidates;
      t.matches += e->state.counters().matches;
      t.forwarded_tuples += e->forwarded_tuples;
      t.protocol_violations += e->protocol_violations;
    }
    t.rebalances = rebalances_;
    t.abandoned_ops = abandoned_;
    t.refreshes_applied = refreshes_applied_;
    t.refreshes_discarded = refreshes_discarded_;
    t.peak_channel_depth = sched_.peak_depth();
    return t;
  }

 private:
  // Worker numbering: source, routing units, evaluators (the last one starts as the auxiliary), and
  // a pseudo-worker for timer-driven injections.
  int workers() const { return 2 + cfg_.routers + cfg_.evaluators + 1; }
  int source_id() const { return 0; }
  int router_id(int r) const { return 1 + r; }
  int eval_id(int e) const { return 1 + cfg_.routers + e; }
  int system_id() const { return 1 + cfg_.routers + n_eval_; }
  bool is_router(int w) const { return w >= 1 && w <= cfg_.routers; }
  bool is_eval(int w) const { return w > cfg_.routers && w <= cfg_.routers + n_eval_; }
  int router_index(int w) const { return w - 1; }
  int eval_index(int w) const { return w - 1 - cfg_.routers; }

  bool spatial() const { return cfg_.mode == RoutingMode::AGrid || cfg_.mode == RoutingMode::Uniform; }
  bool summaries() const { return spatial(); }

  int keyword_evaluator(const std::string& w) const {
    return static_cast<int>(fnv1a(w) % static_cast<std::uint64_t>(cfg_.evaluators));
  }

  void send(int from, int to, Payload body) { sched_.push(from, to, std::move(body)); }

  // ---- source ----

  bool source_ready() {
    if (awaiting_) return false;
    if (exhausted_ || !next_) return false;
    if (!peeked_) {
      peeked_ = next_();
      if (!peeked_) exhausted_ = true;
    }
    return peeked_.has_value();
  }

  void source_step() {
    TraceItem item = std::move(*peeked_);
    peeked_.reset();
    ++pos_;
    int r = static_cast<int>(uniform_index(source_rng_, static_cast<std::uint64_t>(cfg_.routers)));
    if (auto* o = std::get_if<SpatialKeywordObject>(&item)) {
      ++objects_in_;
      if (cfg_.watermark_interval > 0 && (!have_watermark_ || o->ts >= last_watermark_ + cfg_.watermark_interval)) {
        have_watermark_ = true;
        last_watermark_ = o->ts;
        for (int i = 0; i < cfg_.routers; ++i) send(source_id(), router_id(i), msg::Watermark{o->ts, -1});
      }
      send(source_id(), router_id(r), msg::IngestObject{std::move(*o), pos_});
      return;
    }
    auto q = std::make_shared<const ContinuousQuery>(std::move(std::get<ContinuousQuery>(item)));
    ++queries_in_;
    query_pos_[q->qid] = pos_;
    awaiting_ = true;
    awaiting_qid_ = q->qid;
    expected_acks_ = -1;
    acks_ = 0;
    send(source_id(), router_id(r), msg::IngestQuery{std::move(q)});
  }

  void source_check() {
    if (awaiting_ && expected_acks_ >= 0 && acks_ >= expected_acks_) awaiting_ = false;
  }

  // ---- dispatch ----

  void dispatch(int from, int to, Payload& body) {
    std::visit([&](auto& m) { handle(from, to, m); }, body);
  }

  void handle(int, int, msg::RegistrationPlan& m) {
    if (!awaiting_ || m.qid != awaiting_qid_) throw Error(ErrorCode::ProtocolViolation, "unexpected registration plan");
    expected_acks_ = m.expected;
    source_check();
  }

  void handle(int, int, msg::Ack& m) {
    if (!awaiting_ || m.qid != awaiting_qid_) throw Error(ErrorCode::ProtocolViolation, "unexpected acknowledgement");
    ++acks_;
    source_check();
  }

  void handle(int from, int to, msg::Watermark& m) {
    if (is_router(to)) {
      RouterWorker& r = routers_[router_index(to)];
      r.watermark = std::max(r.watermark, m.ts);
      for (int e = 0; e < n_eval_; ++e) send(to, eval_id(e), msg::Watermark{m.ts, r.index});
      return;
    }
    EvaluatorWorker& e = *evals_[eval_index(to)];
    e.watermarks[m.router] = std::max(e.watermarks[m.router], m.ts);
    (void)from;
  }

  // ---- routing units ----

  void handle(int, int to, msg::IngestObject& m) {
    RouterWorker& r = routers_[router_index(to)];
    const auto& o = m.o;
    if (!cfg_.geometry.try_cell_of(o.loc)) {
      ++r.out_of_world;
      return;
    }
    switch (cfg_.mode) {
      case RoutingMode::AGrid:
      case RoutingMode::Uniform: {
        auto [route, pid] = r.unit.route_object(o);
        if (route == ObjectRoute::DroppedBySummary) {
          ++r.dropped_by_summary;
          return;
        }
        ++r.forwarded_objects;
        send(to, eval_id(pid), msg::Object{o, m.pos, r.unit.generation()});
        return;
      }
      case RoutingMode::Textual: {
        std::set<int> targets;
        for (const auto& w : o.text) targets.insert(keyword_evaluator(w));
        if (targets.empty()) ++r.dropped_by_summary;
        for (int e : targets) {
          ++r.forwarded_objects;
          send(to, eval_id(e), msg::Object{o, m.pos, 0});
        }
        return;
      }
      case RoutingMode::Broadcast: {
        int e = static_cast<int>(uniform_index(r.rng, static_cast<std::uint64_t>(cfg_.evaluators)));
        ++r.forwarded_objects;
        send(to, eval_id(e), msg::Object{o, m.pos, 0});
        return;
      }
    }
  }

  void handle(int, int to, msg::IngestQuery& m) {
    RouterWorker& r = routers_[router_index(to)];
    const ContinuousQuery& q = *m.q;
    int expected = 0;
    if (q.text.empty()) {
      ++r.rejected_queries;
    } else if (!cfg_.geometry.try_cell_range(q.mbr)) {
      ++r.out_of_world;
    } else if (spatial()) {
      expected = route_spatial_query(r, to, m.q);
    } else {
      std::set<int> targets;
      if (cfg_.mode == RoutingMode::Broadcast) {
        for (int e = 0; e < cfg_.evaluators; ++e) targets.insert(e);
      } else if (q.predicate == Predicate::Contains) {
        targets.insert(keyword_evaluator(filter_keyword(q, cfg_.summary)));
      } else {
        for (const auto& w : q.text) targets.insert(keyword_evaluator(w));
      }
      for (int e : targets) {
        ++r.query_messages;
        send(to, eval_id(e), msg::Query{m.q, r.index, 0, 0, true});
      }
      expected = static_cast<int>(targets.size());
    }
    send(to, source_id(), msg::RegistrationPlan{q.qid, expected});
  }

  int route_spatial_query(RouterWorker& r, int self, const QueryPtr& qp) {
    const ContinuousQuery& q = *qp;
    Generation gen = r.unit.generation();
    RegistrationOutcome out = r.unit.register_query(q, &r.search);
    KeywordSet contribution = summary_contribution(q, cfg_.summary);
    KeywordSet forward;
    for (const auto& [pid, words] : out.new_keywords) forward.merge(words);
    for (auto pid : out.targets) {
      std::uint64_t seq = ++r.sent_seq[pid];
      r.log[pid].push_back({seq, contribution, gen});
      for (auto& [key, p] : r.pending) {
        if (key.first != pid || !p.relayed) continue;
        add_min(p.post, contribution, gen);
        forward.merge(contribution);
      }
      ++r.query_messages;
      send(self, eval_id(pid), msg::Query{qp, r.index, seq, gen, true});
    }
    int expected = static_cast<int>(out.targets.size());
    if (cfg_.routers > 1) {
      bool full = cfg_.sync == SummarySync::Broadcast;
      if (full || !forward.empty()) {
        msg::KeywordForward kf{q.qid, r.index, gen, full ? contribution : forward, out.targets};
        std::size_t bytes = full ? broadcast_bytes(q) : forward_bytes(kf.words, kf.targets.size());
        for (int i = 0; i < cfg_.routers; ++i) {
          if (i == r.index) continue;
          ++r.keyword_forwards;
          r.sync_bytes += static_cast<std::int64_t>(bytes);
          send(self, router_id(i), kf);
        }
        expected += cfg_.routers - 1;
      }
    }
    return expected;
  }

  static void add_min(TextualSummary::Stamped& s, const KeywordSet& words, Generation stamp) {
    for (const auto& w : words) {
      auto [it, inserted] = s.emplace(w, stamp);
      if (!inserted && it->second > stamp) it->second = stamp;
    }
  }

  static void add_min(TextualSummary::Stamped& s, const TextualSummary::Stamped& other) {
    for (const auto& [w, g] : other) {
      auto [it, inserted] = s.emplace(w, g);
      if (!inserted && it->second > g) it->second = g;
    }
  }

  void handle(int, int to, msg::KeywordForward& m) {
    RouterWorker& r = routers_[router_index(to)];
    for (auto pid : m.targets) {
      for (auto& [key, p] : r.pending)
        if (key.first == pid && p.confirmed.count(m.origin)) add_min(p.post, m.words, m.stamp);
      r.unit.add_contribution(pid, m.words, m.stamp);
    }
    send(to, source_id(), msg::Ack{m.qid});
  }

  void handle(int, int to, msg::RebalanceStart& m) {
    RouterWorker& r = routers_[router_index(to)];
    for (const auto& t : m.transfers) r.unit.begin_transfer({m.from_gen, t.src, t.dst});
  }

  void handle(int, int to, msg::PartitionUpdate& m) {
    if (is_router(to)) {
      RouterWorker& r = routers_[router_index(to)];
      r.unit.install(m.pm, m.gen);
      for (auto src : m.sources) send(to, eval_id(src), msg::GenerationAck{m.op, r.index});
      return;
    }
    EvaluatorWorker& e = *evals_[eval_index(to)];
    e.pm = m.pm;
    bool advanced = m.gen > e.known_gen;
    e.known_gen = std::max(e.known_gen, m.gen);
    if (e.out && e.out->op == m.op) {
      e.out->routing_update = true;
      e.out->cursor = e.out->region.count();
      maybe_finish_outgoing(eval_index(to));
    }
    if (advanced) release_future(eval_index(to));
  }

  void handle(int, int to, msg::RefreshRelay& m) {
    RouterWorker& r = routers_[router_index(to)];
    const auto& f = m.refresh;
    PendingRefresh& p = r.pending[{f.pid, f.id}];
    p.relayed = true;
    p.refresh = f;
    auto& log = r.log[f.pid];
    std::uint64_t seen = f.seen[r.index];
    while (!log.empty() && log.front().seq <= seen) log.pop_front();
    TextualSummary::Stamped keep;
    for (const auto& e : log) add_min(keep, e.words, e.stamp);
    add_min(p.keep, keep);
    for (int i = 0; i < cfg_.routers; ++i)
      if (i != r.index) send(to, router_id(i), msg::RefreshConfirm{f.pid, f.id, r.index, keep});
    maybe_apply_refresh(r, {f.pid, f.id});
  }

  void handle(int, int to, msg::RefreshConfirm& m) {
    RouterWorker& r = routers_[router_index(to)];
    PendingRefresh& p = r.pending[{m.pid, m.id}];
    p.confirmed.insert(m.router);
    add_min(p.keep, m.keep);
    maybe_apply_refresh(r, {m.pid, m.id});
  }

  void maybe_apply_refresh(RouterWorker& r, std::pair<PartitionId, std::uint64_t> key) {
    auto it = r.pending.find(key);
    PendingRefresh& p = it->second;
    if (!p.relayed || static_cast<int>(p.confirmed.size()) < cfg_.routers - 1) return;
    const auto& f = p.refresh;
    if (!r.unit.involved_since(f.pid, f.gen)) {
      TextualSummary::Stamped s;
      for (const auto& w : f.words) s.emplace(w, f.gen);
      add_min(s, p.keep);
      add_min(s, p.post);
      r.unit.summaries().replace(f.pid, std::move(s));
    }
    r.pending.erase(it);
    send(router_id(r.index), router_id(0), msg::RefreshApplied{key.first, key.second});
  }

  // ---- coordinator (hosted by routing unit 0) ----

  void handle(int, int, msg::StatsReport& m) {
    coord_.reports[m.pid] = std::move(m);
    try_start();
  }

  void handle(int, int, msg::ForcedOp& m) {
    coord_.forced.push_back(m.op);
    try_start();
  }

  void handle(int, int, msg::SummaryRefresh& m) {
    if (coord_.active) {
      coord_.held.push_back(std::move(m));
      return;
    }
    relay_refresh(m);
  }

  void relay_refresh(const msg::SummaryRefresh& m) {
    for (const auto& t : coord_.history) {
      if (t.from_gen >= m.gen && (t.src == m.pid || t.dst == m.pid)) {
        ++refreshes_discarded_;
        return;
      }
    }
    coord_.refreshes[{m.pid, m.id}] = cfg_.routers;
    for (int i = 0; i < cfg_.routers; ++i) send(router_id(0), router_id(i), msg::RefreshRelay{m});
  }

  void handle(int, int, msg::RefreshApplied& m) {
    auto it = coord_.refreshes.find({m.pid, m.id});
    if (it == coord_.refreshes.end()) throw Error(ErrorCode::ProtocolViolation, "unknown refresh");
    if (--it->second == 0) {
      coord_.refreshes.erase(it);
      ++refreshes_applied_;
      try_start();
    }
  }

  void try_start() {
    if (coord_.active || !coord_.refreshes.empty()) return;
    if (!coord_.forced.empty()) {
      RebalanceOp op = coord_.forced.front();
      coord_.forced.pop_front();
      begin_op(op, true);
      return;
    }
    if (!cfg_.adaptive || !spatial()) return;
    WorkloadSnapshot snap;
    snap.pm = coord_.pm;
    for (auto pid : coord_.pm.pids()) {
      auto it = coord_.reports.find(pid);
      if (it == coord_.reports.end() || it->second.gen != coord_.gen) return;
      snap.stats[pid] = it->second.stats;
    }
    for (int e = 0; e < n_eval_; ++e)
      if (!coord_.pm.has(e)) snap.idle.push_back(e);
    coord_.reports.clear();
    auto op = select_rebalance_op(snap, cfg_.beta);
    if (!op) return;
    decisions_.push_back({ticks_, *op, snap.alpha(), std::move(snap)});
    log::info("rebalance " + std::string(to_string(op->kind)) + " " + op_pids(*op));
    begin_op(*op, false);
  }

  void begin_op(const RebalanceOp& op, bool forced) {
    ActiveOp a;
    a.id = coord_.next_op++;
    a.op = op;
    a.forced = forced;
    a.from_gen = coord_.gen;
    if ((op.kind == OpKind::HorizontalShift || op.kind == OpKind::VerticalShift) && !op.region) {
      a.awaiting_cut = true;
      coord_.active = std::move(a);
      send(router_id(0), eval_id(op.from), msg::ShiftQuery{coord_.active->id, op.target_cost, op.side});
      return;
    }
    coord_.active = std::move(a);
    start_transfers();
  }

  void handle(int, int, msg::ShiftReply& m) {
    if (!coord_.active || coord_.active->id != m.op) throw Error(ErrorCode::ProtocolViolation, "stray shift reply");
    if (!m.strip) {
      ++abandoned_;
      coord_.active.reset();
      release_held_refreshes();
      try_start();
      return;
    }
    coord_.active->op.region = m.strip;
    coord_.active->awaiting_cut = false;
    start_transfers();
  }

  void start_transfers() {
    ActiveOp& a = *coord_.active;
    const RebalanceOp& op = a.op;
    CellRect moved = op.is_shift() ? *op.region : split_moved_region(coord_.pm.at(op.from), op);
    if (op.is_shift()) {
      a.transfers.push_back({op.from, op.to, moved});
    } else {
      a.transfers.push_back({op.from, op.aux, moved});
      a.transfers.push_back({op.merge_donor, op.merge_keep, coord_.pm.at(op.merge_donor)});
    }
    a.next_pm = apply_op(coord_.pm, op, moved);
    std::vector<PartitionId> owners;
    fill_owners(a.next_pm, cfg_.geometry.n, cfg_.geometry.m, owners);
    a.phase1_pending = a.done_pending = a.ready_pending = static_cast<int>(a.transfers.size());
    for (const auto& t : a.transfers) coord_.history.push_back({a.from_gen, t.src, t.dst});
    for (int i = 0; i < cfg_.routers; ++i) send(router_id(0), router_id(i), msg::RebalanceStart{a.id, a.from_gen, a.transfers});
    for (const auto& t : a.transfers) {
      send(router_id(0), eval_id(t.dst), msg::ExpectTransfer{a.id, t.region, t.src, a.from_gen + 1});
      send(router_id(0), eval_id(t.src), msg::TransferCommand{a.id, t.region, t.dst, a.from_gen + 1});
    }
  }

  void handle(int, int, msg::Phase1Done& m) {
    ActiveOp& a = active_op(m.op);
    if (--a.phase1_pending > 0) return;
    coord_.pm = a.next_pm;
    coord_.gen = a.from_gen + 1;
    std::vector<PartitionId> sources;
    for (const auto& t : a.transfers) sources.push_back(t.src);
    msg::PartitionUpdate up{a.id, coord_.gen, coord_.pm, sources};
    for (int i = 0; i < cfg_.routers; ++i) send(router_id(0), router_id(i), up);
    for (int e = 0; e < n_eval_; ++e) send(router_id(0), eval_id(e), up);
  }

  void handle(int, int to, msg::TransferDone& m) {
    if (is_eval(to)) {
      finish_incoming(eval_index(to), m);
      return;
    }
    ActiveOp& a = active_op(m.op);
    --a.done_pending;
    maybe_complete_op();
  }

  void handle(int, int, msg::DestinationReady& m) {
    ActiveOp& a = active_op(m.op);
    --a.ready_pending;
    maybe_complete_op();
  }

  ActiveOp& active_op(std::uint64_t id) {
    if (!coord_.active || coord_.active->id != id) throw Error(ErrorCode::ProtocolViolation, "message for inactive op");
    return *coord_.active;
  }

  void maybe_complete_op() {
    ActiveOp& a = *coord_.active;
    if (a.done_pending > 0 || a.ready_pending > 0) return;
    ++rebalances_;
    coord_.active.reset();
    coord_.reports.clear();
    release_held_refreshes();
    try_start();
  }

  void release_held_refreshes() {
    auto held = std::move(coord_.held);
    coord_.held.clear();
    for (auto& r : held) relay_refresh(r);
  }

  // ---- evaluators ----

  void handle(int from, int to, msg::Object& m) {
    int idx = eval_index(to);
    EvaluatorWorker& e = *evals_[idx];
    CellCoord c = cfg_.geometry.cell_of(m.o.loc);
    if (is_router(from)) {
      if (m.gen > e.known_gen && !e.state.holds(c)) {
        e.future.emplace_back(from, std::move(m));
        return;
      }
      if (e.in && e.in->region.contains(c)) {
        e.in->held.emplace_back(from, std::move(m));
        return;
      }
      if (e.out && e.out->routing_update && e.out->region.contains(c)) {
        ++e.forwarded_tuples;
        send(to, eval_id(e.out->dst), std::move(m));
        return;
      }
    }
    if (!e.state.holds(c)) {
      ++e.protocol_violations;
      log::warn("object outside evaluator " + std::to_string(idx));
      return;
    }
    current_pos_ = m.pos;
    if (cfg_.keep_results) {
      e.state.process_object(m.o, results_);
    } else {
      scratch_results_.clear();
      e.state.process_object(m.o, scratch_results_);
    }
    after_message(idx);
  }

  void handle(int from, int to, msg::Query& m) {
    int idx = eval_index(to);
    EvaluatorWorker& e = *evals_[idx];
    auto range = cfg_.geometry.try_cell_range(m.q->mbr);
    if (!range) {
      ++e.protocol_violations;
      return;
    }
    if (is_router(from)) {
      if (m.gen > e.known_gen) {
        e.future.emplace_back(from, std::move(m));
        return;
      }
      if (e.in && range->intersects(e.in->region)) {
        e.in->held.emplace_back(from, std::move(m));
        return;
      }
      if (m.origin >= 0) e.seen[m.origin] = std::max(e.seen[m.origin], m.seq);
      if (e.out && range->intersects(e.out->region)) {
        OutgoingTransfer& t = *e.out;
        if (!t.routing_update) {
          e.state.attach_query(m.q);
          CellRect inter = *range->intersection(t.region);
          std::int64_t first = static_cast<std::int64_t>(inter.ymin - t.region.ymin) * t.region.width() +
                               (inter.xmin - t.region.xmin);
          if (first < t.cursor) {
            ++e.forwarded_tuples;
            send(to, eval_id(t.dst), msg::Query{m.q, -1, 0, m.gen, false});
          }
          if (m.ack) send(to, source_id(), msg::Ack{m.q->qid});
        } else {
          if (auto rest = e.pm.find(idx)) e.state.attach_query_within(m.q, *rest);
          ++e.forwarded_tuples;
          send(to, eval_id(t.dst), msg::Query{m.q, -1, 0, m.gen, m.ack});
        }
        e.changed_since_refresh = true;
        after_message(idx);
        return;
      }
    }
    if (e.state.attach_query(m.q) == 0 && !e.state.has_query(m.q->qid)) ++e.protocol_violations;
    if (m.ack) send(to, source_id(), msg::Ack{m.q->qid});
    after_message(idx);
  }

  void handle(int, int to, msg::CollectStats&) {
    int idx = eval_index(to);
    EvaluatorWorker& e = *evals_[idx];
    if (!e.state.bounds() || e.phase() != TransientPhase::Normal) return;
    const CellRect b = *e.state.bounds();
    msg::StatsReport rep;
    rep.pid = idx;
    rep.gen = e.known_gen;
    rep.stats.overall_cost = e.state.overall_cost();
    rep.stats.query_count = e.state.query_count();
    if (b.count() >= 2) {
      SplitInfo si;
      si.choice = e.state.find_best_split();
      auto [lo, hi] = split_rect(b, si.choice.axis, si.choice.cut);
      si.qc_low = e.state.region_query_count(lo);
      si.qc_high = e.state.region_query_count(hi);
      rep.stats.split = si;
    }
    if (e.pm.find(idx) == b) {
      for (const auto& adj : adjacency(e.pm, idx)) {
        if (adj.kind != EdgeKind::Corner) continue;
        const CellRect& cr = *adj.corner_region;
        rep.stats.corners.push_back({adj.other, cr, e.state.region_cost(cr), e.state.region_query_count(cr)});
      }
    }
    send(to, router_id(0), std::move(rep));
  }

  void handle(int, int to, msg::ShiftQuery& m) {
    EvaluatorWorker& e = *evals_[eval_index(to)];
    msg::ShiftReply rep{m.op, std::nullopt};
    if (e.phase() == TransientPhase::Normal) {
      try {
        rep.strip = e.state.find_shift_cut(m.target, m.side).strip;
      } catch (const Error& err) {
        if (err.code() != ErrorCode::NoImprovement) throw;
      }
    }
    send(to, router_id(0), rep);
  }

  void handle(int, int to, msg::TransferCommand& m) {
    int idx = eval_index(to);
    EvaluatorWorker& e = *evals_[idx];
    if (e.phase() != TransientPhase::Normal) throw Error(ErrorCode::ProtocolViolation, "source already busy");
    if (!e.state.bounds() || !e.state.bounds()->contains(m.region))
      throw Error(ErrorCode::RegionMismatch, "transfer region not owned by source");
    e.out = OutgoingTransfer{m.op, m.region, m.dst, m.to_gen, 0, false, 0};
    e.known_gen = std::max(e.known_gen, m.to_gen);
    e.state.reset_cleaning();
    e.changed_since_refresh = true;
    send(to, to, msg::ContinueTransfer{m.op});
  }

  void handle(int, int to, msg::ContinueTransfer& m) {
    int idx = eval_index(to);
    EvaluatorWorker& e = *evals_[idx];
    if (!e.out || e.out->op != m.op) throw Error(ErrorCode::ProtocolViolation, "stray transfer step");
    OutgoingTransfer& t = *e.out;
    std::int64_t end = std::min(t.cursor + cfg_.batch_cells, t.region.count());
    msg::CellBatch b{m.op, idx, t.to_gen, e.state.copy_cells(t.region, t.cursor, end)};
    t.cursor = end;
    send(to, eval_id(t.dst), std::move(b));
    if (t.cursor < t.region.count()) send(to, to, msg::ContinueTransfer{m.op});
    else send(to, router_id(0), msg::Phase1Done{m.op, idx});
  }

  void handle(int, int to, msg::ExpectTransfer& m) {
    int idx = eval_index(to);
    expect_incoming(idx, m.op, m.region, m.src, m.to_gen);
  }

  void handle(int, int to, msg::CellBatch& m) {
    int idx = eval_index(to);
    expect_incoming(idx, m.op, m.batch.region, m.src, m.to_gen);
    EvaluatorWorker& e = *evals_[idx];
    if (m.batch.region != e.in->region) throw Error(ErrorCode::ProtocolViolation, "cell batch outside incoming region");
    e.state.absorb_partial(m.batch);
  }

  void expect_incoming(int idx, std::uint64_t op, const CellRect& region, PartitionId src, Generation to_gen) {
    EvaluatorWorker& e = *evals_[idx];
    if (e.in) {
      if (e.in->op != op || e.in->region != region) throw Error(ErrorCode::ProtocolViolation, "second incoming transfer");
      return;
    }
    if (e.out) throw Error(ErrorCode::ProtocolViolation, "destination is also a source");
    e.in = IncomingTransfer{op, region, src, {}};
    e.state.set_incoming(region);
    e.state.reset_cleaning();
    bool advanced = to_gen > e.known_gen;
    e.known_gen = std::max(e.known_gen, to_gen);
    if (advanced) release_future(idx);
  }

  void handle(int, int to, msg::GenerationAck& m) {
    int idx = eval_index(to);
    EvaluatorWorker& e = *evals_[idx];
    if (!e.out || e.out->op != m.op) throw Error(ErrorCode::ProtocolViolation, "stray generation ack");
    ++e.out->acks;
    maybe_finish_outgoing(idx);
  }

  void maybe_finish_outgoing(int idx) {
    EvaluatorWorker& e = *evals_[idx];
    OutgoingTransfer& t = *e.out;
    if (!t.routing_update || t.acks < cfg_.routers) return;
    e.state.drop_cells(t.region);
    e.state.set_bounds(e.pm.find(idx));
    std::uint64_t op = t.op;
    PartitionId dst = t.dst;
    e.out.reset();
    e.since_clean = 0;
    send(eval_id(idx), eval_id(dst), msg::TransferDone{op, idx});
    send(eval_id(idx), router_id(0), msg::TransferDone{op, idx});
  }

  void finish_incoming(int idx, const msg::TransferDone& m) {
    EvaluatorWorker& e = *evals_[idx];
    if (!e.in || e.in->op != m.op) throw Error(ErrorCode::ProtocolViolation, "stray transfer completion");
    const CellRect region = e.in->region;
    std::optional<CellRect> merged = region;
    if (e.state.bounds()) merged = e.state.bounds()->rect_union(region);
    if (!merged) throw Error(ErrorCode::RegionMismatch, "incoming region does not extend destination");
    e.state.set_bounds(merged);
    e.state.set_incoming(std::nullopt);
    auto held = std::move(e.in->held);
    e.in.reset();
    e.changed_since_refresh = true;
    e.since_clean = 0;
    for (auto& [from, body] : held) dispatch(from, eval_id(idx), body);
    send(eval_id(idx), router_id(0), msg::DestinationReady{m.op, idx});
  }

  void release_future(int idx) {
    EvaluatorWorker& e = *evals_[idx];
    auto pending = std::move(e.future);
    e.future.clear();
    for (auto& [from, body] : pending) dispatch(from, eval_id(idx), body);
  }

  // Lazy cleaning: a bounded number of occupied cells per step; a completed cycle refreshes the
  // routers' summary when something may have left.
  void after_message(int idx) {
    EvaluatorWorker& e = *evals_[idx];
    if (!cfg_.cleaning || e.phase() != TransientPhase::Normal) return;
    if (++e.since_clean < cfg_.cleaning_interval) return;
    e.since_clean = 0;
    if (!e.state.cleaning_in_progress()) e.expired_at_cycle_start = e.state.counters().expired_removed;
    Timestamp horizon = *std::min_element(e.watermarks.begin(), e.watermarks.end());
    std::size_t budget = std::max<std::size_t>(1, e.state.cells().size() / std::max<std::size_t>(1, cfg_.cleaning_divisor));
    auto words = e.state.cleaning_step(horizon, budget);
    if (!words) return;
    bool shrank = e.state.counters().expired_removed > e.expired_at_cycle_start;
    if (!summaries() || !(shrank || e.changed_since_refresh)) return;
    e.changed_since_refresh = false;
    send(eval_id(idx), router_id(0), msg::SummaryRefresh{idx, ++e.refresh_id, std::move(*words), e.seen, e.known_gen});
  }

  template <typename M>
  void handle(int, int, M&) {
    throw Error(ErrorCode::ProtocolViolation, "message delivered to the wrong worker");
  }

  RuntimeConfig cfg_;
  int n_eval_;
  Sched sched_;
  Rng source_rng_;
  std::vector<RouterWorker> routers_;
  std::vector<std::unique_ptr<EvaluatorWorker>> evals_;
  CoordinatorState coord_;

  std::function<std::optional<TraceItem>()> next_;
  std::optional<TraceItem> peeked_;
  bool exhausted_ = true;
  bool awaiting_ = false;
  QueryId awaiting_qid_ = 0;
  int expected_acks_ = -1;
  int acks_ = 0;
  std::uint64_t pos_ = 0;
  bool have_watermark_ = false;
  Timestamp last_watermark_ = 0;

  // Stream position of each query. Stands in for the position a real deployment would carry inside
  // the query payload; an object only matches queries that entered the stream before it.
  std::unordered_map<QueryId, std::uint64_t> query_pos_;
  std::uint64_t current_pos_ = 0;

  std::vector<MatchResult> results_;
  std::vector<MatchResult> scratch_results_;
  std::vector<DecisionRecord> decisions_;
  std::vector<MetricsRow> rows_;
  std::int64_t ticks_ = 0;
  std::int64_t messages_ = 0;
  std::int64_t since_stats_ = 0;
  std::int64_t objects_in_ = 0;
  std::int64_t queries_in_ = 0;
  std::int64_t rebalances_ = 0;
  std::int64_t abandoned_ = 0;
  std::int64_t refreshes_applied_ = 0;
  std::int64_t refreshes_discarded_ = 0;
};

}  // namespace skystream
