#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "agrid.hpp"
#include "model.hpp"

namespace skystream {

// How a CONTAINS query is represented in router summaries.
enum class ContainsRule {
  FilterKeyword,  // lexicographically smallest keyword
  RarestKeyword,  // least frequent keyword per a shared frequency table; ties lexicographic
  AllKeywords,    // every keyword, as for OVERLAPS
};

struct SummaryPolicy {
  ContainsRule contains = ContainsRule::FilterKeyword;
  std::shared_ptr<const std::unordered_map<std::string, std::uint64_t>> frequencies;
};

inline std::string filter_keyword(const ContinuousQuery& q, const SummaryPolicy& policy = {}) {
  if (policy.contains == ContainsRule::RarestKeyword && policy.frequencies) {
    const std::string* best = nullptr;
    std::uint64_t best_f = 0;
    for (const auto& w : q.text) {
      auto it = policy.frequencies->find(w);
      std::uint64_t f = it == policy.frequencies->end() ? 0 : it->second;
      if (!best || f < best_f) {
        best = &w;
        best_f = f;
      }
    }
    return *best;
  }
  return q.text.front();
}

inline KeywordSet summary_contribution(const ContinuousQuery& q, const SummaryPolicy& policy = {}) {
  if (q.predicate == Predicate::Overlaps || policy.contains == ContainsRule::AllKeywords) return q.text;
  return KeywordSet{filter_keyword(q, policy)};
}

// Router-side keyword sets per evaluator. Each keyword carries the lowest partitioning generation
// under which it was added, so summaries can be copied to a rebalance destination deterministically
// regardless of when concurrent keyword forwards arrive.
class TextualSummary {
 public:
  using Stamped = std::unordered_map<std::string, Generation>;

  bool should_forward(PartitionId pid, const KeywordSet& text) const {
    const Stamped* s = find(pid);
    if (!s || s->empty()) return false;
    for (const auto& w : text)
      if (s->count(w)) return true;
    return false;
  }

  // Words of `words` that are absent from pid or present only with a later stamp.
  KeywordSet fresh(PartitionId pid, const KeywordSet& words, Generation stamp) const {
    const Stamped* s = find(pid);
    std::vector<std::string> out;
    for (const auto& w : words) {
      if (!s) {
        out.push_back(w);
        continue;
      }
      auto it = s->find(w);
      if (it == s->end() || it->second > stamp) out.push_back(w);
    }
    return KeywordSet(std::move(out));
  }

  void add(PartitionId pid, const KeywordSet& words, Generation stamp) {
    Stamped& s = slot(pid);
    for (const auto& w : words) {
      auto [it, inserted] = s.emplace(w, stamp);
      if (!inserted && it->second > stamp) it->second = stamp;
    }
  }

  void add_stamped(PartitionId pid, const Stamped& words) {
    Stamped& s = slot(pid);
    for (const auto& [w, g] : words) {
      auto [it, inserted] = s.emplace(w, g);
      if (!inserted && it->second > g) it->second = g;
    }
  }

  // Copies into dst every keyword of src stamped at or before max_stamp.
  void merge_into(PartitionId src, PartitionId dst, Generation max_stamp) {
    const Stamped* s = find(src);
    if (!s) return;
    Stamped copy;
    for (const auto& [w, g] : *s)
      if (g <= max_stamp) copy.emplace(w, g);
    add_stamped(dst, copy);
  }

  void replace(PartitionId pid, Stamped words) { slot(pid) = std::move(words); }

  void clear(PartitionId pid) {
    if (auto* s = find_mut(pid)) s->clear();
  }

  KeywordSet keywords(PartitionId pid) const {
    std::vector<std::string> out;
    if (const Stamped* s = find(pid))
      for (const auto& [w, g] : *s) out.push_back(w);
    return KeywordSet(std::move(out));
  }

  std::size_t size(PartitionId pid) const {
    const Stamped* s = find(pid);
    return s ? s->size() : 0;
  }

  std::size_t capacity() const { return per_.size(); }

  bool same_keywords(const TextualSummary& o) const {
    std::size_t cap = std::max(per_.size(), o.per_.size());
    for (std::size_t i = 0; i < cap; ++i)
      if (keywords(static_cast<PartitionId>(i)) != o.keywords(static_cast<PartitionId>(i))) return false;
    return true;
  }

 private:
  const Stamped* find(PartitionId pid) const {
    if (pid < 0 || static_cast<std::size_t>(pid) >= per_.size()) return nullptr;
    return &per_[pid];
  }
  Stamped* find_mut(PartitionId pid) {
    if (pid < 0 || static_cast<std::size_t>(pid) >= per_.size()) return nullptr;
    return &per_[pid];
  }
  Stamped& slot(PartitionId pid) {
    if (pid < 0) throw Error(ErrorCode::InvalidArgument, "negative pid");
    if (static_cast<std::size_t>(pid) >= per_.size()) per_.resize(pid + 1);
    return per_[pid];
  }

  std::vector<Stamped> per_;
};

struct RegistrationOutcome {
  std::vector<PartitionId> targets;
  // Keywords each replica must learn, keyed by target pid; only non-empty entries.
  std::vector<std::pair<PartitionId, KeywordSet>> new_keywords;
};

enum class ObjectRoute { Forward, DroppedBySummary, OutOfWorld };

// A cell transfer a router has heard about: cells leave `src` for `dst` when the partitioning moves
// from generation `from_gen` to `from_gen + 1`.
struct TransferRecord {
  Generation from_gen = 0;
  PartitionId src = kNoPartition;
  PartitionId dst = kNoPartition;
};

class RoutingUnit {
 public:
  RoutingUnit() = default;
  RoutingUnit(int id, AGrid grid, SummaryPolicy policy = {})
      : id_(id), grid_(std::move(grid)), policy_(std::move(policy)) {}

  int id() const { return id_; }
  const AGrid& grid() const { return grid_; }
  AGrid& grid() { return grid_; }
  const TextualSummary& summaries() const { return summaries_; }
  TextualSummary& summaries() { return summaries_; }
  const SummaryPolicy& policy() const { return policy_; }
  Generation generation() const { return grid_.generation(); }

  std::pair<ObjectRoute, PartitionId> route_object(const SpatialKeywordObject& o) const {
    auto pid = grid_.try_route_point(o.loc);
    if (!pid) return {ObjectRoute::OutOfWorld, kNoPartition};
    if (!summaries_.should_forward(*pid, o.text)) return {ObjectRoute::DroppedBySummary, *pid};
    return {ObjectRoute::Forward, *pid};
  }

  // Routes a query to the partitions its range overlaps and adds its summary contribution locally.
  // new_keywords lists what other replicas have not been told yet: words missing from the target or
  // from any destination that inherits the target's cells in a transfer known to this unit.
  RegistrationOutcome register_query(const ContinuousQuery& q, SearchStats* stats = nullptr) {
    RegistrationOutcome out;
    out.targets = grid_.neighbor_search(q.mbr, stats);
    KeywordSet contribution = summary_contribution(q, policy_);
    for (auto pid : out.targets) {
      KeywordSet nk = add_contribution(pid, contribution, generation());
      if (!nk.empty()) out.new_keywords.emplace_back(pid, std::move(nk));
    }
    return out;
  }

  // Adds words to pid and to every pid that inherits pid's cells through a recorded transfer whose
  // starting generation is not older than `stamp`. Returns the words that were fresh anywhere.
  KeywordSet add_contribution(PartitionId pid, const KeywordSet& words, Generation stamp) {
    KeywordSet fresh;
    for (auto t : inheritance_closure(pid, stamp)) {
      fresh.merge(summaries_.fresh(t, words, stamp));
      summaries_.add(t, words, stamp);
    }
    return fresh;
  }

  std::vector<PartitionId> inheritance_closure(PartitionId pid, Generation stamp) const {
    std::vector<PartitionId> out{pid};
    for (std::size_t i = 0; i < out.size(); ++i) {
      for (const auto& t : transfers_) {
        if (t.src == out[i] && t.from_gen >= stamp &&
            std::find(out.begin(), out.end(), t.dst) == out.end())
          out.push_back(t.dst);
      }
    }
    return out;
  }

  // Pre-merges the source's summary into the destination and remembers the transfer so that later
  // additions stamped at or before from_gen are mirrored.
  void begin_transfer(const TransferRecord& t) {
    transfers_.push_back(t);
    summaries_.merge_into(t.src, t.dst, t.from_gen);
  }

  const std::vector<TransferRecord>& transfers() const { return transfers_; }

  bool involved_since(PartitionId pid, Generation gen) const {
    for (const auto& t : transfers_)
      if (t.from_gen >= gen && (t.src == pid || t.dst == pid)) return true;
    return false;
  }

  void install(PartitionsMap pm, Generation gen) { grid_.apply(std::move(pm), gen); }

 private:
  int id_ = 0;
  AGrid grid_;
  TextualSummary summaries_;
  SummaryPolicy policy_;
  std::vector<TransferRecord> transfers_;
};

}  // namespace skystream
