#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace skystream {

using ObjectId = std::uint64_t;
using QueryId = std::uint64_t;
using Timestamp = std::int64_t;

inline constexpr Timestamp kNever = std::numeric_limits<Timestamp>::max();

struct Point {
  double x = 0;
  double y = 0;
};

// Half-open rectangle [xmin, xmax) x [ymin, ymax).
struct Rect {
  double xmin = 0;
  double ymin = 0;
  double xmax = 0;
  double ymax = 0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  bool valid() const { return xmin < xmax && ymin < ymax; }

  bool intersects(const Rect& o) const {
    return xmin < o.xmax && o.xmin < xmax && ymin < o.ymax && o.ymin < ymax;
  }

  Rect intersection(const Rect& o) const {
    return {std::max(xmin, o.xmin), std::max(ymin, o.ymin), std::min(xmax, o.xmax),
            std::min(ymax, o.ymax)};
  }

  Rect scaled(double f) const { return {xmin * f, ymin * f, xmax * f, ymax * f}; }

  friend bool operator==(const Rect&, const Rect&) = default;
};

inline const Rect kUnitWorld{0.0, 0.0, 1.0, 1.0};

// Sorted, duplicate-free set of lowercase tokens.
class KeywordSet {
 public:
  KeywordSet() = default;
  KeywordSet(std::initializer_list<std::string> words) : words_(words) { normalize(); }
  explicit KeywordSet(std::vector<std::string> words) : words_(std::move(words)) { normalize(); }

  bool empty() const { return words_.empty(); }
  std::size_t size() const { return words_.size(); }
  auto begin() const { return words_.begin(); }
  auto end() const { return words_.end(); }
  const std::string& front() const { return words_.front(); }
  const std::vector<std::string>& words() const { return words_; }

  bool contains(std::string_view w) const {
    return std::binary_search(words_.begin(), words_.end(), w,
                              [](const auto& a, const auto& b) { return std::string_view(a) < std::string_view(b); });
  }

  bool intersects(const KeywordSet& o) const {
    auto a = words_.begin(), b = o.words_.begin();
    while (a != words_.end() && b != o.words_.end()) {
      int c = a->compare(*b);
      if (c == 0) return true;
      if (c < 0) ++a; else ++b;
    }
    return false;
  }

  // True iff every word of `sub` is in this set.
  bool includes(const KeywordSet& sub) const {
    return std::includes(words_.begin(), words_.end(), sub.words_.begin(), sub.words_.end());
  }

  // Smallest common word, or empty string.
  std::string first_common(const KeywordSet& o) const {
    auto a = words_.begin(), b = o.words_.begin();
    while (a != words_.end() && b != o.words_.end()) {
      int c = a->compare(*b);
      if (c == 0) return *a;
      if (c < 0) ++a; else ++b;
    }
    return {};
  }

  void insert(std::string w) {
    auto it = std::lower_bound(words_.begin(), words_.end(), w);
    if (it == words_.end() || *it != w) words_.insert(it, std::move(w));
  }

  void merge(const KeywordSet& o) {
    std::vector<std::string> out;
    out.reserve(words_.size() + o.words_.size());
    std::set_union(words_.begin(), words_.end(), o.words_.begin(), o.words_.end(),
                   std::back_inserter(out));
    words_ = std::move(out);
  }

  KeywordSet minus(const KeywordSet& o) const {
    KeywordSet r;
    std::set_difference(words_.begin(), words_.end(), o.words_.begin(), o.words_.end(),
                        std::back_inserter(r.words_));
    return r;
  }

  std::string joined(char sep = ',') const {
    std::string s;
    for (const auto& w : words_) {
      if (!s.empty()) s.push_back(sep);
      s += w;
    }
    return s;
  }

  friend bool operator==(const KeywordSet&, const KeywordSet&) = default;

 private:
  void normalize() {
    std::sort(words_.begin(), words_.end());
    words_.erase(std::unique(words_.begin(), words_.end()), words_.end());
  }

  std::vector<std::string> words_;
};

inline std::ostream& operator<<(std::ostream& os, const KeywordSet& k) {
  return os << '{' << k.joined() << '}';
}

// Case-folds and splits on whitespace (and on `extra_sep` when given); drops empties and duplicates.
inline KeywordSet tokenize(std::string_view text, char extra_sep = '\0') {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    auto uc = static_cast<unsigned char>(ch);
    if (std::isspace(uc) || (extra_sep != '\0' && ch == extra_sep)) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    }
  }
  flush();
  return KeywordSet(std::move(out));
}

enum class Predicate { Overlaps, Contains };

inline const char* to_string(Predicate p) { return p == Predicate::Overlaps ? "OVERLAPS" : "CONTAINS"; }

struct SpatialKeywordObject {
  ObjectId oid = 0;
  Point loc;
  KeywordSet text;
  Timestamp ts = 0;
};

struct ContinuousQuery {
  QueryId qid = 0;
  Rect mbr;
  KeywordSet text;
  Predicate predicate = Predicate::Overlaps;
  Timestamp expiry = kNever;
};

using QueryPtr = std::shared_ptr<const ContinuousQuery>;

struct MatchResult {
  QueryId qid = 0;
  ObjectId oid = 0;
  Timestamp ts = 0;

  friend bool operator==(const MatchResult&, const MatchResult&) = default;
  friend auto operator<=>(const MatchResult&, const MatchResult&) = default;
};

inline bool inside(const Point& p, const Rect& r) {
  return r.xmin <= p.x && p.x < r.xmax && r.ymin <= p.y && p.y < r.ymax;
}

inline bool overlaps_text(const KeywordSet& a, const KeywordSet& b) { return a.intersects(b); }

// True iff every keyword of `b` appears in `a`.
inline bool contains_text(const KeywordSet& a, const KeywordSet& b) { return a.includes(b); }

inline bool matches(const SpatialKeywordObject& o, const ContinuousQuery& q) {
  if (!inside(o.loc, q.mbr)) return false;
  return q.predicate == Predicate::Overlaps ? overlaps_text(o.text, q.text)
                                            : contains_text(o.text, q.text);
}

// A query sees objects stamped strictly before its expiry.
inline bool live_at(const ContinuousQuery& q, Timestamp ts) { return ts < q.expiry; }

}  // namespace skystream
