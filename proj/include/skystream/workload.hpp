#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "random.hpp"
#include "runtime.hpp"

namespace skystream {

// Ranked keyword list; rank 0 is the most frequent. Weights follow Zipf(s).
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::size_t size, double s) {
    if (size == 0) throw Error(ErrorCode::InvalidArgument, "empty vocabulary");
    words_.reserve(size);
    weights_.reserve(size);
    for (std::size_t r = 0; r < size; ++r) {
      words_.push_back("w" + std::to_string(r));
      weights_.push_back(1.0 / std::pow(static_cast<double>(r + 1), s));
    }
  }

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t rank) const { return words_.at(rank); }
  double weight(std::size_t rank) const { return weights_.at(rank); }

  // Ranks [0, n) are what objects draw from; the rest is a tail no object ever carries.
  std::size_t object_ranks() const { return std::max<std::size_t>(1, size() - size() / 100); }

  // Rank window for a selectivity percentile, in ascending-frequency order: [p*V, p*V + w) with
  // w = max(1, V/100), shifted down so it stays inside the vocabulary. Returned as popularity ranks.
  std::vector<std::size_t> percentile_window(double p) const {
    if (p < 0 || p > 1) throw Error(ErrorCode::InvalidArgument, "percentile outside [0,1]");
    std::size_t v = size();
    std::size_t w = std::max<std::size_t>(1, v / 100);
    std::size_t start = std::min(static_cast<std::size_t>(std::floor(p * static_cast<double>(v))), v - w);
    std::vector<std::size_t> out;
    for (std::size_t a = start; a < start + w; ++a) out.push_back(v - 1 - a);
    std::sort(out.begin(), out.end());
    return out;
  }

  std::unordered_map<std::string, std::uint64_t> frequency_table(std::uint64_t scale = 1000000) const {
    std::unordered_map<std::string, std::uint64_t> f;
    for (std::size_t r = 0; r < size(); ++r)
      f[words_[r]] = r < object_ranks() ? static_cast<std::uint64_t>(std::llround(weights_[r] * scale)) : 0;
    return f;
  }

 private:
  std::vector<std::string> words_;
  std::vector<double> weights_;
};

// Samples from a discrete distribution given by weights, through its cumulative sums.
class DiscreteSampler {
 public:
  DiscreteSampler() = default;
  explicit DiscreteSampler(const std::vector<double>& weights) {
    double acc = 0;
    cdf_.reserve(weights.size());
    for (double w : weights) cdf_.push_back(acc += w);
    if (cdf_.empty() || acc <= 0) throw Error(ErrorCode::InvalidArgument, "degenerate distribution");
  }
  std::size_t operator()(Rng& rng) const {
    double u = uniform01(rng) * cdf_.back();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }
  std::size_t size() const { return cdf_.size(); }

 private:
  std::vector<double> cdf_;
};

struct SkewCenter {
  Point center;
  double weight = 1;
  double sigma = 0.02;
};

enum class WorkloadKind { NormalTweets, SpatiallySkewed, TextuallySelective };

inline const char* to_string(WorkloadKind k) {
  switch (k) {
    case WorkloadKind::NormalTweets: return "normal";
    case WorkloadKind::SpatiallySkewed: return "skewed";
    case WorkloadKind::TextuallySelective: return "selective";
  }
  return "?";
}

inline WorkloadKind parse_workload_kind(const std::string& s) {
  if (s == "normal" || s == "tweets") return WorkloadKind::NormalTweets;
  if (s == "skewed") return WorkloadKind::SpatiallySkewed;
  if (s == "selective") return WorkloadKind::TextuallySelective;
  throw Error(ErrorCode::InvalidArgument, "unknown workload kind: " + s);
}

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::NormalTweets;
  std::uint64_t object_count = 0;
  std::uint64_t query_count = 0;
  std::size_t vocab_size = 10000;
  double zipf_s = 1.0;
  int query_keywords = 3;
  int object_keywords_max = 5;        // objects carry 1..max keywords
  double query_side = 0.001;
  std::vector<SkewCenter> skew_centers;
  double selectivity_percentile = 1.0;
  double contains_fraction = 0.0;     // share of CONTAINS queries
  Timestamp query_lifetime = 0;       // 0: queries never expire
  double scale_factor = 1.0;          // coordinates multiplied by this before emission
  int cities = 24;
  double background = 0.2;            // share of objects placed uniformly
  std::uint64_t seed = 1;

  void validate() const {
    if (!(query_side > 0 && query_side <= 1)) throw Error(ErrorCode::InvalidArgument, "query side outside (0,1]");
    if (selectivity_percentile < 0 || selectivity_percentile > 1)
      throw Error(ErrorCode::InvalidArgument, "percentile outside [0,1]");
    if (query_keywords < 1 || object_keywords_max < 1) throw Error(ErrorCode::InvalidArgument, "keyword counts must be positive");
    if (!(scale_factor > 0)) throw Error(ErrorCode::InvalidArgument, "scale factor must be positive");
  }
};

inline Point clamp_to_world(Point p) {
  auto clamp = [](double v) { return std::clamp(v, 0.0, std::nextafter(1.0, 0.0)); };
  return {clamp(p.x), clamp(p.y)};
}

inline Rect square_around(Point c, double side) {
  Rect r{c.x - side / 2, c.y - side / 2, c.x + side / 2, c.y + side / 2};
  return r.intersection(kUnitWorld);
}

// Deterministic object and query streams. Objects are drawn lazily so large runs need no storage.
class WorkloadGenerator {
 public:
  explicit WorkloadGenerator(WorkloadSpec spec)
      : spec_(std::move(spec)), vocab_(spec_.vocab_size, spec_.zipf_s),
        obj_rng_(spec_.seed * 2 + 1), query_rng_(spec_.seed * 2 + 2) {
    spec_.validate();
    std::vector<double> w(vocab_.object_ranks());
    for (std::size_t r = 0; r < w.size(); ++r) w[r] = vocab_.weight(r);
    object_words_ = DiscreteSampler(w);
    Rng city_rng(spec_.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<double> cw;
    for (int i = 0; i < spec_.cities; ++i) {
      SkewCenter c;
      c.center = {0.05 + 0.9 * uniform01(city_rng), 0.05 + 0.9 * uniform01(city_rng)};
      c.sigma = 0.01 + 0.04 * uniform01(city_rng);
      c.weight = 1.0 / (i + 1);
      cities_.push_back(c);
      cw.push_back(c.weight);
    }
    if (!cities_.empty()) city_pick_ = DiscreteSampler(cw);
    auto skew = spec_.skew_centers;
    if (skew.empty()) skew.push_back({{0.3, 0.3}, 1.0, 0.05});
    skew_ = skew;
    std::vector<double> sw;
    for (const auto& c : skew_) sw.push_back(c.weight);
    skew_pick_ = DiscreteSampler(sw);
    window_ = vocab_.percentile_window(spec_.selectivity_percentile);
  }

  const WorkloadSpec& spec() const { return spec_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const std::vector<std::size_t>& selective_window() const { return window_; }

  std::optional<SpatialKeywordObject> next_object() {
    if (objects_made_ >= spec_.object_count) return std::nullopt;
    SpatialKeywordObject o;
    o.oid = ++objects_made_;
    o.ts = static_cast<Timestamp>(objects_made_);
    o.loc = scaled(tweet_location(obj_rng_));
    int k = 1 + static_cast<int>(uniform_index(obj_rng_, static_cast<std::uint64_t>(spec_.object_keywords_max)));
    std::vector<std::string> words;
    for (int i = 0; i < k; ++i) words.push_back(vocab_.word(object_words_(obj_rng_)));
    o.text = KeywordSet(std::move(words));
    return o;
  }

  std::optional<ContinuousQuery> next_query() {
    if (queries_made_ >= spec_.query_count) return std::nullopt;
    ContinuousQuery q;
    q.qid = ++queries_made_;
    Point c = spec_.kind == WorkloadKind::SpatiallySkewed ? gaussian_mixture(query_rng_, skew_, skew_pick_)
                                                          : tweet_location(query_rng_);
    c = scaled(c);
    q.mbr = square_around(c, spec_.query_side * spec_.scale_factor);
    if (!q.mbr.valid()) q.mbr = square_around(clamp_to_world(c), spec_.query_side * spec_.scale_factor);
    std::vector<std::string> words;
    int want = spec_.query_keywords;
    for (int tries = 0; static_cast<int>(KeywordSet(words).size()) < want && tries < 64 * want; ++tries) {
      std::size_t rank = spec_.kind == WorkloadKind::TextuallySelective
                             ? window_[uniform_index(query_rng_, window_.size())]
                             : object_words_(query_rng_);
      words.push_back(vocab_.word(rank));
    }
    q.text = KeywordSet(std::move(words));
    q.predicate = uniform01(query_rng_) < spec_.contains_fraction ? Predicate::Contains : Predicate::Overlaps;
    q.expiry = spec_.query_lifetime > 0 ? static_cast<Timestamp>(objects_made_) + spec_.query_lifetime : kNever;
    return q;
  }

  std::vector<SpatialKeywordObject> objects() {
    std::vector<SpatialKeywordObject> out;
    while (auto o = next_object()) out.push_back(std::move(*o));
    return out;
  }

  std::vector<ContinuousQuery> queries() {
    std::vector<ContinuousQuery> out;
    while (auto q = next_query()) out.push_back(std::move(*q));
    return out;
  }

 private:
  Point scaled(Point p) const {
    if (spec_.scale_factor == 1.0) return p;
    return clamp_to_world({p.x * spec_.scale_factor, p.y * spec_.scale_factor});
  }

  Point tweet_location(Rng& rng) const {
    if (cities_.empty() || uniform01(rng) < spec_.background) return {uniform01(rng), uniform01(rng)};
    return gaussian_mixture(rng, cities_, city_pick_);
  }

  static Point gaussian_mixture(Rng& rng, const std::vector<SkewCenter>& centers, const DiscreteSampler& pick) {
    const SkewCenter& c = centers[pick(rng)];
    double x = c.center.x + c.sigma * normal01(rng);
    double y = c.center.y + c.sigma * normal01(rng);
    return clamp_to_world({x, y});
  }

  WorkloadSpec spec_;
  Vocabulary vocab_;
  DiscreteSampler object_words_;
  std::vector<SkewCenter> cities_;
  DiscreteSampler city_pick_;
  std::vector<SkewCenter> skew_;
  DiscreteSampler skew_pick_;
  std::vector<std::size_t> window_;
  Rng obj_rng_;
  Rng query_rng_;
  std::uint64_t objects_made_ = 0;
  std::uint64_t queries_made_ = 0;
};

// ---- tweet corpora ------------------------------------------------------------------------------

struct TweetRecord {
  std::uint64_t id = 0;
  double lat = 0;
  double lon = 0;
  KeywordSet text;
};

struct BoundingBox {
  double lat_min = 24.5;
  double lat_max = 49.5;
  double lon_min = -125.0;
  double lon_max = -66.9;

  Point normalize(double lat, double lon) const {
    return {(lon - lon_min) / (lon_max - lon_min), (lat - lat_min) / (lat_max - lat_min)};
  }
};

struct TweetCorpus {
  std::vector<TweetRecord> records;
  std::size_t skipped = 0;
};

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  if constexpr (std::is_floating_point_v<T>) {
    std::string tmp(s);
    char* end = nullptr;
    out = std::strtod(tmp.c_str(), &end);
    return end == tmp.c_str() + tmp.size() && std::isfinite(out);
  } else {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
  }
}

// Lines `id, lat, lon, text`; the text is the remainder of the line.
inline std::optional<TweetRecord> parse_tweet(std::string_view line) {
  TweetRecord t;
  std::string_view fields[3];
  for (auto& f : fields) {
    auto comma = line.find(',');
    if (comma == std::string_view::npos) return std::nullopt;
    f = line.substr(0, comma);
    line.remove_prefix(comma + 1);
  }
  if (!parse_number(fields[0], t.id) || !parse_number(fields[1], t.lat) || !parse_number(fields[2], t.lon))
    return std::nullopt;
  t.text = tokenize(line);
  return t;
}

inline TweetCorpus read_tweets(std::istream& in) {
  TweetCorpus c;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    if (auto t = parse_tweet(line)) c.records.push_back(std::move(*t));
    else ++c.skipped;
  }
  return c;
}

// Objects from a tweet file, restarting from the first record until `limit` objects are produced.
inline std::vector<SpatialKeywordObject> ingest_tweets(const std::string& path, std::size_t limit,
                                                       const BoundingBox& box = {}, std::size_t* skipped = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  TweetCorpus c = read_tweets(in);
  if (skipped) *skipped = c.skipped;
  if (c.records.empty()) throw Error(ErrorCode::EmptyCorpus, "no tweets in " + path);
  std::vector<SpatialKeywordObject> out;
  out.reserve(limit);
  for (std::size_t i = 0; i < limit; ++i) {
    const TweetRecord& t = c.records[i % c.records.size()];
    out.push_back({t.id, box.normalize(t.lat, t.lon), t.text, static_cast<Timestamp>(i + 1)});
  }
  return out;
}

// ---- traces -------------------------------------------------------------------------------------

inline std::string format_expiry(Timestamp t) { return t == kNever ? "never" : std::to_string(t); }

inline void write_trace_item(std::ostream& os, const TraceItem& item) {
  os.precision(17);
  if (const auto* o = std::get_if<SpatialKeywordObject>(&item)) {
    os << "D " << o->oid << ' ' << o->loc.x << ' ' << o->loc.y << ' ' << o->ts << ' ' << o->text.joined() << '\n';
    return;
  }
  const auto& q = std::get<ContinuousQuery>(item);
  os << "Q " << q.qid << ' ' << q.mbr.xmin << ' ' << q.mbr.ymin << ' ' << q.mbr.xmax << ' ' << q.mbr.ymax << ' '
     << to_string(q.predicate) << ' ' << format_expiry(q.expiry) << ' ' << q.text.joined() << '\n';
}

inline TraceItem parse_trace_line(const std::string& line) {
  std::istringstream ls(line);
  std::string tag;
  ls >> tag;
  auto fail = [&] { return Error(ErrorCode::Parse, "bad trace line: " + line); };
  if (tag == "D") {
    SpatialKeywordObject o;
    std::string kw;
    if (!(ls >> o.oid >> o.loc.x >> o.loc.y >> o.ts)) throw fail();
    ls >> kw;
    o.text = tokenize(kw, ',');
    return o;
  }
  if (tag == "Q") {
    ContinuousQuery q;
    std::string pred, expiry, kw;
    if (!(ls >> q.qid >> q.mbr.xmin >> q.mbr.ymin >> q.mbr.xmax >> q.mbr.ymax >> pred >> expiry)) throw fail();
    ls >> kw;
    if (pred == "OVERLAPS") q.predicate = Predicate::Overlaps;
    else if (pred == "CONTAINS") q.predicate = Predicate::Contains;
    else throw fail();
    if (expiry == "never" || expiry == "inf") q.expiry = kNever;
    else if (!parse_number(expiry, q.expiry)) throw fail();
    q.text = tokenize(kw, ',');
    if (!q.mbr.valid()) throw fail();
    return q;
  }
  throw fail();
}

inline std::vector<TraceItem> read_trace(std::istream& in) {
  std::vector<TraceItem> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty() || line[0] == '#') continue;
    out.push_back(parse_trace_line(line));
  }
  return out;
}

inline void write_results(std::ostream& os, const std::vector<MatchResult>& rs) {
  for (const auto& r : rs) os << r.qid << ' ' << r.oid << ' ' << r.ts << '\n';
}

}  // namespace skystream
