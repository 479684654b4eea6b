#include "framedag/required_set.hpp"

#include <algorithm>
#include <charconv>
#include <ostream>
#include <sstream>

#include "framedag/error.hpp"

namespace framedag {

RequiredSet RequiredSet::all(Index length) { return from_interval(0, length); }

RequiredSet RequiredSet::from_interval(Index start, Index end) {
  RequiredSet s;
  if (end > start) s.intervals_.push_back({start, end});
  s.recount();
  return s;
}

RequiredSet RequiredSet::from_points(std::vector<Index> points) {
  std::sort(points.begin(), points.end());
  RequiredSetBuilder b;
  for (Index p : points) b.add(p);
  return b.build();
}

RequiredSet RequiredSet::from_intervals(std::vector<Interval> intervals) {
  std::sort(intervals.begin(), intervals.end(),
            [](const Interval& a, const Interval& b) { return a.start < b.start; });
  RequiredSetBuilder b;
  for (const auto& iv : intervals) b.add(iv.start, iv.end);
  return b.build();
}

void RequiredSet::recount() {
  prefix_.resize(intervals_.size());
  Index total = 0;
  for (std::size_t k = 0; k < intervals_.size(); ++k) {
    prefix_[k] = total;
    total += intervals_[k].size();
  }
  size_ = total;
}

bool RequiredSet::contains(Index p) const { return rank(p) >= 0; }

Index RequiredSet::rank(Index p) const {
  auto it = std::upper_bound(intervals_.begin(), intervals_.end(), p,
                             [](Index v, const Interval& iv) { return v < iv.start; });
  if (it == intervals_.begin()) return -1;
  --it;
  if (!it->contains(p)) return -1;
  const auto k = static_cast<std::size_t>(it - intervals_.begin());
  return prefix_[k] + (p - it->start);
}

Index RequiredSet::at(Index k) const {
  auto it = std::upper_bound(prefix_.begin(), prefix_.end(), k);
  const auto idx = static_cast<std::size_t>(it - prefix_.begin()) - 1;
  return intervals_[idx].start + (k - prefix_[idx]);
}

std::vector<Index> RequiredSet::points() const {
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(size_));
  for_each([&](Index p) { out.push_back(p); });
  return out;
}

RequiredSet RequiredSet::unite(const RequiredSet& other) const {
  RequiredSetBuilder b;
  auto a = intervals_.begin();
  auto c = other.intervals_.begin();
  while (a != intervals_.end() || c != other.intervals_.end()) {
    if (c == other.intervals_.end() || (a != intervals_.end() && a->start <= c->start)) {
      b.add(a->start, a->end);
      ++a;
    } else {
      b.add(c->start, c->end);
      ++c;
    }
  }
  return b.build();
}

RequiredSet RequiredSet::intersect(const RequiredSet& other) const {
  RequiredSetBuilder b;
  auto a = intervals_.begin();
  auto c = other.intervals_.begin();
  while (a != intervals_.end() && c != other.intervals_.end()) {
    const Index lo = std::max(a->start, c->start);
    const Index hi = std::min(a->end, c->end);
    if (lo < hi) b.add(lo, hi);
    if (a->end < c->end) ++a; else ++c;
  }
  return b.build();
}

RequiredSet RequiredSet::intersect(Interval range) const {
  return intersect(from_interval(range.start, range.end));
}

RequiredSet RequiredSet::subtract(const RequiredSet& other) const {
  RequiredSetBuilder b;
  auto c = other.intervals_.begin();
  for (const auto& iv : intervals_) {
    Index cursor = iv.start;
    while (c != other.intervals_.end() && c->end <= cursor) ++c;
    auto d = c;
    while (d != other.intervals_.end() && d->start < iv.end) {
      if (d->start > cursor) b.add(cursor, d->start);
      cursor = std::max(cursor, d->end);
      ++d;
    }
    if (cursor < iv.end) b.add(cursor, iv.end);
  }
  return b.build();
}

RequiredSet RequiredSet::translate(Index delta) const {
  RequiredSet s = *this;
  for (auto& iv : s.intervals_) {
    iv.start += delta;
    iv.end += delta;
  }
  return s;
}

RequiredSet RequiredSet::slice_by_rank(Index first, Index count) const {
  RequiredSetBuilder b;
  if (count <= 0 || first >= size_) return b.build();
  const Index last = std::min(size_, first + count);  // exclusive rank
  for (std::size_t k = 0; k < intervals_.size(); ++k) {
    const Index lo_rank = prefix_[k];
    const Index hi_rank = lo_rank + intervals_[k].size();
    if (hi_rank <= first) continue;
    if (lo_rank >= last) break;
    const Index from = std::max(first, lo_rank) - lo_rank;
    const Index to = std::min(last, hi_rank) - lo_rank;
    b.add(intervals_[k].start + from, intervals_[k].start + to);
  }
  return b.build();
}

bool RequiredSet::is_subset_of(const RequiredSet& other) const {
  return subtract(other).empty();
}

std::string RequiredSet::to_string() const {
  if (intervals_.empty()) return "{}";
  std::ostringstream os;
  bool first = true;
  for (const auto& iv : intervals_) {
    if (!first) os << ' ';
    first = false;
    os << '[' << iv.start << ',' << iv.end << ')';
  }
  return os.str();
}

RequiredSet RequiredSet::parse(std::string_view text) {
  std::vector<Interval> ivs;
  std::size_t pos = 0;
  auto fail = [&] {
    throw ValidationError("malformed interval list: '" + std::string(text) + "'");
  };
  auto skip_ws = [&] {
    while (pos < text.size() && text[pos] == ' ') ++pos;
  };
  auto number = [&] {
    Index v = 0;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), v);
    if (ec != std::errc{}) fail();
    pos = static_cast<std::size_t>(ptr - text.data());
    return v;
  };
  skip_ws();
  if (text.substr(pos) == "{}") return {};
  while (pos < text.size()) {
    if (text[pos] != '[') fail();
    ++pos;
    const Index a = number();
    if (pos >= text.size() || text[pos] != ',') fail();
    ++pos;
    const Index b = number();
    if (pos >= text.size() || text[pos] != ')') fail();
    ++pos;
    if (b <= a) fail();
    ivs.push_back({a, b});
    skip_ws();
  }
  return from_intervals(std::move(ivs));
}

std::ostream& operator<<(std::ostream& os, const RequiredSet& s) { return os << s.to_string(); }

void RequiredSetBuilder::add(Index start, Index end) {
  if (end <= start) return;
  if (!runs_.empty()) {
    auto& last = runs_.back();
    if (start < last.start) {
      sorted_ = false;
    } else if (start <= last.end) {
      last.end = std::max(last.end, end);
      return;
    }
  }
  runs_.push_back({start, end});
}

void RequiredSetBuilder::add(const RequiredSet& s) {
  for (const auto& iv : s.intervals()) add(iv.start, iv.end);
}

RequiredSet RequiredSetBuilder::build() {
  if (!sorted_) {
    std::sort(runs_.begin(), runs_.end(),
              [](const Interval& a, const Interval& b) { return a.start < b.start; });
    std::vector<Interval> merged;
    for (const auto& iv : runs_) {
      if (!merged.empty() && iv.start <= merged.back().end)
        merged.back().end = std::max(merged.back().end, iv.end);
      else
        merged.push_back(iv);
    }
    runs_ = std::move(merged);
  }
  RequiredSet s;
  s.intervals_ = std::move(runs_);
  s.recount();
  runs_.clear();
  sorted_ = true;
  return s;
}

}  // namespace framedag
