#pragma once

#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace framedag {

/// Position of an element inside a sequence domain [0, N).
using Index = std::int64_t;

/// Half-open interval [start, end) of sequence points.
struct Interval {
  Index start = 0;
  Index end = 0;

  Index size() const { return end - start; }
  bool contains(Index p) const { return p >= start && p < end; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Exact set of sequence points, run-length encoded as sorted disjoint
/// non-empty intervals. Adjacent intervals are always merged, so two equal
/// sets have identical interval lists.
class RequiredSet {
 public:
  RequiredSet() = default;

  static RequiredSet all(Index length);
  static RequiredSet from_points(std::vector<Index> points);
  static RequiredSet from_intervals(std::vector<Interval> intervals);
  static RequiredSet single(Index point) { return from_interval(point, point + 1); }
  static RequiredSet from_interval(Index start, Index end);

  const std::vector<Interval>& intervals() const { return intervals_; }
  bool empty() const { return intervals_.empty(); }
  Index size() const { return size_; }
  Index front() const { return intervals_.front().start; }
  Index back() const { return intervals_.back().end - 1; }

  bool contains(Index p) const;
  /// Position of `p` among the members in increasing order, or -1 if absent.
  Index rank(Index p) const;
  /// Member at position `k` in increasing order.
  Index at(Index k) const;

  std::vector<Index> points() const;

  template <typename F>
  void for_each(F&& f) const {
    for (const auto& iv : intervals_)
      for (Index p = iv.start; p < iv.end; ++p) f(p);
  }

  RequiredSet unite(const RequiredSet& other) const;
  RequiredSet intersect(const RequiredSet& other) const;
  RequiredSet subtract(const RequiredSet& other) const;
  RequiredSet intersect(Interval range) const;
  RequiredSet translate(Index delta) const;

  /// Members number [first, first + count) in increasing order.
  RequiredSet slice_by_rank(Index first, Index count) const;

  bool is_subset_of(const RequiredSet& other) const;

  /// "[0,5) [7,8)"; the empty set prints as "{}".
  std::string to_string() const;
  static RequiredSet parse(std::string_view text);

  friend bool operator==(const RequiredSet& a, const RequiredSet& b) {
    return a.intervals_ == b.intervals_;
  }

 private:
  void recount();

  std::vector<Interval> intervals_;
  std::vector<Index> prefix_;  // members before intervals_[k]
  Index size_ = 0;

  friend class RequiredSetBuilder;
};

/// Accumulates points or intervals in non-decreasing start order and merges
/// overlapping or adjacent runs. Out-of-order input falls back to a full
/// normalisation in build().
class RequiredSetBuilder {
 public:
  void add(Index p) { add(p, p + 1); }
  void add(Index start, Index end);
  void add(const RequiredSet& s);
  RequiredSet build();

 private:
  std::vector<Interval> runs_;
  bool sorted_ = true;
};

std::ostream& operator<<(std::ostream& os, const RequiredSet& s);

}  // namespace framedag
