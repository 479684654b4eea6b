#include "framedag/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>

#include "framedag/error.hpp"

namespace framedag {

const std::vector<std::string>& bench_patterns() {
  static const std::vector<std::string> names{"stride-1", "stride-24", "gather", "range", "keyframes"};
  return names;
}

RequiredSet access_pattern(const std::string& pattern, const FrameColumn& column, std::uint64_t seed) {
  const Index n = column.frame_count;
  RequiredSetBuilder b;
  if (pattern.rfind("stride-", 0) == 0) {
    Index stride = 0;
    try {
      stride = std::stoll(pattern.substr(7));
    } catch (const std::exception&) {
    }
    if (stride < 1) throw ValidationError("bad stride in pattern '" + pattern + "'");
    for (Index p = 0; p < n; p += stride) b.add(p);
  } else if (pattern == "gather") {
    const Index count = std::max<Index>(1, n / 400);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> pick(0, n - 1);
    std::vector<Index> pts;
    pts.reserve(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) pts.push_back(pick(rng));
    return RequiredSet::from_points(std::move(pts));
  } else if (pattern == "range") {
    for (Index s = 0; s < n; s += 20000) b.add(s, std::min(n, s + 2000));
  } else if (pattern == "keyframes") {
    for (const auto& e : column.index.entries()) b.add(e.frame);
  } else {
    throw ValidationError("unknown access pattern '" + pattern + "'");
  }
  return b.build();
}

BenchResult bench_access(const FrameColumn& column, const std::string& pattern, std::uint64_t seed) {
  const RequiredSet required = access_pattern(pattern, column, seed);
  const auto t0 = std::chrono::steady_clock::now();
  const DecodePlan plan = plan_decode(column, required);
  std::uint64_t checksum = 0;
  const DecodeCounters c = read_decode(column, plan, [&](Index, ByteView payload) {
    checksum += payload.empty() ? 0 : payload[0];
  });
  const auto t1 = std::chrono::steady_clock::now();
  (void)checksum;
  BenchResult r;
  r.pattern = pattern;
  r.keyframe_interval = column.keyframe_interval;
  r.frames_decoded = c.frames_decoded;
  r.frames_emitted = c.frames_emitted;
  r.bytes_read = c.bytes_read;
  r.ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  return r;
}

std::string bench_csv_header() { return "pattern,K,frames_decoded,frames_emitted,bytes_read,ms"; }

std::string to_csv(const BenchResult& r) {
  char ms[32];
  std::snprintf(ms, sizeof ms, "%.3f", r.ms);
  return r.pattern + "," + std::to_string(r.keyframe_interval) + "," + std::to_string(r.frames_decoded) +
         "," + std::to_string(r.frames_emitted) + "," + std::to_string(r.bytes_read) + "," + ms;
}

}  // namespace framedag
