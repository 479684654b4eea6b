#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "framedag/framestore.hpp"

namespace framedag {

/// Access patterns over a frame column:
///   stride-1, stride-24   every n-th frame
///   gather                0.25% of frames, uniformly at random (seeded)
///   range                 2000-frame blocks at the start of every 20000
///   keyframes             only the keyframes
const std::vector<std::string>& bench_patterns();

/// Frames the pattern reads. Throws ValidationError for an unknown name.
RequiredSet access_pattern(const std::string& pattern, const FrameColumn& column,
                           std::uint64_t seed = 1);

struct BenchResult {
  std::string pattern;
  Index keyframe_interval = 0;
  Index frames_decoded = 0;
  Index frames_emitted = 0;
  std::uint64_t bytes_read = 0;
  double ms = 0;
};

/// Plans and decodes the pattern with a fresh decoder.
BenchResult bench_access(const FrameColumn& column, const std::string& pattern,
                         std::uint64_t seed = 1);

std::string bench_csv_header();  // pattern,K,frames_decoded,frames_emitted,bytes_read,ms
std::string to_csv(const BenchResult& r);

}  // namespace framedag
