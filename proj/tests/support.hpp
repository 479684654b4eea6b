#pragma once

// Test-only oracles and generators. Nothing here calls the dependency
// analysis or the executor; the oracles work point by point over dense
// sequences so they can be compared against the sparse engine.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "framedag/element.hpp"
#include "framedag/framestore.hpp"
#include "framedag/graph.hpp"
#include "framedag/jobspec.hpp"
#include "framedag/kernels.hpp"

namespace framedag::test {

using Rng = std::mt19937_64;

inline Index uniform(Rng& rng, Index lo, Index hi) {  // inclusive
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}
inline bool coin(Rng& rng, double p = 0.5) { return std::bernoulli_distribution(p)(rng); }

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// 8-byte FNV-1a over every field's length and bytes, in field order.
Bytes mix_fields(const std::vector<ByteView>& fields);

/// Adds "mix" (any field count, stateless) and "flaky" (fails while a shared
/// countdown is positive, then behaves like mix).
void add_test_kernels(KernelRegistry& registry, std::atomic<int>* flaky_failures = nullptr);
KernelRegistry test_registry(std::atomic<int>* flaky_failures = nullptr);

// ---------------------------------------------------------------------------
// Dense reference semantics.

/// Selected dense points of a strategy over a domain of `length`, by enumeration.
std::vector<Index> enumerate_selected(const SamplingStrategy& s, Index length);

struct DenseDomain {
  Index length = 0;
  std::vector<Index> boundaries;  // strictly inside (0, length), sorted
  Interval slice_of(Index p) const;
};

/// Per-node domains, derived independently of infer_domains.
std::vector<DenseDomain> dense_domains(const GraphSpec& spec, const std::vector<Index>& source_lengths);

/// Evaluates every node at every point. Nodes are numbered sources first.
/// Kernel ops are run one element per invocation with a fresh kernel per
/// slice for bounded-state ops.
std::vector<std::vector<Element>> dense_eval(const GraphSpec& spec, const KernelRegistry& registry,
                                             const std::vector<std::vector<Element>>& sources);

/// Point-level dependency closure of `requested` on every graph output.
/// Returns, per node, the points computed (invocations for bounded-state ops).
std::vector<std::set<Index>> closure(const GraphSpec& spec, const std::vector<DenseDomain>& domains,
                                     const std::vector<Index>& requested);

/// True when every requested point and every dependency of every member is
/// itself a member.
bool is_closed(const GraphSpec& spec, const std::vector<DenseDomain>& domains,
               const std::vector<Index>& requested, const std::vector<std::set<Index>>& sets);

// ---------------------------------------------------------------------------
// Generators.

struct RandomGraph {
  GraphSpec spec;
  std::vector<Index> source_lengths;
};

/// Up to `max_ops` ops drawn from map, sample, space, stencil, slice and
/// unslice, with every sequence at most `max_len` long. Kernel ops use "mix".
RandomGraph random_stateless_graph(Rng& rng, int max_ops = 6, Index max_len = 200);

std::vector<Element> random_elements(Rng& rng, Index n, std::size_t min_size = 1, std::size_t max_size = 8);

/// A random sorted subset of [0, n): everything, runs, or scattered points.
std::vector<Index> random_points(Rng& rng, Index n);

/// Frames that change a few bytes at a time, so delta records stay small.
std::vector<Bytes> low_entropy_frames(Rng& rng, Index n, std::size_t frame_size, int changes = 2);

/// Writes each sequence as a one-column blob table named "<prefix><i>" with column "v".
void write_blob_table(const TableStore& store, const std::string& table, const std::vector<Element>& values);
std::vector<Element> read_blob_table(const TableStore& store, const std::string& table, const std::string& column);

/// Raw bytes of every file in a table directory, keyed by file name.
std::map<std::string, Bytes> table_files(const TableStore& store, const std::string& table);

}  // namespace framedag::test
