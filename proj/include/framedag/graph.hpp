#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "framedag/required_set.hpp"

namespace framedag {

// ---------------------------------------------------------------------------
// Sampling strategies. A strategy selects an ordered subset of a dense domain;
// Sample keeps the selected points, Space re-inserts fill at the others.

struct StrideStrategy {
  Index stride = 1;
};

struct RangeStrategy {
  Index start = 0;
  Index end = 0;
  Index step = 1;
};

/// Explicit selection; indices must be strictly increasing.
struct GatherStrategy {
  std::vector<Index> indices;
};

using SamplingStrategy = std::variant<StrideStrategy, RangeStrategy, GatherStrategy>;

/// Number of points the strategy selects from a dense domain of `dense_length`.
Index selected_count(const SamplingStrategy& s, Index dense_length);
/// Dense index of the `rank`-th selected point.
Index selected_point(const SamplingStrategy& s, Index rank);
/// Rank of the first selected point >= `dense_point`, or selected_count if none.
Index first_rank_at_or_after(const SamplingStrategy& s, Index dense_length, Index dense_point);
/// True when consecutive ranks map to consecutive dense points.
bool is_contiguous(const SamplingStrategy& s);
std::string describe(const SamplingStrategy& s);

// ---------------------------------------------------------------------------
// Operation kinds.

inline constexpr Index kInfiniteWarmup = -1;

struct FixedIntervalPartitioner {
  Index interval = 1;
};
struct BoundaryListPartitioner {
  std::vector<Index> starts;
};
using Partitioner = std::variant<FixedIntervalPartitioner, BoundaryListPartitioner>;

namespace ops {
struct Map {};
struct Sample {
  SamplingStrategy strategy;
};
struct Space {
  SamplingStrategy strategy;
  /// Dense output length. Defaults: stride -> input*stride, range -> end,
  /// gather -> last index + 1.
  std::optional<Index> length;
};
struct Stencil {
  std::vector<Index> offsets;
};
struct BoundedState {
  Index warmup = 0;  // kInfiniteWarmup for fully serial operations
  bool infinite() const { return warmup == kInfiniteWarmup; }
};
struct Slice {
  Partitioner partitioner;
};
struct Unslice {};
}  // namespace ops

using OpKind = std::variant<ops::Map, ops::Sample, ops::Space, ops::Stencil, ops::BoundedState,
                            ops::Slice, ops::Unslice>;

std::string kind_name(const OpKind& kind);
/// Sample, Space, Slice and Unslice run inside the engine and carry no kernel.
bool is_system_op(const OpKind& kind);

struct OpDecl {
  std::string name;
  OpKind kind = ops::Map{};
  std::string kernel;        // registry id; empty for system ops
  nlohmann::json args = nlohmann::json::object();
  int cpu_cores = 1;
  Index batch = 1;           // max elements per kernel invocation
  std::size_t arity = 1;
  std::optional<std::size_t> element_size;  // fixed output payload size, if declared
  bool variable_length = false;  // requests a data-dependent length change (rejected)
};

// ---------------------------------------------------------------------------
// Graph topology.

struct NodeRef {
  enum class Kind { source, op };
  Kind kind = Kind::source;
  std::size_t index = 0;

  static NodeRef source(std::size_t i) { return {Kind::source, i}; }
  static NodeRef op(std::size_t i) { return {Kind::op, i}; }
  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

struct Edge {
  NodeRef from;
  std::size_t to_op = 0;
  std::size_t slot = 0;
};

struct OutputBinding {
  std::string column;
  NodeRef from;
};

struct GraphSpec {
  std::vector<std::string> sources;
  std::vector<OpDecl> ops;
  std::vector<Edge> edges;
  std::vector<OutputBinding> outputs;
};

enum class ViolationKind {
  cycle,
  unbound_input,
  duplicate_binding,
  arity_mismatch,
  unknown_node,
  unreachable,
  no_outputs,
  invalid_op,
  data_dependent_length,
  unknown_kernel,
};

std::string to_string(ViolationKind k);

struct Violation {
  ViolationKind kind;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  bool has(ViolationKind k) const;
  std::string to_string() const;
};

ValidationReport validate_graph(const GraphSpec& graph);

/// Node ids number sources first, then ops: node = source index, or
/// sources.size() + op index.
using NodeId = std::size_t;

/// A validated graph with resolved adjacency and a topological op order.
class Graph {
 public:
  /// Throws ValidationError carrying the report when `spec` is invalid.
  explicit Graph(GraphSpec spec);

  const GraphSpec& spec() const { return spec_; }
  std::size_t source_count() const { return spec_.sources.size(); }
  std::size_t op_count() const { return spec_.ops.size(); }
  std::size_t node_count() const { return source_count() + op_count(); }

  NodeId node(NodeRef ref) const;
  NodeId op_node(std::size_t op) const { return source_count() + op; }
  bool is_source(NodeId n) const { return n < source_count(); }
  std::size_t op_index(NodeId n) const { return n - source_count(); }
  const OpDecl& op(std::size_t i) const { return spec_.ops[i]; }
  std::string node_name(NodeId n) const;

  /// Producers of op `i`, in slot order.
  const std::vector<NodeId>& inputs(std::size_t op) const { return inputs_[op]; }
  const std::vector<std::size_t>& topo_order() const { return topo_; }
  const std::vector<NodeId>& output_nodes() const { return output_nodes_; }

 private:
  GraphSpec spec_;
  std::vector<std::vector<NodeId>> inputs_;
  std::vector<std::size_t> topo_;
  std::vector<NodeId> output_nodes_;
};

// ---------------------------------------------------------------------------
// Sequence domains.

struct SequenceDomain {
  Index length = 0;
  /// Slice start indices; empty means the whole domain is a single slice.
  std::vector<Index> slice_boundaries;

  /// The slice [start, end) enclosing point `p`.
  Interval slice_of(Index p) const;
  friend bool operator==(const SequenceDomain&, const SequenceDomain&) = default;
};

/// Per-node domains, indexed by NodeId. `source_lengths` is indexed by source.
/// Throws ValidationError on unequal multi-input lengths, out-of-range gather
/// indices, Space length mismatches, and outputs of differing lengths.
std::vector<SequenceDomain> infer_domains(const Graph& graph,
                                          const std::vector<Index>& source_lengths);

/// Output domain shared by every graph output.
inline const SequenceDomain& output_domain(const Graph& graph,
                                           const std::vector<SequenceDomain>& domains) {
  return domains[graph.output_nodes().front()];
}

}  // namespace framedag
