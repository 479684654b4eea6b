#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "framedag/graph.hpp"
#include "framedag/required_set.hpp"

namespace framedag {

/// How stencil and warmup reads beyond a slice or sequence edge are treated.
enum class BoundaryPolicy {
  clamp,   // repeat the nearest valid element
  strict,  // throw ValidationError
};

/// Points op `op` must read on each input slot to produce `downstream` on its
/// output. `in` and `out` are the input and output domains.
std::vector<RequiredSet> required_upstream(const OpDecl& op, const RequiredSet& downstream,
                                           const SequenceDomain& in, const SequenceDomain& out,
                                           BoundaryPolicy policy = BoundaryPolicy::clamp);

/// Points at which the op is invoked. Equal to `downstream` except for
/// bounded-state ops, which also run their warmup prefix.
RequiredSet invocation_set(const OpDecl& op, const RequiredSet& downstream,
                           const SequenceDomain& out);

/// Exact per-node requirements for one set of requested output points.
struct Requirements {
  /// Points of each node's sequence that some consumer reads or the job
  /// requests, indexed by NodeId.
  std::vector<RequiredSet> required;
  /// Points each node produces: the loaded set for sources and the
  /// invocation set for ops.
  std::vector<RequiredSet> computed;

  /// Invocations whose outputs exist only to warm up a bounded-state op.
  Index warmup_points(NodeId n) const { return computed[n].size() - required[n].size(); }
};

Requirements back_propagate(const Graph& graph, const std::vector<SequenceDomain>& domains,
                            const RequiredSet& requested,
                            BoundaryPolicy policy = BoundaryPolicy::clamp);

/// Packs `required` in order into dense batches of at most `batch` points.
std::vector<RequiredSet> coalesce_batches(const RequiredSet& required, Index batch);

/// Per-job analysis cache. Each work packet is analysed the first time it is
/// requested and the result is shared with any retry of the same packet.
class DependencyAnalyzer {
 public:
  DependencyAnalyzer(const Graph& graph, std::vector<SequenceDomain> domains,
                     BoundaryPolicy policy = BoundaryPolicy::clamp);

  const std::vector<SequenceDomain>& domains() const { return domains_; }

  std::shared_ptr<const Requirements> analyze(std::size_t packet_index,
                                              const RequiredSet& outputs);
  std::size_t cached() const;

 private:
  const Graph& graph_;
  std::vector<SequenceDomain> domains_;
  BoundaryPolicy policy_;
  mutable std::mutex mu_;
  std::map<std::size_t, std::shared_ptr<const Requirements>> memo_;
};

}  // namespace framedag
