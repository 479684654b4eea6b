#include "framedag/depanalysis.hpp"

#include <algorithm>
#include <string>

#include "framedag/error.hpp"

namespace framedag {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Calls f(piece, slice) for every part of `set` split at slice boundaries.
template <typename F>
void for_each_slice_piece(const RequiredSet& set, const SequenceDomain& dom, F&& f) {
  for (const auto& iv : set.intervals()) {
    Index a = iv.start;
    while (a < iv.end) {
      const Interval slice = dom.slice_of(a);
      const Index b = std::min(iv.end, slice.end);
      f(Interval{a, b}, slice);
      a = b;
    }
  }
}

RequiredSet stencil_upstream(const std::vector<Index>& offsets, const RequiredSet& down,
                             const SequenceDomain& dom, BoundaryPolicy policy,
                             const std::string& name) {
  RequiredSetBuilder b;
  for_each_slice_piece(down, dom, [&](Interval piece, Interval slice) {
    for (Index o : offsets) {
      Index lo = piece.start + o;
      Index hi = piece.end - 1 + o;
      if (policy == BoundaryPolicy::strict && (lo < slice.start || hi >= slice.end))
        throw ValidationError("op '" + name + "': stencil offset " + std::to_string(o) +
                              " leaves slice [" + std::to_string(slice.start) + "," +
                              std::to_string(slice.end) + ")");
      lo = std::clamp(lo, slice.start, slice.end - 1);
      hi = std::clamp(hi, slice.start, slice.end - 1);
      b.add(lo, hi + 1);
    }
  });
  return b.build();
}

RequiredSet warmup_expand(const ops::BoundedState& bs, const RequiredSet& down,
                          const SequenceDomain& dom) {
  RequiredSetBuilder b;
  for_each_slice_piece(down, dom, [&](Interval piece, Interval slice) {
    const Index lo = bs.infinite() ? slice.start : std::max(slice.start, piece.start - bs.warmup);
    b.add(lo, piece.end);
  });
  return b.build();
}

}  // namespace

RequiredSet invocation_set(const OpDecl& op, const RequiredSet& downstream,
                           const SequenceDomain& out) {
  if (const auto* bs = std::get_if<ops::BoundedState>(&op.kind))
    return warmup_expand(*bs, downstream, out);
  return downstream;
}

std::vector<RequiredSet> required_upstream(const OpDecl& op, const RequiredSet& downstream,
                                           const SequenceDomain& in, const SequenceDomain& out,
                                           BoundaryPolicy policy) {
  RequiredSet up = std::visit(
      overloaded{
          [&](const ops::Sample& s) {
            RequiredSetBuilder b;
            const bool contiguous = is_contiguous(s.strategy);
            for (const auto& iv : downstream.intervals()) {
              if (contiguous) {
                b.add(selected_point(s.strategy, iv.start),
                      selected_point(s.strategy, iv.end - 1) + 1);
              } else {
                for (Index j = iv.start; j < iv.end; ++j) b.add(selected_point(s.strategy, j));
              }
            }
            return b.build();
          },
          [&](const ops::Space& s) {
            // Selected ranks whose dense point is requested; fill points need nothing.
            RequiredSetBuilder b;
            for (const auto& iv : downstream.intervals())
              b.add(first_rank_at_or_after(s.strategy, out.length, iv.start),
                    first_rank_at_or_after(s.strategy, out.length, iv.end));
            return b.build();
          },
          [&](const ops::Stencil& s) {
            return stencil_upstream(s.offsets, downstream, out, policy, op.name);
          },
          [&](const ops::BoundedState& bs) { return warmup_expand(bs, downstream, out); },
          [&](const auto&) { return downstream; },
      },
      op.kind);
  (void)in;
  return std::vector<RequiredSet>(op.arity, up);
}

Requirements back_propagate(const Graph& graph, const std::vector<SequenceDomain>& domains,
                            const RequiredSet& requested, BoundaryPolicy policy) {
  Requirements r;
  r.required.resize(graph.node_count());
  r.computed.resize(graph.node_count());
  for (NodeId n : graph.output_nodes()) r.required[n] = r.required[n].unite(requested);

  const auto& topo = graph.topo_order();
  // Every consumer of a node comes later in topological order, so by the time
  // an op is visited its required set is final.
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const std::size_t i = *it;
    const NodeId self = graph.op_node(i);
    const OpDecl& op = graph.op(i);
    r.computed[self] = invocation_set(op, r.required[self], domains[self]);
    if (r.required[self].empty()) continue;
    const auto& inputs = graph.inputs(i);
    auto ups = required_upstream(op, r.required[self], domains[inputs.front()], domains[self],
                                 policy);
    for (std::size_t slot = 0; slot < inputs.size(); ++slot)
      r.required[inputs[slot]] = r.required[inputs[slot]].unite(ups[slot]);
  }
  for (std::size_t s = 0; s < graph.source_count(); ++s) r.computed[s] = r.required[s];
  return r;
}

std::vector<RequiredSet> coalesce_batches(const RequiredSet& required, Index batch) {
  if (batch < 1) throw ValidationError("batch size must be >= 1");
  std::vector<RequiredSet> out;
  for (Index first = 0; first < required.size(); first += batch)
    out.push_back(required.slice_by_rank(first, batch));
  return out;
}

DependencyAnalyzer::DependencyAnalyzer(const Graph& graph, std::vector<SequenceDomain> domains,
                                       BoundaryPolicy policy)
    : graph_(graph), domains_(std::move(domains)), policy_(policy) {}

std::shared_ptr<const Requirements> DependencyAnalyzer::analyze(std::size_t packet_index,
                                                                const RequiredSet& outputs) {
  {
    std::lock_guard lock(mu_);
    if (auto it = memo_.find(packet_index); it != memo_.end()) return it->second;
  }
  auto result = std::make_shared<const Requirements>(
      back_propagate(graph_, domains_, outputs, policy_));
  std::lock_guard lock(mu_);
  return memo_.emplace(packet_index, std::move(result)).first->second;
}

std::size_t DependencyAnalyzer::cached() const {
  std::lock_guard lock(mu_);
  return memo_.size();
}

}  // namespace framedag
