#include "framedag/graph.hpp"

#include <algorithm>
#include <queue>
#include <set>
#include <sstream>

#include "framedag/error.hpp"

namespace framedag {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Index ceil_div(Index a, Index b) { return (a + b - 1) / b; }

}  // namespace

Index selected_count(const SamplingStrategy& s, Index n) {
  return std::visit(
      overloaded{
          [&](const StrideStrategy& st) { return n <= 0 ? Index{0} : ceil_div(n, st.stride); },
          [&](const RangeStrategy& r) {
            const Index end = std::min(r.end, n);
            return r.start >= end ? Index{0} : ceil_div(end - r.start, r.step);
          },
          [&](const GatherStrategy& g) {
            // Indices are strictly increasing; count those inside the domain.
            return static_cast<Index>(
                std::lower_bound(g.indices.begin(), g.indices.end(), n) - g.indices.begin());
          },
      },
      s);
}

Index selected_point(const SamplingStrategy& s, Index rank) {
  return std::visit(overloaded{
                        [&](const StrideStrategy& st) { return rank * st.stride; },
                        [&](const RangeStrategy& r) { return r.start + rank * r.step; },
                        [&](const GatherStrategy& g) {
                          return g.indices[static_cast<std::size_t>(rank)];
                        },
                    },
                    s);
}

Index first_rank_at_or_after(const SamplingStrategy& s, Index n, Index p) {
  const Index count = selected_count(s, n);
  const Index r = std::visit(
      overloaded{
          [&](const StrideStrategy& st) { return p <= 0 ? Index{0} : ceil_div(p, st.stride); },
          [&](const RangeStrategy& r) {
            return p <= r.start ? Index{0} : ceil_div(p - r.start, r.step);
          },
          [&](const GatherStrategy& g) {
            return static_cast<Index>(
                std::lower_bound(g.indices.begin(), g.indices.end(), p) - g.indices.begin());
          },
      },
      s);
  return std::min(r, count);
}

bool is_contiguous(const SamplingStrategy& s) {
  return std::visit(overloaded{
                        [](const StrideStrategy& st) { return st.stride == 1; },
                        [](const RangeStrategy& r) { return r.step == 1; },
                        [](const GatherStrategy&) { return false; },
                    },
                    s);
}

std::string describe(const SamplingStrategy& s) {
  std::ostringstream os;
  std::visit(overloaded{
                 [&](const StrideStrategy& st) { os << "stride(" << st.stride << ")"; },
                 [&](const RangeStrategy& r) {
                   os << "range(" << r.start << "," << r.end << "," << r.step << ")";
                 },
                 [&](const GatherStrategy& g) { os << "gather(" << g.indices.size() << " points)"; },
             },
             s);
  return os.str();
}

std::string kind_name(const OpKind& kind) {
  return std::visit(overloaded{
                        [](const ops::Map&) { return std::string("map"); },
                        [](const ops::Sample&) { return std::string("sample"); },
                        [](const ops::Space&) { return std::string("space"); },
                        [](const ops::Stencil&) { return std::string("stencil"); },
                        [](const ops::BoundedState&) { return std::string("bounded_state"); },
                        [](const ops::Slice&) { return std::string("slice"); },
                        [](const ops::Unslice&) { return std::string("unslice"); },
                    },
                    kind);
}

bool is_system_op(const OpKind& kind) {
  return std::holds_alternative<ops::Sample>(kind) || std::holds_alternative<ops::Space>(kind) ||
         std::holds_alternative<ops::Slice>(kind) || std::holds_alternative<ops::Unslice>(kind);
}

std::string to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::cycle: return "cycle";
    case ViolationKind::unbound_input: return "unbound input slot";
    case ViolationKind::duplicate_binding: return "duplicate binding";
    case ViolationKind::arity_mismatch: return "arity mismatch";
    case ViolationKind::unknown_node: return "unknown node";
    case ViolationKind::unreachable: return "unreachable";
    case ViolationKind::no_outputs: return "no outputs";
    case ViolationKind::invalid_op: return "invalid op";
    case ViolationKind::data_dependent_length: return "data-dependent length change";
    case ViolationKind::unknown_kernel: return "unknown kernel";
  }
  return "?";
}

bool ValidationReport::has(ViolationKind k) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.kind == k; });
}

std::string ValidationReport::to_string() const {
  if (ok()) return "ok";
  std::ostringstream os;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) os << "; ";
    os << framedag::to_string(violations[i].kind) << ": " << violations[i].message;
  }
  return os.str();
}

namespace {

bool valid_strategy(const SamplingStrategy& s, std::string& why) {
  return std::visit(
      overloaded{
          [&](const StrideStrategy& st) {
            if (st.stride < 1) why = "stride must be >= 1";
            return st.stride >= 1;
          },
          [&](const RangeStrategy& r) {
            if (r.step < 1 || r.start < 0 || r.end < r.start) {
              why = "range needs 0 <= start <= end and step >= 1";
              return false;
            }
            return true;
          },
          [&](const GatherStrategy& g) {
            for (std::size_t i = 0; i < g.indices.size(); ++i) {
              if (g.indices[i] < 0 || (i > 0 && g.indices[i] <= g.indices[i - 1])) {
                why = "gather indices must be non-negative and strictly increasing";
                return false;
              }
            }
            return true;
          },
      },
      s);
}

void check_op(const OpDecl& op, std::vector<Violation>& out) {
  auto bad = [&](ViolationKind k, const std::string& msg) {
    out.push_back({k, "op '" + op.name + "': " + msg});
  };
  if (op.cpu_cores < 1) bad(ViolationKind::invalid_op, "cpu_cores must be >= 1");
  if (op.batch < 1) bad(ViolationKind::invalid_op, "batch must be >= 1");
  if (op.arity < 1) bad(ViolationKind::arity_mismatch, "arity must be >= 1");
  if (op.variable_length)
    bad(ViolationKind::data_dependent_length, "operations may not change sequence length");
  if (is_system_op(op.kind)) {
    if (!op.kernel.empty()) bad(ViolationKind::invalid_op, kind_name(op.kind) + " carries no kernel");
    if (op.arity != 1) bad(ViolationKind::arity_mismatch, kind_name(op.kind) + " takes one input");
  } else if (op.kernel.empty()) {
    bad(ViolationKind::invalid_op, "missing kernel");
  }
  std::string why;
  std::visit(overloaded{
                 [](const ops::Map&) {},
                 [](const ops::Unslice&) {},
                 [&](const ops::Sample& s) {
                   if (!valid_strategy(s.strategy, why)) bad(ViolationKind::invalid_op, why);
                 },
                 [&](const ops::Space& s) {
                   if (!valid_strategy(s.strategy, why)) bad(ViolationKind::invalid_op, why);
                   if (s.length && *s.length < 0) bad(ViolationKind::invalid_op, "negative length");
                 },
                 [&](const ops::Stencil& s) {
                   if (s.offsets.empty()) bad(ViolationKind::invalid_op, "empty stencil");
                   for (std::size_t i = 1; i < s.offsets.size(); ++i)
                     if (s.offsets[i] <= s.offsets[i - 1])
                       bad(ViolationKind::invalid_op, "stencil offsets must be sorted and unique");
                 },
                 [&](const ops::BoundedState& b) {
                   if (b.warmup < 0 && !b.infinite())
                     bad(ViolationKind::invalid_op, "warmup must be >= 0 or infinite");
                 },
                 [&](const ops::Slice& s) {
                   std::visit(overloaded{
                                  [&](const FixedIntervalPartitioner& f) {
                                    if (f.interval < 1)
                                      bad(ViolationKind::invalid_op, "slice interval must be >= 1");
                                  },
                                  [&](const BoundaryListPartitioner& l) {
                                    for (std::size_t i = 0; i < l.starts.size(); ++i)
                                      if (l.starts[i] < 0 ||
                                          (i > 0 && l.starts[i] <= l.starts[i - 1]))
                                        bad(ViolationKind::invalid_op,
                                            "slice boundaries must be strictly increasing");
                                  },
                              },
                              s.partitioner);
                 },
             },
             op.kind);
}

}  // namespace

ValidationReport validate_graph(const GraphSpec& g) {
  ValidationReport report;
  auto& out = report.violations;
  const std::size_t n_src = g.sources.size();
  const std::size_t n_ops = g.ops.size();

  std::set<std::string> names;
  for (const auto& s : g.sources)
    if (!names.insert(s).second) out.push_back({ViolationKind::invalid_op, "duplicate name '" + s + "'"});
  for (const auto& op : g.ops) {
    if (!names.insert(op.name).second)
      out.push_back({ViolationKind::invalid_op, "duplicate name '" + op.name + "'"});
    check_op(op, out);
  }

  auto valid_ref = [&](const NodeRef& r) {
    return r.kind == NodeRef::Kind::source ? r.index < n_src : r.index < n_ops;
  };

  // bound[op][slot] counts bindings per input slot.
  std::vector<std::vector<int>> bound(n_ops);
  for (std::size_t i = 0; i < n_ops; ++i) bound[i].assign(g.ops[i].arity, 0);
  std::vector<std::vector<std::size_t>> succ(n_ops);
  std::vector<std::size_t> indeg(n_ops, 0);
  std::vector<std::vector<std::size_t>> pred(n_ops);

  for (const auto& e : g.edges) {
    if (!valid_ref(e.from) || e.to_op >= n_ops) {
      out.push_back({ViolationKind::unknown_node, "edge references a missing node"});
      continue;
    }
    const auto& dst = g.ops[e.to_op];
    if (e.slot >= dst.arity) {
      out.push_back({ViolationKind::arity_mismatch, "op '" + dst.name + "' has no input slot " +
                                                        std::to_string(e.slot)});
      continue;
    }
    if (++bound[e.to_op][e.slot] == 2)
      out.push_back({ViolationKind::duplicate_binding,
                     "op '" + dst.name + "' slot " + std::to_string(e.slot) + " bound twice"});
    if (e.from.kind == NodeRef::Kind::op) {
      succ[e.from.index].push_back(e.to_op);
      pred[e.to_op].push_back(e.from.index);
      ++indeg[e.to_op];
    }
  }
  for (std::size_t i = 0; i < n_ops; ++i)
    for (std::size_t s = 0; s < bound[i].size(); ++s)
      if (bound[i][s] == 0)
        out.push_back({ViolationKind::unbound_input,
                       "op '" + g.ops[i].name + "' slot " + std::to_string(s) + " is not bound"});

  // Kahn's algorithm; leftovers sit on a cycle or downstream of one.
  std::vector<std::size_t> deg = indeg;
  std::queue<std::size_t> ready;
  for (std::size_t i = 0; i < n_ops; ++i)
    if (deg[i] == 0) ready.push(i);
  std::size_t visited = 0;
  while (!ready.empty()) {
    const auto i = ready.front();
    ready.pop();
    ++visited;
    for (auto j : succ[i])
      if (--deg[j] == 0) ready.push(j);
  }
  if (visited != n_ops) {
    std::string members;
    for (std::size_t i = 0; i < n_ops; ++i)
      if (deg[i] > 0) members += (members.empty() ? "" : ", ") + g.ops[i].name;
    out.push_back({ViolationKind::cycle, "ops involved: " + members});
  }

  if (g.outputs.empty()) out.push_back({ViolationKind::no_outputs, "graph writes no outputs"});
  std::set<std::string> columns;
  std::vector<bool> live(n_ops, false);
  std::vector<std::size_t> stack;
  for (const auto& o : g.outputs) {
    if (!columns.insert(o.column).second)
      out.push_back({ViolationKind::invalid_op, "duplicate output column '" + o.column + "'"});
    if (!valid_ref(o.from)) {
      out.push_back({ViolationKind::unknown_node, "output '" + o.column + "' has no producer"});
      continue;
    }
    if (o.from.kind == NodeRef::Kind::op && !live[o.from.index]) {
      live[o.from.index] = true;
      stack.push_back(o.from.index);
    }
  }
  while (!stack.empty()) {
    const auto i = stack.back();
    stack.pop_back();
    for (auto p : pred[i])
      if (!live[p]) {
        live[p] = true;
        stack.push_back(p);
      }
  }
  for (std::size_t i = 0; i < n_ops; ++i)
    if (!live[i])
      out.push_back({ViolationKind::unreachable, "op '" + g.ops[i].name + "' feeds no output"});
  return report;
}

Graph::Graph(GraphSpec spec) : spec_(std::move(spec)) {
  auto report = validate_graph(spec_);
  if (!report.ok()) throw ValidationError("invalid graph: " + report.to_string());

  inputs_.resize(op_count());
  for (std::size_t i = 0; i < op_count(); ++i) inputs_[i].assign(spec_.ops[i].arity, 0);
  std::vector<std::vector<std::size_t>> succ(op_count());
  std::vector<std::size_t> indeg(op_count(), 0);
  for (const auto& e : spec_.edges) {
    inputs_[e.to_op][e.slot] = node(e.from);
    if (e.from.kind == NodeRef::Kind::op) {
      succ[e.from.index].push_back(e.to_op);
      ++indeg[e.to_op];
    }
  }
  // Lowest index first so the order is stable across runs.
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < op_count(); ++i)
    if (indeg[i] == 0) ready.push(i);
  while (!ready.empty()) {
    const auto i = ready.top();
    ready.pop();
    topo_.push_back(i);
    for (auto j : succ[i])
      if (--indeg[j] == 0) ready.push(j);
  }
  for (const auto& o : spec_.outputs) output_nodes_.push_back(node(o.from));
}

NodeId Graph::node(NodeRef ref) const {
  return ref.kind == NodeRef::Kind::source ? ref.index : source_count() + ref.index;
}

std::string Graph::node_name(NodeId n) const {
  return is_source(n) ? spec_.sources[n] : spec_.ops[op_index(n)].name;
}

Interval SequenceDomain::slice_of(Index p) const {
  if (slice_boundaries.empty()) return {0, length};
  auto it = std::upper_bound(slice_boundaries.begin(), slice_boundaries.end(), p);
  const Index start = it == slice_boundaries.begin() ? 0 : *(it - 1);
  const Index end = it == slice_boundaries.end() ? length : *it;
  return {start, end};
}

namespace {

std::vector<Index> normalise_boundaries(std::vector<Index> b, Index length) {
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  b.erase(std::remove_if(b.begin(), b.end(), [&](Index x) { return x <= 0 || x >= length; }),
          b.end());
  if (length > 0) b.insert(b.begin(), 0);
  if (b.size() == 1) b.clear();  // a single slice is the unsliced domain
  return b;
}

Index space_length(const ops::Space& s, Index input_length) {
  if (s.length) return *s.length;
  return std::visit(overloaded{
                        [&](const StrideStrategy& st) { return input_length * st.stride; },
                        [&](const RangeStrategy& r) { return r.end; },
                        [&](const GatherStrategy& g) {
                          return g.indices.empty() ? Index{0} : g.indices.back() + 1;
                        },
                    },
                    s.strategy);
}

}  // namespace

std::vector<SequenceDomain> infer_domains(const Graph& graph,
                                          const std::vector<Index>& source_lengths) {
  if (source_lengths.size() != graph.source_count())
    throw ValidationError("expected " + std::to_string(graph.source_count()) +
                          " source lengths, got " + std::to_string(source_lengths.size()));
  std::vector<SequenceDomain> dom(graph.node_count());
  for (std::size_t s = 0; s < graph.source_count(); ++s) {
    if (source_lengths[s] < 0) throw ValidationError("negative source length");
    dom[s].length = source_lengths[s];
  }

  for (std::size_t i : graph.topo_order()) {
    const OpDecl& op = graph.op(i);
    const auto& in = graph.inputs(i);
    const SequenceDomain& first = dom[in.front()];
    for (std::size_t k = 1; k < in.size(); ++k)
      if (dom[in[k]].length != first.length)
        throw ValidationError("op '" + op.name + "': input lengths differ (" +
                              std::to_string(first.length) + " vs " +
                              std::to_string(dom[in[k]].length) + ")");
    SequenceDomain& out = dom[graph.op_node(i)];
    std::visit(
        overloaded{
            [&](const ops::Sample& s) {
              if (const auto* g = std::get_if<GatherStrategy>(&s.strategy);
                  g && !g->indices.empty() && g->indices.back() >= first.length)
                throw ValidationError("op '" + op.name + "': gather index " +
                                      std::to_string(g->indices.back()) + " out of range [0," +
                                      std::to_string(first.length) + ")");
              out.length = selected_count(s.strategy, first.length);
              std::vector<Index> b;
              for (Index x : first.slice_boundaries)
                b.push_back(first_rank_at_or_after(s.strategy, first.length, x));
              out.slice_boundaries = normalise_boundaries(std::move(b), out.length);
            },
            [&](const ops::Space& s) {
              out.length = space_length(s, first.length);
              const Index fits = selected_count(s.strategy, out.length);
              if (fits != first.length)
                throw ValidationError("op '" + op.name + "': " + describe(s.strategy) +
                                      " over length " + std::to_string(out.length) + " places " +
                                      std::to_string(fits) + " points but the input has " +
                                      std::to_string(first.length));
              std::vector<Index> b;
              for (Index x : first.slice_boundaries)
                if (x > 0) b.push_back(selected_point(s.strategy, x));
              out.slice_boundaries = normalise_boundaries(std::move(b), out.length);
            },
            [&](const ops::Slice& s) {
              out.length = first.length;
              std::vector<Index> b = std::visit(
                  overloaded{
                      [&](const FixedIntervalPartitioner& f) {
                        std::vector<Index> v;
                        for (Index x = 0; x < first.length; x += f.interval) v.push_back(x);
                        return v;
                      },
                      [&](const BoundaryListPartitioner& l) {
                        for (Index x : l.starts)
                          if (x >= first.length && x > 0)
                            throw ValidationError("op '" + op.name + "': slice boundary " +
                                                  std::to_string(x) + " outside the sequence");
                        return l.starts;
                      },
                  },
                  s.partitioner);
              out.slice_boundaries = normalise_boundaries(std::move(b), out.length);
            },
            [&](const ops::Unslice&) { out.length = first.length; },
            [&](const auto&) {
              // Map, Stencil, BoundedState keep length; slices are the union over inputs.
              out.length = first.length;
              std::vector<Index> b;
              for (NodeId n : in)
                b.insert(b.end(), dom[n].slice_boundaries.begin(), dom[n].slice_boundaries.end());
              out.slice_boundaries = normalise_boundaries(std::move(b), out.length);
            },
        },
        op.kind);
  }

  const auto& outs = graph.output_nodes();
  for (std::size_t k = 1; k < outs.size(); ++k)
    if (dom[outs[k]].length != dom[outs.front()].length)
      throw ValidationError("graph outputs have different lengths");
  return dom;
}

}  // namespace framedag
