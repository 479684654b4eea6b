#include "support.hpp"

#include "framedag/error.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <unistd.h>

namespace framedag::test {

namespace fs = std::filesystem;

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("framedag-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

Bytes mix_fields(const std::vector<ByteView>& fields) {
  std::uint64_t h = 1469598103934665603ull;
  auto eat = [&](std::uint8_t b) {
    h ^= b;
    h *= 1099511628211ull;
  };
  for (const auto& f : fields) {
    for (int i = 0; i < 4; ++i) eat(static_cast<std::uint8_t>(f.size() >> (8 * i)));
    for (auto b : f) eat(b);
  }
  Bytes out(8);
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(h >> (8 * i));
  return out;
}

namespace {

class MixKernel : public Kernel {
 public:
  explicit MixKernel(std::atomic<int>* failures = nullptr) : failures_(failures) {}
  void execute(const KernelBatch& b, std::vector<Bytes>& out) override {
    if (failures_ && failures_->fetch_sub(1) > 0) throw KernelError("flaky kernel failure");
    std::vector<ByteView> row(b.fields.size());
    for (std::size_t r = 0; r < b.rows(); ++r) {
      for (std::size_t f = 0; f < b.fields.size(); ++f) row[f] = b.fields[f][r].payload;
      out[r] = mix_fields(row);
    }
  }

 private:
  std::atomic<int>* failures_;
};

}  // namespace

void add_test_kernels(KernelRegistry& registry, std::atomic<int>* flaky_failures) {
  registry.add({"mix", 0, true, false, true, false},
               [](const KernelArgs&) { return std::make_unique<MixKernel>(); });
  registry.add({"flaky", 0, true, false, true, false},
               [flaky_failures](const KernelArgs&) { return std::make_unique<MixKernel>(flaky_failures); });
}

KernelRegistry test_registry(std::atomic<int>* flaky_failures) {
  KernelRegistry r = KernelRegistry::with_builtins();
  add_test_kernels(r, flaky_failures);
  return r;
}

// ---------------------------------------------------------------------------

std::vector<Index> enumerate_selected(const SamplingStrategy& s, Index length) {
  std::vector<Index> out;
  if (const auto* st = std::get_if<StrideStrategy>(&s)) {
    for (Index p = 0; p < length; p += st->stride) out.push_back(p);
  } else if (const auto* r = std::get_if<RangeStrategy>(&s)) {
    for (Index p = r->start; p < std::min(r->end, length); p += r->step) out.push_back(p);
  } else {
    for (Index p : std::get<GatherStrategy>(s).indices)
      if (p < length) out.push_back(p);
  }
  return out;
}

Interval DenseDomain::slice_of(Index p) const {
  Index start = 0, end = length;
  for (Index b : boundaries) {
    if (b <= p) start = b;
    else {
      end = b;
      break;
    }
  }
  return {start, end};
}

namespace {

std::vector<Index> tidy(std::vector<Index> b, Index length) {
  std::set<Index> s;
  for (Index x : b)
    if (x > 0 && x < length) s.insert(x);
  return {s.begin(), s.end()};
}

struct Adjacency {
  std::vector<std::vector<NodeId>> inputs;  // per op, by slot
  std::vector<std::size_t> order;           // ops in dependency order
};

Adjacency adjacency(const GraphSpec& spec) {
  const std::size_t ns = spec.sources.size();
  Adjacency a;
  a.inputs.assign(spec.ops.size(), {});
  for (std::size_t i = 0; i < spec.ops.size(); ++i) a.inputs[i].resize(spec.ops[i].arity);
  for (const auto& e : spec.edges)
    a.inputs[e.to_op][e.slot] = e.from.kind == NodeRef::Kind::source ? e.from.index : ns + e.from.index;
  std::vector<bool> done(spec.ops.size(), false);
  while (a.order.size() < spec.ops.size()) {
    bool progressed = false;
    for (std::size_t i = 0; i < spec.ops.size(); ++i) {
      if (done[i]) continue;
      bool ready = true;
      for (NodeId n : a.inputs[i]) ready = ready && (n < ns || done[n - ns]);
      if (ready) {
        done[i] = true;
        a.order.push_back(i);
        progressed = true;
      }
    }
    if (!progressed) throw std::logic_error("cycle in test graph");
  }
  return a;
}

std::vector<NodeId> output_nodes(const GraphSpec& spec) {
  std::vector<NodeId> out;
  for (const auto& o : spec.outputs)
    out.push_back(o.from.kind == NodeRef::Kind::source ? o.from.index : spec.sources.size() + o.from.index);
  return out;
}

}  // namespace

std::vector<DenseDomain> dense_domains(const GraphSpec& spec, const std::vector<Index>& source_lengths) {
  const std::size_t ns = spec.sources.size();
  const Adjacency adj = adjacency(spec);
  std::vector<DenseDomain> d(ns + spec.ops.size());
  for (std::size_t s = 0; s < ns; ++s) d[s].length = source_lengths[s];
  for (std::size_t i : adj.order) {
    const OpDecl& op = spec.ops[i];
    const DenseDomain& in = d[adj.inputs[i][0]];
    DenseDomain& out = d[ns + i];
    if (const auto* s = std::get_if<ops::Sample>(&op.kind)) {
      const auto sel = enumerate_selected(s->strategy, in.length);
      out.length = static_cast<Index>(sel.size());
      std::vector<Index> b;
      for (Index x : in.boundaries)
        b.push_back(std::lower_bound(sel.begin(), sel.end(), x) - sel.begin());
      out.boundaries = tidy(b, out.length);
    } else if (const auto* s = std::get_if<ops::Space>(&op.kind)) {
      if (s->length) {
        out.length = *s->length;
      } else if (const auto* st = std::get_if<StrideStrategy>(&s->strategy)) {
        out.length = in.length * st->stride;
      } else if (const auto* r = std::get_if<RangeStrategy>(&s->strategy)) {
        out.length = r->end;
      } else {
        const auto& idx = std::get<GatherStrategy>(s->strategy).indices;
        out.length = idx.empty() ? 0 : idx.back() + 1;
      }
      const auto sel = enumerate_selected(s->strategy, out.length);
      std::vector<Index> b;
      for (Index x : in.boundaries) b.push_back(sel[static_cast<std::size_t>(x)]);
      out.boundaries = tidy(b, out.length);
    } else if (const auto* s = std::get_if<ops::Slice>(&op.kind)) {
      out.length = in.length;
      std::vector<Index> b;
      if (const auto* f = std::get_if<FixedIntervalPartitioner>(&s->partitioner))
        for (Index x = 0; x < in.length; x += f->interval) b.push_back(x);
      else
        b = std::get<BoundaryListPartitioner>(s->partitioner).starts;
      out.boundaries = tidy(b, out.length);
    } else if (std::holds_alternative<ops::Unslice>(op.kind)) {
      out.length = in.length;
    } else {
      out.length = in.length;
      std::vector<Index> b;
      for (NodeId n : adj.inputs[i]) b.insert(b.end(), d[n].boundaries.begin(), d[n].boundaries.end());
      out.boundaries = tidy(b, out.length);
    }
  }
  return d;
}

std::vector<std::vector<Element>> dense_eval(const GraphSpec& spec, const KernelRegistry& registry,
                                             const std::vector<std::vector<Element>>& sources) {
  const std::size_t ns = spec.sources.size();
  std::vector<Index> lengths;
  for (const auto& s : sources) lengths.push_back(static_cast<Index>(s.size()));
  const auto dom = dense_domains(spec, lengths);
  const Adjacency adj = adjacency(spec);
  std::vector<std::vector<Element>> v(ns + spec.ops.size());
  for (std::size_t s = 0; s < ns; ++s) v[s] = sources[s];

  for (std::size_t i : adj.order) {
    const OpDecl& op = spec.ops[i];
    const NodeId self = ns + i;
    const auto& ins = adj.inputs[i];
    const auto& in0 = v[ins[0]];
    auto& out = v[self];
    const Index n = dom[self].length;
    out.assign(static_cast<std::size_t>(n), Element{});
    if (const auto* s = std::get_if<ops::Sample>(&op.kind)) {
      const auto sel = enumerate_selected(s->strategy, dom[ins[0]].length);
      for (Index k = 0; k < n; ++k) out[k] = in0[sel[k]];
      continue;
    }
    if (const auto* s = std::get_if<ops::Space>(&op.kind)) {
      const auto sel = enumerate_selected(s->strategy, n);
      for (Index p = 0; p < n; ++p) out[p] = Element::make_fill();
      for (std::size_t k = 0; k < sel.size(); ++k) out[sel[k]] = in0[k];
      continue;
    }
    if (std::holds_alternative<ops::Slice>(op.kind) || std::holds_alternative<ops::Unslice>(op.kind)) {
      out = in0;
      continue;
    }
    std::vector<Index> offsets{0};
    if (const auto* st = std::get_if<ops::Stencil>(&op.kind)) offsets = st->offsets;
    KernelArgs args{op.args, 0};
    const bool stateful = std::holds_alternative<ops::BoundedState>(op.kind);
    if (stateful) args.warmup = std::get<ops::BoundedState>(op.kind).warmup;
    const KernelDecl& decl = registry.decl(op.kernel);
    std::unique_ptr<Kernel> kernel;
    Index slice_start = -1;
    for (Index p = 0; p < n; ++p) {
      const Interval sl = dom[self].slice_of(p);
      if (!kernel || (stateful && sl.start != slice_start)) {
        kernel = registry.make(op.kernel, args);
        slice_start = sl.start;
      }
      KernelBatch b;
      b.points = {p};
      bool fill = false;
      for (NodeId src : ins)
        for (Index o : offsets) {
          const Index q = std::clamp(p + o, sl.start, sl.end - 1);
          const Element& e = v[src][q];
          fill = fill || e.fill;
          b.fields.push_back({ElementView(e)});
        }
      if (fill && !decl.accepts_fill) {
        out[p] = Element::make_fill();
        continue;
      }
      std::vector<Bytes> res(1);
      kernel->execute(b, res);
      out[p] = Element{res[0], false};
    }
  }
  return v;
}

namespace {

// Point-level dependencies of one computed point.
template <typename F>
void for_each_dependency(const GraphSpec& spec, const Adjacency& adj, const std::vector<DenseDomain>& dom,
                         std::size_t op_index, Index p, F&& f) {
  const std::size_t ns = spec.sources.size();
  const OpDecl& op = spec.ops[op_index];
  const NodeId self = ns + op_index;
  const auto& ins = adj.inputs[op_index];
  if (const auto* s = std::get_if<ops::Sample>(&op.kind)) {
    f(ins[0], enumerate_selected(s->strategy, dom[ins[0]].length)[p]);
  } else if (const auto* s = std::get_if<ops::Space>(&op.kind)) {
    const auto sel = enumerate_selected(s->strategy, dom[self].length);
    auto it = std::lower_bound(sel.begin(), sel.end(), p);
    if (it != sel.end() && *it == p) f(ins[0], it - sel.begin());
  } else if (const auto* st = std::get_if<ops::Stencil>(&op.kind)) {
    const Interval sl = dom[self].slice_of(p);
    for (NodeId n : ins)
      for (Index o : st->offsets) f(n, std::clamp(p + o, sl.start, sl.end - 1));
  } else {
    for (NodeId n : ins) f(n, p);
  }
}

Index window_start(const OpDecl& op, const DenseDomain& d, Index p) {
  const auto& bs = std::get<ops::BoundedState>(op.kind);
  const Index s = d.slice_of(p).start;
  return bs.infinite() ? s : std::max(s, p - bs.warmup);
}

}  // namespace

std::vector<std::set<Index>> closure(const GraphSpec& spec, const std::vector<DenseDomain>& dom,
                                     const std::vector<Index>& requested) {
  const std::size_t ns = spec.sources.size();
  const Adjacency adj = adjacency(spec);
  std::vector<std::set<Index>> computed(dom.size());
  std::deque<std::pair<NodeId, Index>> work;
  // `need` marks a point some consumer reads; bounded-state ops then invoke
  // their whole window.
  auto need = [&](NodeId n, Index p) {
    if (n >= ns && std::holds_alternative<ops::BoundedState>(spec.ops[n - ns].kind)) {
      for (Index q = window_start(spec.ops[n - ns], dom[n], p); q <= p; ++q)
        if (computed[n].insert(q).second) work.push_back({n, q});
      return;
    }
    if (computed[n].insert(p).second) work.push_back({n, p});
  };
  for (NodeId n : output_nodes(spec))
    for (Index p : requested) need(n, p);
  while (!work.empty()) {
    auto [n, p] = work.front();
    work.pop_front();
    if (n < ns) continue;
    for_each_dependency(spec, adj, dom, n - ns, p, need);
  }
  return computed;
}

bool is_closed(const GraphSpec& spec, const std::vector<DenseDomain>& dom, const std::vector<Index>& requested,
               const std::vector<std::set<Index>>& sets) {
  const std::size_t ns = spec.sources.size();
  const Adjacency adj = adjacency(spec);
  for (NodeId out : output_nodes(spec))
    for (Index p : requested)
      if (!sets[out].count(p)) return false;
  for (std::size_t i = 0; i < spec.ops.size(); ++i) {
    const NodeId self = ns + i;
    const bool stateful = std::holds_alternative<ops::BoundedState>(spec.ops[i].kind);
    for (Index p : sets[self]) {
      bool ok = true;
      for_each_dependency(spec, adj, dom, i, p, [&](NodeId n, Index q) { ok = ok && sets[n].count(q); });
      if (stateful)
        for (Index q = window_start(spec.ops[i], dom[self], p); q < p; ++q) ok = ok && sets[self].count(q);
      if (!ok) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

namespace {

SamplingStrategy random_sample_strategy(Rng& rng, Index n) {
  switch (uniform(rng, 0, 2)) {
    case 0:
      return StrideStrategy{uniform(rng, 1, 5)};
    case 1: {
      const Index a = uniform(rng, 0, n - 1);
      const Index b = uniform(rng, a + 1, n);
      return RangeStrategy{a, b, uniform(rng, 1, 3)};
    }
    default: {
      std::vector<Index> idx;
      for (Index p = 0; p < n; ++p)
        if (coin(rng, 0.4)) idx.push_back(p);
      if (idx.empty()) idx.push_back(uniform(rng, 0, n - 1));
      return GatherStrategy{idx};
    }
  }
}

}  // namespace

RandomGraph random_stateless_graph(Rng& rng, int max_ops, Index max_len) {
  RandomGraph g;
  const std::size_t ns = coin(rng, 0.3) ? 2 : 1;
  const Index len = uniform(rng, 1, max_len);
  for (std::size_t s = 0; s < ns; ++s) {
    g.spec.sources.push_back("src" + std::to_string(s));
    g.source_lengths.push_back(len);
  }
  std::vector<Index> lengths(g.source_lengths);  // per node
  auto ref_of = [&](NodeId n) { return n < ns ? NodeRef::source(n) : NodeRef::op(n - ns); };
  const int n_ops = static_cast<int>(uniform(rng, 1, max_ops));
  for (int k = 0; k < n_ops; ++k) {
    // Prefer recent nodes so graphs grow deep as well as wide.
    const NodeId total = lengths.size();
    const NodeId in = coin(rng, 0.6) ? total - 1 : static_cast<NodeId>(uniform(rng, 0, total - 1));
    const Index n = lengths[in];
    OpDecl op;
    op.name = "op" + std::to_string(k);
    Index out_len = n;
    std::vector<NodeId> inputs{in};
    int kind = static_cast<int>(uniform(rng, 0, 5));
    if (n == 0 && (kind == 1)) kind = 0;
    switch (kind) {
      case 0:
      case 3: {
        if (kind == 0) {
          op.kind = ops::Map{};
        } else {
          std::vector<Index> offs;
          for (Index o = -3; o <= 3; ++o)
            if (coin(rng, 0.3)) offs.push_back(o);
          if (offs.empty()) offs.push_back(uniform(rng, -2, 2));
          op.kind = ops::Stencil{offs};
        }
        op.kernel = "mix";
        op.batch = uniform(rng, 1, 8);
        if (coin(rng, 0.3)) {
          std::vector<NodeId> same;
          for (NodeId c = 0; c < total; ++c)
            if (lengths[c] == n) same.push_back(c);
          inputs.push_back(same[static_cast<std::size_t>(uniform(rng, 0, same.size() - 1))]);
          op.arity = 2;
        }
        break;
      }
      case 1: {
        auto s = random_sample_strategy(rng, n);
        out_len = static_cast<Index>(enumerate_selected(s, n).size());
        op.kind = ops::Sample{s};
        break;
      }
      case 2: {
        ops::Space sp;
        const Index stride = uniform(rng, 1, 4);
        if (n > 0 && (n - 1) * stride + 1 <= max_len && coin(rng, 0.6)) {
          sp.strategy = StrideStrategy{stride};
          out_len = uniform(rng, (n - 1) * stride + 1, std::min(n * stride, max_len));
        } else {
          out_len = std::min(max_len, n + uniform(rng, 0, 20));
          std::vector<Index> all(static_cast<std::size_t>(out_len));
          for (Index p = 0; p < out_len; ++p) all[p] = p;
          std::shuffle(all.begin(), all.end(), rng);
          all.resize(static_cast<std::size_t>(n));
          std::sort(all.begin(), all.end());
          sp.strategy = GatherStrategy{all};
        }
        sp.length = out_len;
        op.kind = sp;
        break;
      }
      case 4: {
        if (coin(rng)) {
          op.kind = ops::Slice{FixedIntervalPartitioner{uniform(rng, 1, 50)}};
        } else {
          std::vector<Index> b;
          for (Index p = 0; p < n; ++p)
            if (coin(rng, 0.05)) b.push_back(p);
          op.kind = ops::Slice{BoundaryListPartitioner{b}};
        }
        break;
      }
      default:
        op.kind = ops::Unslice{};
    }
    for (std::size_t slot = 0; slot < inputs.size(); ++slot)
      g.spec.edges.push_back({ref_of(inputs[slot]), g.spec.ops.size(), slot});
    g.spec.ops.push_back(op);
    lengths.push_back(out_len);
  }

  // Keep only ancestors of the last op.
  const std::size_t last = g.spec.ops.size() - 1;
  std::vector<bool> live(g.spec.ops.size(), false);
  live[last] = true;
  for (std::size_t i = g.spec.ops.size(); i-- > 0;) {
    if (!live[i]) continue;
    for (const auto& e : g.spec.edges)
      if (e.to_op == i && e.from.kind == NodeRef::Kind::op) live[e.from.index] = true;
  }
  std::vector<std::size_t> remap(g.spec.ops.size());
  GraphSpec pruned;
  pruned.sources = g.spec.sources;
  for (std::size_t i = 0; i < g.spec.ops.size(); ++i)
    if (live[i]) {
      remap[i] = pruned.ops.size();
      pruned.ops.push_back(g.spec.ops[i]);
    }
  for (auto e : g.spec.edges) {
    if (!live[e.to_op]) continue;
    e.to_op = remap[e.to_op];
    if (e.from.kind == NodeRef::Kind::op) e.from.index = remap[e.from.index];
    pruned.edges.push_back(e);
  }
  pruned.outputs.push_back({"out", NodeRef::op(remap[last])});
  // Sometimes a second output of equal length.
  const Index out_len = lengths[ns + last];
  for (std::size_t i = 0; i < last; ++i)
    if (live[i] && lengths[ns + i] == out_len && coin(rng, 0.3)) {
      pruned.outputs.push_back({"aux", NodeRef::op(remap[i])});
      break;
    }
  g.spec = std::move(pruned);
  return g;
}

std::vector<Element> random_elements(Rng& rng, Index n, std::size_t min_size, std::size_t max_size) {
  std::vector<Element> out(static_cast<std::size_t>(n));
  for (auto& e : out) {
    e.payload.resize(static_cast<std::size_t>(uniform(rng, min_size, max_size)));
    for (auto& b : e.payload) b = static_cast<std::uint8_t>(uniform(rng, 0, 255));
  }
  return out;
}

std::vector<Index> random_points(Rng& rng, Index n) {
  std::vector<Index> pts;
  if (n == 0) return pts;
  switch (uniform(rng, 0, 3)) {
    case 0:
      for (Index p = 0; p < n; ++p) pts.push_back(p);
      break;
    case 1: {
      const double density = std::uniform_real_distribution<double>(0.01, 0.5)(rng);
      for (Index p = 0; p < n; ++p)
        if (coin(rng, density)) pts.push_back(p);
      break;
    }
    case 2: {
      Index p = uniform(rng, 0, n - 1);
      while (p < n) {
        const Index run = uniform(rng, 1, 20);
        for (Index q = p; q < std::min(n, p + run); ++q) pts.push_back(q);
        p += run + uniform(rng, 1, 30);
      }
      break;
    }
    default:
      pts.push_back(uniform(rng, 0, n - 1));
  }
  if (pts.empty()) pts.push_back(uniform(rng, 0, n - 1));
  return pts;
}

std::vector<Bytes> low_entropy_frames(Rng& rng, Index n, std::size_t frame_size, int changes) {
  std::vector<Bytes> frames;
  Bytes cur(frame_size, 0);
  for (Index i = 0; i < n; ++i) {
    for (int c = 0; c < changes; ++c)
      cur[static_cast<std::size_t>(uniform(rng, 0, frame_size - 1))] = static_cast<std::uint8_t>(uniform(rng, 0, 255));
    frames.push_back(cur);
  }
  return frames;
}

void write_blob_table(const TableStore& store, const std::string& table, const std::vector<Element>& values) {
  TableWriter w(store.root(), table, static_cast<Index>(values.size()));
  auto sink = w.open_blob_column("v");
  for (const auto& e : values) sink.append(e);
  sink.close();
  w.commit();
}

std::vector<Element> read_blob_table(const TableStore& store, const std::string& table, const std::string& column) {
  const BlobColumn c = store.open_blob_column(table, column);
  std::vector<Element> out;
  for (Index r = 0; r < c.rows(); ++r) out.push_back(c.read(r));
  return out;
}

std::map<std::string, Bytes> table_files(const TableStore& store, const std::string& table) {
  std::map<std::string, Bytes> out;
  for (const auto& entry : fs::directory_iterator(store.table_dir(table))) {
    std::ifstream in(entry.path(), std::ios::binary);
    out[entry.path().filename().string()] = Bytes(std::istreambuf_iterator<char>(in), {});
  }
  return out;
}

}  // namespace framedag::test
