#include <gtest/gtest.h>

#include "framedag/depanalysis.hpp"
#include "framedag/error.hpp"
#include "support.hpp"

using namespace framedag;

namespace {

OpDecl op_of(const std::string& name, OpKind kind, std::string kernel = "") {
  OpDecl op;
  op.name = name;
  op.kind = std::move(kind);
  op.kernel = std::move(kernel);
  return op;
}

GraphSpec linear(std::vector<OpDecl> ops) {
  GraphSpec g;
  g.sources = {"src"};
  for (std::size_t i = 0; i < ops.size(); ++i)
    g.edges.push_back({i == 0 ? NodeRef::source(0) : NodeRef::op(i - 1), i, 0});
  g.ops = std::move(ops);
  g.outputs = {{"out", NodeRef::op(g.ops.size() - 1)}};
  return g;
}

RequiredSet pts(std::vector<Index> p) { return RequiredSet::from_points(std::move(p)); }

std::vector<Index> as_vector(const std::set<Index>& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(RequiredUpstream, StencilReadsNextElement) {
  const OpDecl op = op_of("flow", ops::Stencil{{0, 1}}, "mix");
  SequenceDomain d{100, {}};
  EXPECT_EQ(required_upstream(op, pts({5}), d, d)[0], pts({5, 6}));
}

TEST(RequiredUpstream, StencilClampsAtSliceEnd) {
  const OpDecl op = op_of("flow", ops::Stencil{{-1, 0, 1}}, "mix");
  SequenceDomain d{100, {0, 50}};
  EXPECT_EQ(required_upstream(op, pts({49, 50}), d, d)[0], pts({48, 49, 50, 51}));
  EXPECT_THROW(required_upstream(op, pts({49}), d, d, BoundaryPolicy::strict), ValidationError);
}

TEST(RequiredUpstream, BoundedStateWarmup) {
  const OpDecl op = op_of("mean", ops::BoundedState{2}, "sliding_mean");
  SequenceDomain d{100, {}};
  const auto down = RequiredSet::from_interval(48, 99);
  EXPECT_EQ(required_upstream(op, down, d, d)[0], RequiredSet::from_interval(46, 99));
  EXPECT_EQ(invocation_set(op, down, d), RequiredSet::from_interval(46, 99));
  // Split at 50: a packet [50,100) computes 48 and 49 as warmup.
  EXPECT_EQ(invocation_set(op, RequiredSet::from_interval(50, 100), d), RequiredSet::from_interval(48, 100));
  // Clamped at the sequence start and at slice starts.
  EXPECT_EQ(invocation_set(op, pts({1}), d), RequiredSet::from_interval(0, 2));
  SequenceDomain sliced{100, {0, 50}};
  EXPECT_EQ(invocation_set(op, pts({51}), sliced), RequiredSet::from_interval(50, 52));
}

TEST(RequiredUpstream, InfiniteWarmupReachesSliceStart) {
  const OpDecl op = op_of("acc", ops::BoundedState{kInfiniteWarmup}, "sliding_mean");
  SequenceDomain d{100, {0, 40}};
  EXPECT_EQ(invocation_set(op, pts({70}), d), RequiredSet::from_interval(40, 71));
  EXPECT_EQ(invocation_set(op, pts({10, 70}), d),
            RequiredSet::from_intervals({{0, 11}, {40, 71}}));
}

TEST(RequiredUpstream, SpaceDropsFillPoints) {
  const OpDecl op = op_of("sp", ops::Space{StrideStrategy{10}, std::nullopt});
  SequenceDomain in{10, {}}, out{100, {}};
  EXPECT_EQ(required_upstream(op, RequiredSet::from_interval(15, 35), in, out)[0], pts({2, 3}));
  EXPECT_TRUE(required_upstream(op, pts({5}), in, out)[0].empty());
}

TEST(BackPropagate, SampleThenStencil) {
  // Sample stride 3 then stencil [0,1]: {0,1,2} -> sampled {0,1,2,3} -> source {0,3,6,9}.
  Graph g(linear({op_of("s", ops::Sample{StrideStrategy{3}}), op_of("f", ops::Stencil{{0, 1}}, "mix")}));
  auto d = infer_domains(g, {12});
  auto r = back_propagate(g, d, pts({0, 1, 2}));
  EXPECT_EQ(r.required[1], pts({0, 1, 2, 3}));
  EXPECT_EQ(r.required[0], pts({0, 3, 6, 9}));
}

TEST(BackPropagate, StencilThenSample) {
  Graph g(linear({op_of("f", ops::Stencil{{0, 1}}, "mix"), op_of("s", ops::Sample{StrideStrategy{3}})}));
  auto d = infer_domains(g, {12});
  auto r = back_propagate(g, d, pts({0, 1, 2}));
  EXPECT_EQ(r.required[1], pts({0, 3, 6}));
  EXPECT_EQ(r.required[0], pts({0, 1, 3, 4, 6, 7}));
}

TEST(BackPropagate, DenseRequestNeedsEverything) {
  Graph g(linear({op_of("a", ops::Map{}, "mix"), op_of("f", ops::Stencil{{-1, 0, 1}}, "mix")}));
  auto d = infer_domains(g, {50});
  auto r = back_propagate(g, d, RequiredSet::all(50));
  for (NodeId n = 0; n < g.node_count(); ++n) EXPECT_EQ(r.required[n], RequiredSet::all(50));
}

TEST(BackPropagate, MultiConsumerTakesUnion) {
  GraphSpec spec;
  spec.sources = {"src"};
  OpDecl join = op_of("join", ops::Map{}, "mix");
  join.arity = 2;
  spec.ops = {op_of("left", ops::Stencil{{-2, 0}}, "mix"), op_of("right", ops::Stencil{{0, 3}}, "mix"), join};
  spec.edges = {{NodeRef::source(0), 0, 0}, {NodeRef::source(0), 1, 0}, {NodeRef::op(0), 2, 0}, {NodeRef::op(1), 2, 1}};
  spec.outputs = {{"out", NodeRef::op(2)}};
  Graph g(spec);
  auto d = infer_domains(g, {20});
  auto r = back_propagate(g, d, pts({10}));
  EXPECT_EQ(r.required[0], pts({8, 10, 13}));
}

TEST(Coalesce, PacksInOrder) {
  auto b = coalesce_batches(pts({0, 3, 6, 9}), 2);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0], pts({0, 3}));
  EXPECT_EQ(b[1], pts({6, 9}));
  b = coalesce_batches(RequiredSet::from_interval(0, 10), 4);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[2], pts({8, 9}));
  b = coalesce_batches(pts({5}), 8);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0], pts({5}));
  EXPECT_THROW(coalesce_batches(pts({5}), 0), ValidationError);
}

TEST(Analyzer, MemoizesPerPacket) {
  Graph g(linear({op_of("a", ops::Map{}, "mix")}));
  DependencyAnalyzer an(g, infer_domains(g, {100}));
  auto first = an.analyze(3, pts({1, 2}));
  auto again = an.analyze(3, pts({1, 2}));
  EXPECT_EQ(first.get(), again.get());
  EXPECT_EQ(an.cached(), 1u);
}

// Exactness and monotonicity on random stateless graphs against the
// point-level closure oracle.
TEST(BackPropagateProperty, EqualsPointClosure) {
  test::Rng rng(2024);
  for (int iter = 0; iter < 300; ++iter) {
    auto rg = test::random_stateless_graph(rng);
    Graph g(rg.spec);
    auto d = infer_domains(g, rg.source_lengths);
    auto dd = test::dense_domains(rg.spec, rg.source_lengths);
    const NodeId out = g.output_nodes().front();
    auto req_pts = test::random_points(rng, d[out].length);
    auto r = back_propagate(g, d, RequiredSet::from_points(req_pts));
    auto oracle = test::closure(rg.spec, dd, req_pts);
    for (NodeId n = 0; n < g.node_count(); ++n) {
      ASSERT_EQ(r.computed[n], RequiredSet::from_points(as_vector(oracle[n])))
          << "iter " << iter << " node " << g.node_name(n);
    }
    // Monotonicity: adding requested points never shrinks any set.
    auto more = req_pts;
    more.push_back(test::uniform(rng, 0, d[out].length - 1));
    auto r2 = back_propagate(g, d, RequiredSet::from_points(more));
    for (NodeId n = 0; n < g.node_count(); ++n) ASSERT_TRUE(r.required[n].is_subset_of(r2.required[n]));
  }
}

TEST(BackPropagateProperty, SliceIsolation) {
  test::Rng rng(5);
  for (int iter = 0; iter < 200; ++iter) {
    const Index n = test::uniform(rng, 10, 200);
    const Index interval = test::uniform(rng, 1, 30);
    std::vector<Index> offs{test::uniform(rng, -4, -1), 0, test::uniform(rng, 1, 4)};
    Graph g(linear({op_of("sl", ops::Slice{FixedIntervalPartitioner{interval}}),
                    op_of("st", ops::Stencil{offs}, "mix"), op_of("un", ops::Unslice{})}));
    auto d = infer_domains(g, {n});
    const Index p = test::uniform(rng, 0, n - 1);
    auto r = back_propagate(g, d, RequiredSet::single(p));
    const Interval slice = d[2].slice_of(p);
    ASSERT_TRUE(r.required[1].is_subset_of(RequiredSet::from_interval(slice.start, slice.end)));
  }
}
