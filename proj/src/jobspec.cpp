#include "framedag/jobspec.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include "framedag/error.hpp"

namespace framedag {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ValidationError("job spec " + (path.empty() ? std::string("/") : path) + ": " + msg);
}

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(path, "expected an object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) fail(path + "/" + key, "unknown field");
  }
}

const json& need(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) fail(path + "/" + key, "missing field");
  return j.at(key);
}

template <typename T>
T get(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    fail(path, "has the wrong type");
  }
}

Index get_index(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<Index>();
}

std::vector<Index> get_index_list(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of integers");
  std::vector<Index> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_index(j[i], path + "/" + std::to_string(i)));
  return out;
}

SamplingStrategy parse_strategy(const json& j, const std::string& path) {
  const auto kind = get<std::string>(need(j, path, "kind"), path + "/kind");
  if (kind == "stride") {
    check_keys(j, path, {"kind", "stride"});
    return StrideStrategy{get_index(need(j, path, "stride"), path + "/stride")};
  }
  if (kind == "range") {
    check_keys(j, path, {"kind", "start", "end", "step"});
    RangeStrategy r;
    r.start = get_index(need(j, path, "start"), path + "/start");
    r.end = get_index(need(j, path, "end"), path + "/end");
    r.step = j.contains("step") ? get_index(j.at("step"), path + "/step") : 1;
    return r;
  }
  if (kind == "gather") {
    check_keys(j, path, {"kind", "indices"});
    return GatherStrategy{get_index_list(need(j, path, "indices"), path + "/indices")};
  }
  fail(path + "/kind", "unknown strategy '" + kind + "'");
}

OpDecl parse_op(const json& j, const std::string& path) {
  check_keys(j, path,
             {"name", "kind", "kernel", "args", "cores", "batch", "arity", "element_size",
              "variable_length", "strategy", "length", "offsets", "warmup", "interval", "boundaries"});
  OpDecl op;
  op.name = get<std::string>(need(j, path, "name"), path + "/name");
  const auto kind = get<std::string>(need(j, path, "kind"), path + "/kind");
  auto forbid = [&](std::initializer_list<const char*> keys) {
    for (const char* k : keys)
      if (j.contains(k)) fail(path + "/" + k, "not valid for a " + kind + " op");
  };
  if (kind == "map") {
    forbid({"strategy", "length", "offsets", "warmup", "interval", "boundaries"});
    op.kind = ops::Map{};
  } else if (kind == "sample") {
    forbid({"length", "offsets", "warmup", "interval", "boundaries"});
    op.kind = ops::Sample{parse_strategy(need(j, path, "strategy"), path + "/strategy")};
  } else if (kind == "space") {
    forbid({"offsets", "warmup", "interval", "boundaries"});
    ops::Space s{parse_strategy(need(j, path, "strategy"), path + "/strategy"), std::nullopt};
    if (j.contains("length")) s.length = get_index(j.at("length"), path + "/length");
    op.kind = s;
  } else if (kind == "stencil") {
    forbid({"strategy", "length", "warmup", "interval", "boundaries"});
    op.kind = ops::Stencil{get_index_list(need(j, path, "offsets"), path + "/offsets")};
  } else if (kind == "bounded_state") {
    forbid({"strategy", "length", "offsets", "interval", "boundaries"});
    const json& w = need(j, path, "warmup");
    if (w.is_string() && w.get<std::string>() == "infinite")
      op.kind = ops::BoundedState{kInfiniteWarmup};
    else
      op.kind = ops::BoundedState{get_index(w, path + "/warmup")};
  } else if (kind == "slice") {
    forbid({"strategy", "length", "offsets", "warmup"});
    if (j.contains("interval") == j.contains("boundaries"))
      fail(path, "slice needs exactly one of 'interval' or 'boundaries'");
    if (j.contains("interval"))
      op.kind = ops::Slice{FixedIntervalPartitioner{get_index(j.at("interval"), path + "/interval")}};
    else
      op.kind = ops::Slice{BoundaryListPartitioner{get_index_list(j.at("boundaries"), path + "/boundaries")}};
  } else if (kind == "unslice") {
    forbid({"strategy", "length", "offsets", "warmup", "interval", "boundaries"});
    op.kind = ops::Unslice{};
  } else {
    fail(path + "/kind", "unknown op kind '" + kind + "'");
  }
  if (j.contains("kernel")) op.kernel = get<std::string>(j.at("kernel"), path + "/kernel");
  if (j.contains("args")) {
    if (!j.at("args").is_object()) fail(path + "/args", "expected an object");
    op.args = j.at("args");
  }
  if (j.contains("cores")) op.cpu_cores = static_cast<int>(get_index(j.at("cores"), path + "/cores"));
  if (j.contains("batch")) op.batch = get_index(j.at("batch"), path + "/batch");
  if (j.contains("arity")) {
    const Index a = get_index(j.at("arity"), path + "/arity");
    if (a < 1) fail(path + "/arity", "must be >= 1");
    op.arity = static_cast<std::size_t>(a);
  }
  if (j.contains("element_size"))
    op.element_size = static_cast<std::size_t>(get_index(j.at("element_size"), path + "/element_size"));
  if (j.contains("variable_length")) op.variable_length = get<bool>(j.at("variable_length"), path + "/variable_length");
  return op;
}

PointSelection parse_points(const json& j, const std::string& path) {
  const auto kind = get<std::string>(need(j, path, "kind"), path + "/kind");
  if (kind == "all") {
    check_keys(j, path, {"kind"});
    return {};
  }
  return PointSelection{parse_strategy(j, path)};
}

JobSpec parse_job(const json& j, const std::string& path) {
  JobSpec job;
  const json& inputs = need(j, path, "inputs");
  if (!inputs.is_object()) fail(path + "/inputs", "expected an object");
  for (const auto& [name, ref] : inputs.items()) {
    const auto text = get<std::string>(ref, path + "/inputs/" + name);
    try {
      job.inputs[name] = ColumnRef::parse(text);
    } catch (const ValidationError& e) {
      fail(path + "/inputs/" + name, e.what());
    }
  }
  job.output = get<std::string>(need(j, path, "output"), path + "/output");
  if (j.contains("points")) job.points = parse_points(j.at("points"), path + "/points");
  return job;
}

}  // namespace

ColumnRef ColumnRef::parse(const std::string& text) {
  const auto dot = text.rfind('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == text.size())
    throw ValidationError("expected 'table.column', got '" + text + "'");
  return {text.substr(0, dot), text.substr(dot + 1)};
}

RequiredSet PointSelection::resolve(Index length) const {
  if (!strategy) return RequiredSet::all(length);
  if (const auto* g = std::get_if<GatherStrategy>(&*strategy)) {
    for (std::size_t i = 0; i < g->indices.size(); ++i)
      if (g->indices[i] < 0 || g->indices[i] >= length || (i && g->indices[i] <= g->indices[i - 1]))
        throw ValidationError("requested point " + std::to_string(g->indices[i]) +
                              " is outside [0," + std::to_string(length) + ") or out of order");
  }
  if (const auto* r = std::get_if<RangeStrategy>(&*strategy);
      r && (r->end > length || r->start < 0 || r->step < 1 || r->end < r->start))
    throw ValidationError("requested range [" + std::to_string(r->start) + "," + std::to_string(r->end) +
                          ") is outside [0," + std::to_string(length) + ")");
  if (const auto* s = std::get_if<StrideStrategy>(&*strategy); s && s->stride < 1)
    throw ValidationError("requested stride must be >= 1");
  RequiredSetBuilder b;
  const Index n = selected_count(*strategy, length);
  for (Index k = 0; k < n; ++k) b.add(selected_point(*strategy, k));
  return b.build();
}

GraphSpec parse_graph(const json& j) {
  const std::string path = "/graph";
  check_keys(j, path, {"sources", "ops", "edges", "outputs"});
  GraphSpec g;
  std::map<std::string, NodeRef> names;
  const json& sources = need(j, path, "sources");
  if (!sources.is_array()) fail(path + "/sources", "expected an array");
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto p = path + "/sources/" + std::to_string(i);
    g.sources.push_back(get<std::string>(sources[i], p));
    if (!names.emplace(g.sources.back(), NodeRef::source(i)).second) fail(p, "duplicate name");
  }
  const json& ops_j = need(j, path, "ops");
  if (!ops_j.is_array()) fail(path + "/ops", "expected an array");
  for (std::size_t i = 0; i < ops_j.size(); ++i) {
    const auto p = path + "/ops/" + std::to_string(i);
    g.ops.push_back(parse_op(ops_j[i], p));
    if (!names.emplace(g.ops.back().name, NodeRef::op(i)).second) fail(p + "/name", "duplicate name");
  }
  auto resolve = [&](const json& v, const std::string& p) {
    const auto name = get<std::string>(v, p);
    auto it = names.find(name);
    if (it == names.end()) fail(p, "unknown node '" + name + "'");
    return it->second;
  };
  const json& edges = need(j, path, "edges");
  if (!edges.is_array()) fail(path + "/edges", "expected an array");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto p = path + "/edges/" + std::to_string(i);
    check_keys(edges[i], p, {"from", "to", "slot"});
    Edge e;
    e.from = resolve(need(edges[i], p, "from"), p + "/from");
    const NodeRef to = resolve(need(edges[i], p, "to"), p + "/to");
    if (to.kind != NodeRef::Kind::op) fail(p + "/to", "edges must end at an op");
    e.to_op = to.index;
    if (edges[i].contains("slot")) {
      const Index s = get_index(edges[i].at("slot"), p + "/slot");
      if (s < 0) fail(p + "/slot", "must be >= 0");
      e.slot = static_cast<std::size_t>(s);
    }
    g.edges.push_back(e);
  }
  const json& outputs = need(j, path, "outputs");
  if (!outputs.is_array()) fail(path + "/outputs", "expected an array");
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto p = path + "/outputs/" + std::to_string(i);
    check_keys(outputs[i], p, {"column", "from"});
    g.outputs.push_back({get<std::string>(need(outputs[i], p, "column"), p + "/column"),
                         resolve(need(outputs[i], p, "from"), p + "/from")});
  }
  return g;
}

JobFile parse_job_file(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann reports a byte offset; translate it to line:column.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ValidationError("job spec syntax error at line " + std::to_string(line) + ", column " +
                          std::to_string(col) + ": " + e.what());
  }
  check_keys(j, "", {"graph", "inputs", "output", "points", "jobs", "config"});
  JobFile f;
  f.graph = parse_graph(need(j, "", "graph"));
  const bool single = j.contains("inputs") || j.contains("output") || j.contains("points");
  if (single && j.contains("jobs")) fail("/jobs", "use either top-level inputs/output/points or 'jobs'");
  if (j.contains("jobs")) {
    const json& jobs = j.at("jobs");
    if (!jobs.is_array() || jobs.empty()) fail("/jobs", "expected a non-empty array");
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      const auto p = "/jobs/" + std::to_string(i);
      check_keys(jobs[i], p, {"inputs", "output", "points"});
      f.jobs.push_back(parse_job(jobs[i], p));
    }
  } else {
    f.jobs.push_back(parse_job(j, ""));
  }
  for (std::size_t i = 0; i < f.jobs.size(); ++i) {
    for (const auto& s : f.graph.sources)
      if (!f.jobs[i].inputs.count(s)) fail("/inputs", "source '" + s + "' is not bound (job " + std::to_string(i) + ")");
    for (const auto& [name, _] : f.jobs[i].inputs)
      if (std::find(f.graph.sources.begin(), f.graph.sources.end(), name) == f.graph.sources.end())
        fail("/inputs/" + name, "not a graph source");
  }
  if (j.contains("config")) {
    if (!j.at("config").is_object()) fail("/config", "expected an object");
    f.config = j.at("config");
  }
  return f;
}

JobFile load_job_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read job spec '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_job_file(ss.str());
}

}  // namespace framedag
