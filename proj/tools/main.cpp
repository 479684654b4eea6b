// framedag command-line driver.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include "framedag/bench.hpp"
#include "framedag/depanalysis.hpp"
#include "framedag/error.hpp"
#include "framedag/executor.hpp"
#include "framedag/framestore.hpp"
#include "framedag/jobspec.hpp"
#include "framedag/kernels.hpp"

using namespace framedag;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open '" + path + "'");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// --- ingest ----------------------------------------------------------------

struct IngestArgs {
  std::string path, table, column = "frames";
  std::size_t frame_size = 0;
  Index keyframe_interval = 30;
};

int cmd_ingest(const TableStore& store, const IngestArgs& a) {
  if (a.frame_size == 0) throw ValidationError("--frame-size must be >= 1");
  if (a.keyframe_interval < 1) throw ValidationError("--keyframe-interval must be >= 1");
  const Bytes raw = read_file(a.path);
  if (raw.empty() || raw.size() % a.frame_size != 0)
    throw ValidationError("input size " + std::to_string(raw.size()) + " is not a non-zero multiple of frame size " +
                          std::to_string(a.frame_size));
  FrameColumnBuilder builder(a.frame_size, KeyframePolicy{a.keyframe_interval, {}});
  for (std::size_t off = 0; off < raw.size(); off += a.frame_size)
    builder.append(ByteView(raw).subspan(off, a.frame_size));
  const FrameColumn col = builder.finish();
  store.write_frame_column(a.table, a.column, col);
  std::cout << "ingested " << col.frame_count << " frames into " << a.table << "." << a.column << " ("
            << col.index.size() << " keyframes, " << col.encoded_size() << " bytes encoded)\n";
  return 0;
}

// --- run -------------------------------------------------------------------

struct RunArgs {
  std::string spec;
  std::optional<std::size_t> workers;
  std::optional<int> cores;
  std::optional<Index> packet_size, io_packet_size;
  std::optional<int> max_retries;
  bool no_pipelining = false;
  std::string chaos;
  std::optional<double> add_worker_at;
  std::string report;
  bool strict = false;
  bool json = false;
};

int cmd_run(const TableStore& store, const RunArgs& a) {
  const JobFile file = load_job_file(a.spec);
  RunConfig config;
  apply_overrides(config, file.config);
  if (a.workers) config.workers = *a.workers;
  if (a.cores) config.machine = MachineResources{*a.cores, 1};
  if (a.packet_size) config.work_packet_size = *a.packet_size;
  if (a.io_packet_size) config.io_packet_size = *a.io_packet_size;
  if (a.max_retries) config.max_retries = *a.max_retries;
  if (a.no_pipelining) config.pipelining = false;
  if (a.add_worker_at) config.add_worker_at = *a.add_worker_at;
  if (a.strict) config.boundary = BoundaryPolicy::strict;
  if (!a.chaos.empty()) {
    ChaosConfig c;
    if (std::sscanf(a.chaos.c_str(), "%zu:%zu", &c.worker, &c.after_packets) != 2)
      throw ValidationError("--chaos expects WORKER:PACKETS, got '" + a.chaos + "'");
    config.chaos = c;
  }
  const KernelRegistry registry = KernelRegistry::with_builtins();
  const RunReport report = run_jobs(store, registry, file.graph, file.jobs, config);
  if (a.json)
    std::cout << report.to_json().dump(2) << "\n";
  else
    std::cout << report.summary();
  if (!a.report.empty()) {
    std::ofstream out(a.report);
    out << report.to_json().dump(2) << "\n";
    if (!out) throw StorageError("cannot write report '" + a.report + "'");
  }
  return 0;
}

// --- export ----------------------------------------------------------------

int cmd_export(const TableStore& store, const std::string& table, const std::string& column,
               const std::string& path) {
  const TableManifest m = store.manifest(table);
  const ColumnDescriptor& desc = m.column(column);
  std::ofstream data(path, std::ios::binary | std::ios::trunc);
  std::ofstream lengths(path + ".lengths", std::ios::trunc);
  if (!data || !lengths) throw StorageError("cannot write '" + path + "'");
  if (desc.kind == ColumnKind::frame) {
    const FrameColumn col = store.open_frame_column(table, column);
    const DecodePlan plan = plan_decode(col, RequiredSet::all(col.frame_count));
    read_decode(col, plan, [&](Index, ByteView p) {
      data.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size()));
      lengths << p.size() << "\n";
    });
  } else {
    const BlobColumn col = store.open_blob_column(table, column);
    for (Index r = 0; r < col.rows(); ++r) {
      const ElementView e = col.view(r);
      if (e.fill) {
        lengths << "fill\n";
        continue;
      }
      data.write(reinterpret_cast<const char*>(e.payload.data()), static_cast<std::streamsize>(e.payload.size()));
      lengths << e.payload.size() << "\n";
    }
  }
  if (!data || !lengths) throw StorageError("write to '" + path + "' failed");
  return 0;
}

// --- inspect ---------------------------------------------------------------

int cmd_inspect(const TableStore& store, const std::string& table, bool keyframes) {
  const TableManifest m = store.manifest(table);
  std::cout << "table " << m.name << "\n";
  std::cout << "rows " << m.rows << "\n";
  if (m.points) std::cout << "points " << m.points->size() << " of the output domain\n";
  for (const auto& c : m.columns) {
    if (c.kind == ColumnKind::frame) {
      const FrameColumn col = store.open_frame_column(table, c.name);
      std::cout << "column " << c.name << " frame size=" << c.frame_size << " rows=" << col.frame_count
                << " K=" << c.keyframe_interval << " keyframes=" << col.index.size()
                << " encoded_bytes=" << col.encoded_size()
                << " raw_bytes=" << static_cast<std::uint64_t>(col.frame_count) * c.frame_size << "\n";
      if (keyframes)
        for (const auto& e : col.index.entries()) std::cout << "  keyframe " << e.frame << " @" << e.offset << "\n";
    } else {
      const BlobColumn col = store.open_blob_column(table, c.name);
      Index fills = 0;
      std::uint64_t bytes = 0;
      for (Index r = 0; r < col.rows(); ++r) {
        const ElementView e = col.view(r);
        fills += e.fill ? 1 : 0;
        bytes += e.payload.size();
      }
      std::cout << "column " << c.name << " blob rows=" << col.rows() << " fill=" << fills
                << " payload_bytes=" << bytes << "\n";
    }
  }
  return 0;
}

// Per-node required sets for the first job of a spec, as the analyzer sees them.
int cmd_inspect_spec(const TableStore& store, const std::string& spec_path) {
  const JobFile file = load_job_file(spec_path);
  ValidationReport report = validate_graph(file.graph);
  validate_kernels(file.graph, KernelRegistry::with_builtins(), report);
  if (!report.ok()) throw ValidationError("invalid graph: " + report.to_string());
  const Graph g(file.graph);
  const JobSpec& job = file.jobs.front();
  std::vector<Index> lengths;
  for (const auto& s : file.graph.sources) {
    const ColumnRef& ref = job.inputs.at(s);
    lengths.push_back(store.manifest(ref.table).rows);
  }
  const auto domains = infer_domains(g, lengths);
  const RequiredSet requested = job.points.resolve(output_domain(g, domains).length);
  const Requirements req = back_propagate(g, domains, requested);
  for (NodeId n = 0; n < g.node_count(); ++n) {
    std::cout << g.node_name(n) << " length=" << domains[n].length << " required=" << req.required[n].size()
              << " computed=" << req.computed[n].size() << "\n  " << req.computed[n] << "\n";
  }
  return 0;
}

// --- bench / reencode ------------------------------------------------------

int cmd_bench(const TableStore& store, const std::string& table, std::vector<std::string> columns,
              std::vector<std::string> patterns, std::uint64_t seed) {
  const TableManifest m = store.manifest(table);
  if (columns.empty())
    for (const auto& c : m.columns)
      if (c.kind == ColumnKind::frame) columns.push_back(c.name);
  if (patterns.empty()) patterns = bench_patterns();
  std::cout << bench_csv_header() << "\n";
  for (const auto& c : columns) {
    const FrameColumn col = store.open_frame_column(table, c);
    for (const auto& p : patterns) std::cout << to_csv(bench_access(col, p, seed)) << "\n";
  }
  return 0;
}

int cmd_reencode(const TableStore& store, const std::string& table, const std::string& column,
                 const std::string& dest_table, const std::string& dest_column, Index k, Index stride) {
  if (k < 1) throw ValidationError("--keyframe-interval must be >= 1");
  if (stride < 1) throw ValidationError("--stride must be >= 1");
  const FrameColumn src = store.open_frame_column(table, column);
  const KeyframePolicy policy{k, {}};
  const FrameColumn out = stride == 1 ? reencode(src, policy)
                                      : reencode_sampled(src, StrideStrategy{stride}, policy);
  store.write_frame_column(dest_table.empty() ? table : dest_table, dest_column, out);
  std::cout << "wrote " << out.frame_count << " frames, " << out.index.size() << " keyframes, "
            << out.encoded_size() << " bytes\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"framedag: sparse dataflow over encoded frame tables"};
  app.require_subcommand(1);
  std::string store_root;
  app.add_option("--store", store_root, "Store root (default $FRAMEDAG_STORE or ./framedag_store)");

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Encode a raw file of fixed-size frames into a table column");
  ingest_cmd->add_option("path", ingest.path, "Raw input file")->required();
  ingest_cmd->add_option("--frame-size,-f", ingest.frame_size, "Bytes per frame")->required();
  ingest_cmd->add_option("--keyframe-interval,-k", ingest.keyframe_interval, "Keyframe interval K")
      ->capture_default_str();
  ingest_cmd->add_option("--table,-t", ingest.table, "Destination table")->required();
  ingest_cmd->add_option("--column,-c", ingest.column, "Destination column")->capture_default_str();

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run a job-spec file");
  run_cmd->add_option("spec", run.spec, "Job-spec JSON")->required();
  run_cmd->add_option("--workers,-w", run.workers, "Worker count");
  run_cmd->add_option("--cores", run.cores, "CPU cores per worker");
  run_cmd->add_option("--packet-size", run.packet_size, "Output points per work packet");
  run_cmd->add_option("--io-packet-size", run.io_packet_size, "Elements per load chunk");
  run_cmd->add_option("--max-retries", run.max_retries, "Attempts per packet beyond the first");
  run_cmd->add_flag("--no-pipelining", run.no_pipelining, "Load and compute serially");
  run_cmd->add_option("--chaos", run.chaos, "Kill worker W after it commits K packets (W:K)");
  run_cmd->add_option("--add-worker-at", run.add_worker_at, "Add a worker at this completed fraction");
  run_cmd->add_option("--report", run.report, "Write the run report as JSON");
  run_cmd->add_flag("--strict", run.strict, "Reject stencil or warmup reads past a slice edge");
  run_cmd->add_flag("--json", run.json, "Print the report as JSON");

  std::string table, column, path;
  auto* export_cmd = app.add_subcommand("export", "Write a column's payloads to a file");
  export_cmd->add_option("table", table)->required();
  export_cmd->add_option("column", column)->required();
  export_cmd->add_option("path", path)->required();

  bool show_keyframes = false;
  std::string spec_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Describe a table, or the analysis of a job spec");
  inspect_cmd->add_option("table", table);
  inspect_cmd->add_flag("--keyframes", show_keyframes, "List keyframe index entries");
  inspect_cmd->add_option("--spec", spec_path, "Print per-node required sets for a job spec");

  std::vector<std::string> columns, patterns;
  std::uint64_t seed = 1;
  auto* bench_cmd = app.add_subcommand("bench", "Decode-work counters for access patterns (CSV)");
  bench_cmd->add_option("table", table)->required();
  bench_cmd->add_option("--column,-c", columns, "Frame columns (default: all)");
  bench_cmd->add_option("--pattern,-p", patterns, "stride-N, gather, range, keyframes (default: all)");
  bench_cmd->add_option("--seed", seed)->capture_default_str();

  std::string dest_table, dest_column;
  Index k = 30, stride = 1;
  auto* reencode_cmd = app.add_subcommand("reencode", "Re-encode a frame column with a new keyframe layout");
  reencode_cmd->add_option("table", table)->required();
  reencode_cmd->add_option("column", column)->required();
  reencode_cmd->add_option("--keyframe-interval,-k", k)->capture_default_str();
  reencode_cmd->add_option("--stride", stride, "Keep every n-th frame")->capture_default_str();
  reencode_cmd->add_option("--to-table", dest_table, "Destination table (default: same)");
  reencode_cmd->add_option("--to-column", dest_column, "Destination column")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    const TableStore store = store_root.empty() ? TableStore::from_env() : TableStore(store_root);
    if (*ingest_cmd) return cmd_ingest(store, ingest);
    if (*run_cmd) return cmd_run(store, run);
    if (*export_cmd) return cmd_export(store, table, column, path);
    if (*inspect_cmd) {
      if (!spec_path.empty()) return cmd_inspect_spec(store, spec_path);
      if (table.empty()) throw ValidationError("inspect needs a table or --spec");
      return cmd_inspect(store, table, show_keyframes);
    }
    if (*bench_cmd) return cmd_bench(store, table, columns, patterns, seed);
    if (*reencode_cmd) return cmd_reencode(store, table, column, dest_table, dest_column, k, stride);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
