#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "framedag/depanalysis.hpp"
#include "framedag/element.hpp"
#include "framedag/framestore.hpp"
#include "framedag/graph.hpp"
#include "framedag/jobspec.hpp"
#include "framedag/kernels.hpp"

namespace framedag {

struct MachineResources {
  int cpu_cores = 1;
  int io_parallelism = 1;
};

/// Cores one graph instance occupies: the sum over kernel ops. Engine-run
/// ops (sample, space, slice, unslice) are not counted.
int graph_cores(const GraphSpec& graph);

/// max(1, floor(machine cores / graph cores)).
std::size_t plan_instances(const GraphSpec& graph, const MachineResources& machine);

/// A chunk of consecutive requested output points.
struct WorkPacket {
  std::size_t index = 0;
  RequiredSet outputs;
  Index first_row = 0;  // output-table row of outputs.front()
};

/// Chunks `requested` in order into packets of at most `packet_size` points.
/// Dependency analysis happens later, per packet, when the packet is run.
std::vector<WorkPacket> partition(const RequiredSet& requested, Index packet_size);

/// Warmup invocations per bounded-state op (keyed by op index) for one
/// analysed packet.
std::map<std::size_t, Index> warmup_prefix(const Graph& graph, const Requirements& req);

/// Values of one sequence at a sparse set of points.
struct SparseSequence {
  RequiredSet points;
  std::vector<Element> values;  // values[k] belongs to points.at(k)

  const Element& at(Index p) const;
};

struct PacketCounters {
  Index elements_computed = 0;
  Index elements_discarded_warmup = 0;
  Index elements_loaded = 0;
  Index kernel_invocations = 0;

  PacketCounters& operator+=(const PacketCounters& o);
};

struct PacketOutput {
  /// One column per graph output, one element per packet output point.
  std::vector<std::vector<Element>> columns;
  PacketCounters counters;
};

/// One replica of the graph with private kernel state.
class GraphInstance {
 public:
  GraphInstance(std::shared_ptr<const Graph> graph, const KernelRegistry& registry,
                std::size_t id = 0);

  std::size_t id() const { return id_; }
  const Graph& graph() const { return *graph_; }

  /// Runs every op in topological order over the packet's computed sets.
  /// `sources` holds the loaded values of each source at its required points.
  /// Kernel failures surface as KernelError.
  PacketOutput execute_packet(const WorkPacket& packet, const Requirements& req,
                              const std::vector<SequenceDomain>& domains,
                              const std::vector<SparseSequence>& sources);

 private:
  std::shared_ptr<const Graph> graph_;
  const KernelRegistry& registry_;
  std::size_t id_;
  std::vector<std::unique_ptr<Kernel>> kernels_;  // per op; null for engine-run ops
  std::vector<const KernelDecl*> decls_;
};

struct ChaosConfig {
  std::size_t worker = 0;
  /// The worker dies holding its next packet once it has committed this many.
  std::size_t after_packets = 0;
};

struct RunConfig {
  std::size_t workers = 1;
  /// Per-worker resources; defaults to exactly one graph instance per worker.
  std::optional<MachineResources> machine;
  Index work_packet_size = 128;
  Index io_packet_size = 1024;
  bool pipelining = true;
  int max_retries = 3;
  std::optional<ChaosConfig> chaos;
  /// Adds one worker once this fraction of packets has committed.
  std::optional<double> add_worker_at;
  bool write_output = true;
  BoundaryPolicy boundary = BoundaryPolicy::clamp;
};

/// Applies job-spec "config" overrides. Unknown keys throw ValidationError.
void apply_overrides(RunConfig& config, const nlohmann::json& overrides);

struct WorkerReport {
  std::size_t id = 0;
  std::size_t packets_committed = 0;
  std::size_t instances = 0;
  int peak_cores_in_use = 0;
  bool added_mid_run = false;
  bool killed = false;
};

struct RunReport {
  std::vector<WorkerReport> workers;
  std::vector<std::string> output_tables;
  std::size_t packets = 0;
  std::size_t retries = 0;
  DecodeCounters decode;
  PacketCounters compute;
  std::size_t overlapped_loads = 0;
  int machine_cores = 0;  // per worker
  double wall_ms = 0;

  nlohmann::json to_json() const;
  std::string summary() const;
};

/// Validates the graph against the registry and inputs, then runs every job
/// on one shared worker pool. Each job writes its output table atomically.
/// Throws ValidationError for bad graphs or bindings, KernelError when a
/// packet exhausts its retries, StorageError for store failures.
RunReport run_jobs(const TableStore& store, const KernelRegistry& registry,
                   const GraphSpec& graph, const std::vector<JobSpec>& jobs,
                   const RunConfig& config);

inline RunReport run_job(const TableStore& store, const KernelRegistry& registry,
                         const GraphSpec& graph, const JobSpec& job, const RunConfig& config) {
  return run_jobs(store, registry, graph, {job}, config);
}

}  // namespace framedag
