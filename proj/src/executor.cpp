#include "framedag/executor.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <semaphore>
#include <set>
#include <sstream>
#include <thread>

#include "framedag/error.hpp"

namespace framedag {

namespace fs = std::filesystem;

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

int graph_cores(const GraphSpec& graph) {
  int total = 0;
  for (const auto& op : graph.ops)
    if (!is_system_op(op.kind)) total += op.cpu_cores;
  return std::max(total, 1);
}

std::size_t plan_instances(const GraphSpec& graph, const MachineResources& machine) {
  const int per_instance = graph_cores(graph);
  return static_cast<std::size_t>(std::max(1, machine.cpu_cores / per_instance));
}

std::vector<WorkPacket> partition(const RequiredSet& requested, Index packet_size) {
  if (packet_size < 1) throw ValidationError("work packet size must be >= 1");
  std::vector<WorkPacket> out;
  for (Index first = 0; first < requested.size(); first += packet_size)
    out.push_back({out.size(), requested.slice_by_rank(first, packet_size), first});
  return out;
}

std::map<std::size_t, Index> warmup_prefix(const Graph& graph, const Requirements& req) {
  std::map<std::size_t, Index> out;
  for (std::size_t i = 0; i < graph.op_count(); ++i)
    if (std::holds_alternative<ops::BoundedState>(graph.op(i).kind))
      out[i] = req.warmup_points(graph.op_node(i));
  return out;
}

const Element& SparseSequence::at(Index p) const {
  const Index r = points.rank(p);
  if (r < 0) throw std::logic_error("point " + std::to_string(p) + " was not computed");
  return values[static_cast<std::size_t>(r)];
}

PacketCounters& PacketCounters::operator+=(const PacketCounters& o) {
  elements_computed += o.elements_computed;
  elements_discarded_warmup += o.elements_discarded_warmup;
  elements_loaded += o.elements_loaded;
  kernel_invocations += o.kernel_invocations;
  return *this;
}

// ---------------------------------------------------------------------------
// GraphInstance

GraphInstance::GraphInstance(std::shared_ptr<const Graph> graph, const KernelRegistry& registry,
                             std::size_t id)
    : graph_(std::move(graph)), registry_(registry), id_(id) {
  kernels_.resize(graph_->op_count());
  decls_.resize(graph_->op_count(), nullptr);
  for (std::size_t i = 0; i < graph_->op_count(); ++i) {
    const OpDecl& op = graph_->op(i);
    if (is_system_op(op.kind)) continue;
    KernelArgs args{op.args, 0};
    if (const auto* bs = std::get_if<ops::BoundedState>(&op.kind)) args.warmup = bs->warmup;
    decls_[i] = &registry_.decl(op.kernel);
    kernels_[i] = registry_.make(op.kernel, args);
  }
}

PacketOutput GraphInstance::execute_packet(const WorkPacket& packet, const Requirements& req,
                                           const std::vector<SequenceDomain>& domains,
                                           const std::vector<SparseSequence>& sources) {
  const Graph& g = *graph_;
  PacketOutput result;
  std::vector<const SparseSequence*> seq(g.node_count(), nullptr);
  for (std::size_t s = 0; s < g.source_count(); ++s) {
    seq[s] = &sources.at(s);
    result.counters.elements_loaded += sources[s].points.size();
  }
  std::vector<SparseSequence> produced(g.op_count());
  std::vector<Bytes> outs;

  for (std::size_t i : g.topo_order()) {
    const OpDecl& op = g.op(i);
    const NodeId self = g.op_node(i);
    const auto& in = g.inputs(i);
    SparseSequence& out = produced[i];
    seq[self] = &out;
    out.points = req.computed[self];
    const RequiredSet& compute = out.points;
    out.values.resize(static_cast<std::size_t>(compute.size()));
    if (compute.empty()) continue;
    const SparseSequence& first = *seq[in.front()];
    const SequenceDomain& dom = domains[self];

    std::size_t k = 0;
    std::visit(
        overloaded{
            [&](const ops::Sample& s) {
              compute.for_each([&](Index p) { out.values[k++] = first.at(selected_point(s.strategy, p)); });
            },
            [&](const ops::Space& s) {
              const Index count = selected_count(s.strategy, dom.length);
              compute.for_each([&](Index p) {
                const Index j = first_rank_at_or_after(s.strategy, dom.length, p);
                out.values[k++] = (j < count && selected_point(s.strategy, j) == p)
                                      ? first.at(j)
                                      : Element::make_fill();
              });
            },
            [&](const ops::Slice&) { compute.for_each([&](Index p) { out.values[k++] = first.at(p); }); },
            [&](const ops::Unslice&) { compute.for_each([&](Index p) { out.values[k++] = first.at(p); }); },
            [&](const auto&) {
              Kernel& kernel = *kernels_[i];
              const KernelDecl& decl = *decls_[i];
              std::vector<Index> offsets{0};
              if (const auto* st = std::get_if<ops::Stencil>(&op.kind)) offsets = st->offsets;
              const bool stateful = std::holds_alternative<ops::BoundedState>(op.kind);

              // Stateful kernels restart at every gap and slice start in their
              // invocation set; batches never straddle a restart.
              std::vector<RequiredSet> pieces;
              if (stateful) {
                for (const auto& iv : compute.intervals()) {
                  Index a = iv.start;
                  while (a < iv.end) {
                    const Index b = std::min(iv.end, dom.slice_of(a).end);
                    pieces.push_back(RequiredSet::from_interval(a, b));
                    a = b;
                  }
                }
              } else {
                pieces.push_back(compute);
              }

              KernelBatch batch;
              std::vector<std::size_t> slots_of_rows;
              for (const auto& piece : pieces) {
                if (stateful) kernel.reset();
                for (const RequiredSet& chunk : coalesce_batches(piece, op.batch)) {
                  batch.points.clear();
                  batch.fields.assign(in.size() * offsets.size(), {});
                  slots_of_rows.clear();
                  chunk.for_each([&](Index p) {
                    const std::size_t pos = static_cast<std::size_t>(compute.rank(p));
                    const Interval slice = dom.slice_of(p);
                    bool any_fill = false;
                    std::size_t f = 0;
                    for (NodeId src : in) {
                      for (Index o : offsets) {
                        const Index q = std::clamp(p + o, slice.start, slice.end - 1);
                        const Element& e = seq[src]->at(q);
                        any_fill = any_fill || e.fill;
                        batch.fields[f++].emplace_back(e);
                      }
                    }
                    if (any_fill && !decl.accepts_fill) {
                      for (auto& field : batch.fields) field.pop_back();
                      out.values[pos] = Element::make_fill();
                      return;
                    }
                    batch.points.push_back(p);
                    slots_of_rows.push_back(pos);
                  });
                  if (batch.rows() == 0) continue;
                  outs.assign(batch.rows(), Bytes{});
                  kernel.execute(batch, outs);
                  ++result.counters.kernel_invocations;
                  for (std::size_t r = 0; r < batch.rows(); ++r) {
                    if (op.element_size && outs[r].size() != *op.element_size)
                      throw KernelError("op '" + op.name + "' produced " + std::to_string(outs[r].size()) +
                                        " bytes, declared " + std::to_string(*op.element_size));
                    out.values[slots_of_rows[r]] = Element{std::move(outs[r]), false};
                  }
                }
              }
            },
        },
        op.kind);

    result.counters.elements_computed += compute.size();
    if (std::holds_alternative<ops::BoundedState>(op.kind))
      result.counters.elements_discarded_warmup += req.warmup_points(self);
  }

  for (NodeId n : g.output_nodes()) {
    std::vector<Element> column;
    column.reserve(static_cast<std::size_t>(packet.outputs.size()));
    packet.outputs.for_each([&](Index p) { column.push_back(seq[n]->at(p)); });
    result.columns.push_back(std::move(column));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Run configuration and report

void apply_overrides(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config overrides must be an object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "workers") c.workers = v.get<std::size_t>();
      else if (key == "cores") c.machine = MachineResources{v.get<int>(), c.machine ? c.machine->io_parallelism : 1};
      else if (key == "work_packet_size") c.work_packet_size = v.get<Index>();
      else if (key == "io_packet_size") c.io_packet_size = v.get<Index>();
      else if (key == "pipelining") c.pipelining = v.get<bool>();
      else if (key == "max_retries") c.max_retries = v.get<int>();
      else if (key == "add_worker_at") c.add_worker_at = v.get<double>();
      else if (key == "chaos") {
        ChaosConfig ch;
        ch.worker = v.at("worker").get<std::size_t>();
        ch.after_packets = v.at("after_packets").get<std::size_t>();
        c.chaos = ch;
      } else {
        throw ValidationError("job spec /config/" + key + ": unknown field");
      }
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("job spec /config/" + key + ": has the wrong type");
    }
  }
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json j;
  j["packets"] = packets;
  j["retries"] = retries;
  j["frames_decoded"] = decode.frames_decoded;
  j["frames_emitted"] = decode.frames_emitted;
  j["bytes_read"] = decode.bytes_read;
  j["elements_computed"] = compute.elements_computed;
  j["elements_discarded_warmup"] = compute.elements_discarded_warmup;
  j["elements_loaded"] = compute.elements_loaded;
  j["kernel_invocations"] = compute.kernel_invocations;
  j["overlapped_loads"] = overlapped_loads;
  j["machine_cores"] = machine_cores;
  j["wall_ms"] = wall_ms;
  j["output_tables"] = output_tables;
  j["workers"] = nlohmann::json::array();
  for (const auto& w : workers)
    j["workers"].push_back({{"id", w.id},
                            {"packets", w.packets_committed},
                            {"instances", w.instances},
                            {"peak_cores_in_use", w.peak_cores_in_use},
                            {"added_mid_run", w.added_mid_run},
                            {"killed", w.killed}});
  return j;
}

std::string RunReport::summary() const {
  std::ostringstream os;
  os << "packets " << packets << ", retries " << retries << ", wall " << wall_ms << " ms\n";
  os << "frames decoded " << decode.frames_decoded << ", emitted " << decode.frames_emitted
     << ", bytes read " << decode.bytes_read << "\n";
  os << "elements computed " << compute.elements_computed << ", warmup discarded "
     << compute.elements_discarded_warmup << ", kernel invocations " << compute.kernel_invocations << "\n";
  for (const auto& w : workers) {
    os << "worker " << w.id << ": " << w.packets_committed << " packets, " << w.instances
       << " instance(s)";
    if (w.added_mid_run) os << " [added]";
    if (w.killed) os << " [killed]";
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Runtime

namespace {

struct SourceColumn {
  std::string key;
  std::optional<FrameColumn> frames;
  std::optional<BlobColumn> blobs;
  Index length = 0;
};

// Packet outputs are staged as one file per (packet, column) and stitched in
// packet order when the job finishes.
class OutputStage {
 public:
  OutputStage(const TableStore& store, const std::string& table, Index rows,
              std::vector<std::string> columns)
      : writer_(store.root(), table, rows), columns_(std::move(columns)) {
    dir_ = writer_.staging_dir() / "packets";
    fs::create_directories(dir_);
  }

  void stage(const WorkPacket& packet, const PacketOutput& out) {
    Bytes buf;
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      buf.clear();
      for (const auto& e : out.columns[c]) append_blob_record(e, buf);
      const fs::path final_path = path(packet.index, c);
      const fs::path tmp = final_path.string() + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
      {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!f) throw StorageError("cannot stage packet output " + tmp.string());
      }
      fs::rename(tmp, final_path);
    }
  }

  void finalize(std::size_t packets, const std::optional<RequiredSet>& points) {
    if (points) writer_.set_points(*points);
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      auto sink = writer_.open_blob_column(columns_[c]);
      for (std::size_t p = 0; p < packets; ++p) {
        auto data = map_file(path(p, c));
        sink.append_encoded(data->bytes());
      }
      sink.close();
    }
    fs::remove_all(dir_);
    writer_.commit();
  }

 private:
  fs::path path(std::size_t packet, std::size_t column) const {
    return dir_ / ("p" + std::to_string(packet) + ".c" + std::to_string(column));
  }

  TableWriter writer_;
  std::vector<std::string> columns_;
  fs::path dir_;
};

struct PreparedJob {
  JobSpec spec;
  std::vector<SourceColumn> sources;
  std::unique_ptr<DependencyAnalyzer> analyzer;
  RequiredSet requested;
  bool all_points = true;
  std::vector<WorkPacket> packets;
  std::unique_ptr<OutputStage> output;
};

struct PacketRef {
  std::size_t job;
  std::size_t packet;
};

enum class ControlEvent { done, fatal, add_worker, no_workers };

class Scheduler {
 public:
  Scheduler(std::vector<PacketRef> refs, int max_retries)
      : refs_(std::move(refs)), state_(refs_.size()), max_retries_(max_retries) {
    for (std::size_t g = 0; g < refs_.size(); ++g) pending_.insert(g);
  }

  const PacketRef& ref(std::size_t gid) const { return refs_[gid]; }
  std::size_t total() const { return refs_.size(); }

  void register_worker(std::size_t w) {
    std::lock_guard lock(mu_);
    if (dead_.size() <= w) {
      dead_.resize(w + 1, false);
      committed_by_.resize(w + 1, 0);
    }
    ++live_;
  }

  /// Blocks until a packet is available; nullopt once the run is over for `w`.
  std::optional<std::size_t> acquire(std::size_t w) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return stopped() || dead_[w] || !pending_.empty(); });
    if (stopped() || dead_[w]) return std::nullopt;
    const std::size_t gid = *pending_.begin();
    pending_.erase(pending_.begin());
    state_[gid].owner = w;
    return gid;
  }

  /// Records a commit. False when the packet is no longer owned by `w`.
  bool commit(std::size_t w, std::size_t gid, const PacketCounters& counters,
              const std::function<void()>& publish) {
    std::lock_guard lock(mu_);
    auto& s = state_[gid];
    if (dead_[w] || s.committed || s.owner != w) return false;
    publish();
    s.committed = true;
    s.owner.reset();
    ++committed_;
    ++committed_by_[w];
    counters_ += counters;
    cv_.notify_all();
    return true;
  }

  void fail(std::size_t w, std::size_t gid, const std::string& error) {
    std::lock_guard lock(mu_);
    auto& s = state_[gid];
    if (s.committed || s.owner != w) return;
    s.owner.reset();
    if (++s.attempts > max_retries_) {
      if (!fatal_)
        fatal_ = "packet " + std::to_string(refs_[gid].packet) + " of job " +
                 std::to_string(refs_[gid].job) + " failed after " + std::to_string(s.attempts) +
                 " attempts: " + error;
    } else {
      ++retries_;
      pending_.insert(gid);
    }
    cv_.notify_all();
  }

  /// Marks `w` dead and puts every packet it held back on the queue.
  void worker_lost(std::size_t w) {
    std::lock_guard lock(mu_);
    if (dead_[w]) return;
    dead_[w] = true;
    --live_;
    for (std::size_t g = 0; g < state_.size(); ++g) {
      if (state_[g].owner == w && !state_[g].committed) {
        state_[g].owner.reset();
        pending_.insert(g);
        ++retries_;
      }
    }
    cv_.notify_all();
  }

  std::size_t committed_by(std::size_t w) const {
    std::lock_guard lock(mu_);
    return committed_by_[w];
  }

  bool is_dead(std::size_t w) const {
    std::lock_guard lock(mu_);
    return dead_[w];
  }

  ControlEvent wait_event(std::optional<std::size_t> add_threshold) {
    std::unique_lock lock(mu_);
    ControlEvent ev{};
    cv_.wait(lock, [&] {
      if (fatal_) { ev = ControlEvent::fatal; return true; }
      if (committed_ == refs_.size()) { ev = ControlEvent::done; return true; }
      if (add_threshold && committed_ >= *add_threshold) { ev = ControlEvent::add_worker; return true; }
      if (live_ == 0) { ev = ControlEvent::no_workers; return true; }
      return false;
    });
    return ev;
  }

  void shutdown() {
    std::lock_guard lock(mu_);
    shutdown_ = true;
    cv_.notify_all();
  }

  void set_fatal(std::string msg) {
    std::lock_guard lock(mu_);
    if (!fatal_) fatal_ = std::move(msg);
    cv_.notify_all();
  }

  std::optional<std::string> fatal() const {
    std::lock_guard lock(mu_);
    return fatal_;
  }
  std::size_t retries() const {
    std::lock_guard lock(mu_);
    return retries_;
  }
  PacketCounters counters() const {
    std::lock_guard lock(mu_);
    return counters_;
  }

 private:
  bool stopped() const { return shutdown_ || fatal_ || committed_ == refs_.size(); }

  struct State {
    int attempts = 0;
    bool committed = false;
    std::optional<std::size_t> owner;
  };

  std::vector<PacketRef> refs_;
  std::vector<State> state_;
  int max_retries_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::set<std::size_t> pending_;  // lowest global id first
  std::vector<bool> dead_;
  std::vector<std::size_t> committed_by_;
  std::size_t live_ = 0;
  std::size_t committed_ = 0;
  std::size_t retries_ = 0;
  PacketCounters counters_;
  std::optional<std::string> fatal_;
  bool shutdown_ = false;
};

struct LoadedPacket {
  std::size_t gid = 0;
  std::shared_ptr<const Requirements> req;
  std::vector<SparseSequence> sources;
};

// Single-producer single-consumer hand-off between an instance's load and
// compute stages. Capacity 1 keeps at most two packets in flight.
class Channel {
 public:
  bool push(LoadedPacket item) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return closed_ || !slot_; });
    if (closed_) return false;
    slot_ = std::move(item);
    cv_.notify_all();
    return true;
  }
  std::optional<LoadedPacket> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return closed_ || slot_ || finished_; });
    if (slot_) {
      auto item = std::move(slot_);
      slot_.reset();
      cv_.notify_all();
      return item;
    }
    return std::nullopt;
  }
  void finish() {
    std::lock_guard lock(mu_);
    finished_ = true;
    cv_.notify_all();
  }
  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    slot_.reset();
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::optional<LoadedPacket> slot_;
  bool closed_ = false;
  bool finished_ = false;
};

struct RunShared {
  const RunConfig& config;
  std::vector<PreparedJob>& jobs;
  Scheduler& scheduler;
  int graph_cores;
};

struct InstanceRuntime {
  InstanceRuntime(std::shared_ptr<const Graph> g, const KernelRegistry& r, std::size_t id)
      : instance(std::move(g), r, id) {}
  GraphInstance instance;
  std::map<std::string, FrameDecoder> decoders;  // one per input column
  std::atomic<bool> computing{false};
  DecodeCounters decode;
  std::size_t overlapped = 0;
};

class WorkerRuntime {
 public:
  WorkerRuntime(std::size_t id, MachineResources machine, std::size_t instances,
                std::shared_ptr<const Graph> graph, const KernelRegistry& registry, RunShared shared,
                bool added)
      : id_(id), machine_(machine), shared_(shared), io_(std::max(1, machine.io_parallelism)) {
    report_.id = id;
    report_.instances = instances;
    report_.added_mid_run = added;
    for (std::size_t i = 0; i < instances; ++i)
      instances_.push_back(std::make_unique<InstanceRuntime>(graph, registry, i));
  }

  void start() {
    shared_.scheduler.register_worker(id_);
    for (auto& inst : instances_) {
      if (shared_.config.pipelining) {
        auto ch = std::make_shared<Channel>();
        threads_.emplace_back([this, &inst = *inst, ch] { load_loop(inst, *ch); });
        threads_.emplace_back([this, &inst = *inst, ch] { compute_loop(inst, *ch); });
      } else {
        threads_.emplace_back([this, &inst = *inst] { serial_loop(inst); });
      }
    }
  }

  void join() {
    for (auto& t : threads_)
      if (t.joinable()) t.join();
  }

  WorkerReport report() const {
    WorkerReport r = report_;
    r.packets_committed = shared_.scheduler.committed_by(id_);
    r.peak_cores_in_use = peak_cores_.load();
    r.killed = killed_.load();
    return r;
  }

  DecodeCounters decode() const {
    DecodeCounters d;
    for (const auto& i : instances_) d += i->decode;
    return d;
  }
  std::size_t overlapped() const {
    std::size_t n = 0;
    for (const auto& i : instances_) n += i->overlapped;
    return n;
  }

 private:
  bool should_die() {
    const auto& chaos = shared_.config.chaos;
    if (!chaos || chaos->worker != id_ || report_.added_mid_run) return false;
    if (shared_.scheduler.committed_by(id_) < chaos->after_packets) return false;
    killed_ = true;
    shared_.scheduler.worker_lost(id_);
    return true;
  }

  LoadedPacket load(InstanceRuntime& inst, std::size_t gid) {
    if (inst.computing.load()) ++inst.overlapped;
    io_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{io_};

    const PacketRef& ref = shared_.scheduler.ref(gid);
    PreparedJob& job = shared_.jobs[ref.job];
    const WorkPacket& packet = job.packets[ref.packet];
    LoadedPacket lp;
    lp.gid = gid;
    lp.req = job.analyzer->analyze(packet.index, packet.outputs);
    lp.sources.resize(job.sources.size());
    for (std::size_t s = 0; s < job.sources.size(); ++s) {
      const SourceColumn& col = job.sources[s];
      SparseSequence& seq = lp.sources[s];
      seq.points = lp.req->computed[s];
      seq.values.reserve(static_cast<std::size_t>(seq.points.size()));
      if (col.frames) {
        FrameDecoder& dec = inst.decoders[col.key];
        const Index io = std::max<Index>(1, shared_.config.io_packet_size);
        for (Index first = 0; first < seq.points.size(); first += io) {
          const DecodePlan plan = plan_decode(*col.frames, seq.points.slice_by_rank(first, io));
          inst.decode += dec.read(*col.frames, plan, [&](Index, ByteView payload) {
            seq.values.push_back(Element{Bytes(payload.begin(), payload.end()), false});
          });
        }
      } else {
        seq.points.for_each([&](Index p) { seq.values.push_back(col.blobs->read(p)); });
      }
    }
    return lp;
  }

  void compute_and_commit(InstanceRuntime& inst, LoadedPacket& lp) {
    const PacketRef& ref = shared_.scheduler.ref(lp.gid);
    PreparedJob& job = shared_.jobs[ref.job];
    const WorkPacket& packet = job.packets[ref.packet];

    const int now = cores_in_use_ += shared_.graph_cores;
    int peak = peak_cores_.load();
    while (now > peak && !peak_cores_.compare_exchange_weak(peak, now)) {}
    inst.computing = true;
    PacketOutput out;
    try {
      out = inst.instance.execute_packet(packet, *lp.req, job.analyzer->domains(), lp.sources);
    } catch (...) {
      inst.computing = false;
      cores_in_use_ -= shared_.graph_cores;
      throw;
    }
    inst.computing = false;
    cores_in_use_ -= shared_.graph_cores;

    if (job.output && shared_.config.write_output) job.output->stage(packet, out);
    shared_.scheduler.commit(id_, lp.gid, out.counters, [] {});
  }

  void report_failure(std::size_t gid, const std::exception& e) {
    shared_.scheduler.fail(id_, gid, e.what());
  }

  void serial_loop(InstanceRuntime& inst) {
    while (auto gid = shared_.scheduler.acquire(id_)) {
      if (should_die()) return;
      try {
        LoadedPacket lp = load(inst, *gid);
        compute_and_commit(inst, lp);
      } catch (const std::exception& e) {
        report_failure(*gid, e);
      }
      if (shared_.scheduler.is_dead(id_)) return;
    }
  }

  void load_loop(InstanceRuntime& inst, Channel& ch) {
    while (auto gid = shared_.scheduler.acquire(id_)) {
      LoadedPacket lp;
      try {
        lp = load(inst, *gid);
      } catch (const std::exception& e) {
        report_failure(*gid, e);
        continue;
      }
      if (!ch.push(std::move(lp))) break;
    }
    ch.finish();
  }

  void compute_loop(InstanceRuntime& inst, Channel& ch) {
    while (auto lp = ch.pop()) {
      if (should_die() || shared_.scheduler.is_dead(id_)) break;
      try {
        compute_and_commit(inst, *lp);
      } catch (const std::exception& e) {
        report_failure(lp->gid, e);
      }
    }
    ch.close();
  }

  std::size_t id_;
  MachineResources machine_;
  RunShared shared_;
  std::vector<std::unique_ptr<InstanceRuntime>> instances_;
  std::vector<std::thread> threads_;
  std::atomic<int> cores_in_use_{0};
  std::atomic<int> peak_cores_{0};
  std::atomic<bool> killed_{false};
  std::counting_semaphore<> io_;
  WorkerReport report_;
};

}  // namespace

RunReport run_jobs(const TableStore& store, const KernelRegistry& registry, const GraphSpec& spec,
                   const std::vector<JobSpec>& specs, const RunConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  if (config.workers < 1) throw ValidationError("at least one worker is required");
  if (config.work_packet_size < 1) throw ValidationError("work packet size must be >= 1");
  if (config.io_packet_size < 1) throw ValidationError("io packet size must be >= 1");
  if (config.max_retries < 0) throw ValidationError("max retries must be >= 0");
  if (config.add_worker_at && (*config.add_worker_at < 0 || *config.add_worker_at > 1))
    throw ValidationError("add_worker_at must be in [0, 1]");
  if (specs.empty()) throw ValidationError("no jobs to run");

  ValidationReport report = validate_graph(spec);
  validate_kernels(spec, registry, report);
  if (!report.ok()) throw ValidationError("invalid graph: " + report.to_string());
  auto graph = std::make_shared<const Graph>(spec);

  std::vector<PreparedJob> jobs(specs.size());
  std::set<std::string> output_names;
  std::vector<PacketRef> refs;
  for (std::size_t j = 0; j < specs.size(); ++j) {
    PreparedJob& job = jobs[j];
    job.spec = specs[j];
    if (!output_names.insert(job.spec.output).second)
      throw ValidationError("two jobs write table '" + job.spec.output + "'");
    std::vector<Index> lengths;
    for (const auto& src : spec.sources) {
      auto it = job.spec.inputs.find(src);
      if (it == job.spec.inputs.end()) throw ValidationError("source '" + src + "' is not bound");
      if (it->second.table == job.spec.output)
        throw ValidationError("job reads and writes table '" + job.spec.output + "'");
      const TableManifest m = store.manifest(it->second.table);
      SourceColumn col;
      col.key = it->second.to_string();
      col.length = m.rows;
      if (m.column(it->second.column).kind == ColumnKind::frame)
        col.frames = store.open_frame_column(it->second.table, it->second.column);
      else
        col.blobs = store.open_blob_column(it->second.table, it->second.column);
      lengths.push_back(col.length);
      job.sources.push_back(std::move(col));
    }
    auto domains = infer_domains(*graph, lengths);
    const Index out_len = output_domain(*graph, domains).length;
    job.requested = job.spec.points.resolve(out_len);
    job.all_points = job.requested == RequiredSet::all(out_len);
    job.analyzer = std::make_unique<DependencyAnalyzer>(*graph, std::move(domains), config.boundary);
    if (config.boundary == BoundaryPolicy::strict)
      back_propagate(*graph, job.analyzer->domains(), job.requested, config.boundary);
    job.packets = partition(job.requested, config.work_packet_size);
    for (std::size_t p = 0; p < job.packets.size(); ++p) refs.push_back({j, p});
    if (config.write_output) {
      std::vector<std::string> cols;
      for (const auto& o : spec.outputs) cols.push_back(o.column);
      job.output = std::make_unique<OutputStage>(store, job.spec.output, job.requested.size(), cols);
    }
  }

  Scheduler scheduler(std::move(refs), config.max_retries);
  const MachineResources machine =
      config.machine.value_or(MachineResources{graph_cores(spec), 1});
  const std::size_t instances = plan_instances(spec, machine);
  RunShared shared{config, jobs, scheduler, graph_cores(spec)};

  std::vector<std::unique_ptr<WorkerRuntime>> workers;
  auto spawn = [&](bool added) {
    workers.push_back(std::make_unique<WorkerRuntime>(workers.size(), machine, instances, graph,
                                                      registry, shared, added));
    workers.back()->start();
  };
  for (std::size_t w = 0; w < config.workers; ++w) spawn(false);

  std::optional<std::size_t> add_at;
  if (config.add_worker_at)
    add_at = static_cast<std::size_t>(std::ceil(*config.add_worker_at * static_cast<double>(scheduler.total())));
  for (;;) {
    const ControlEvent ev = scheduler.wait_event(add_at);
    if (ev == ControlEvent::add_worker) {
      add_at.reset();
      spawn(true);
      continue;
    }
    if (ev == ControlEvent::no_workers) scheduler.set_fatal("every worker was lost");
    break;
  }
  scheduler.shutdown();
  for (auto& w : workers) w->join();
  if (auto fatal = scheduler.fatal()) throw KernelError(*fatal);

  RunReport rep;
  for (auto& job : jobs) {
    if (job.output)
      job.output->finalize(job.packets.size(),
                           job.all_points ? std::nullopt : std::optional<RequiredSet>(job.requested));
    rep.output_tables.push_back(job.spec.output);
  }
  for (const auto& w : workers) {
    rep.workers.push_back(w->report());
    rep.decode += w->decode();
    rep.overlapped_loads += w->overlapped();
  }
  rep.packets = scheduler.total();
  rep.retries = scheduler.retries();
  rep.compute = scheduler.counters();
  rep.machine_cores = machine.cpu_cores;
  rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace framedag
