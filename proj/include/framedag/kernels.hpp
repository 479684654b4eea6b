#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "framedag/element.hpp"
#include "framedag/graph.hpp"

namespace framedag {

/// A batch delivered to a kernel in struct-of-arrays order. Each field is one
/// (input slot, stencil offset) pair, slot-major; every field holds one
/// element per row.
struct KernelBatch {
  std::vector<Index> points;
  std::vector<std::vector<ElementView>> fields;

  std::size_t rows() const { return points.size(); }
};

class Kernel {
 public:
  virtual ~Kernel() = default;
  /// Drops carried state. Called at every slice start, packet start, and gap
  /// in a bounded-state op's invocation set.
  virtual void reset() {}
  /// Fills `out` with one payload per row. Throws KernelError.
  virtual void execute(const KernelBatch& batch, std::vector<Bytes>& out) = 0;
};

struct KernelDecl {
  std::string id;
  /// Fields per row (input slots x stencil width); 0 accepts any count.
  std::size_t fields = 1;
  bool batched = true;
  bool bounded_state = false;
  bool deterministic = true;
  /// Kernel is invoked on fill elements instead of passing fill through.
  bool accepts_fill = false;
};

struct KernelArgs {
  nlohmann::json args = nlohmann::json::object();
  Index warmup = 0;  // from the enclosing bounded-state op
};

using KernelFactory = std::function<std::unique_ptr<Kernel>(const KernelArgs&)>;

/// String-keyed kernel catalogue. Populate it before a run; lookups are
/// read-only and safe from any thread.
class KernelRegistry {
 public:
  static KernelRegistry with_builtins();

  void add(KernelDecl decl, KernelFactory factory);
  bool contains(const std::string& id) const { return entries_.count(id) != 0; }
  const KernelDecl& decl(const std::string& id) const;
  std::unique_ptr<Kernel> make(const std::string& id, const KernelArgs& args) const;
  std::vector<std::string> ids() const;

 private:
  struct Entry {
    KernelDecl decl;
    KernelFactory factory;
  };
  std::map<std::string, Entry> entries_;
};

/// Appends kernel-related violations: unknown ids, field-count mismatches, and
/// bounded-state kernels outside bounded-state ops.
void validate_kernels(const GraphSpec& graph, const KernelRegistry& registry,
                      ValidationReport& report);

/// Number of fields a kernel op receives per row.
std::size_t field_count(const OpDecl& op);

// ---------------------------------------------------------------------------
// Built-in kernel math. Scalars travel as 8-byte little-endian doubles;
// threshold_detector emits a single 0/1 byte.

using Histogram = std::array<std::uint32_t, 256>;

Histogram byte_histogram(ByteView frame);
Bytes encode_histogram(const Histogram& h);  // 256 x u32 LE

/// Sum over bytes of the circular distance min(d, 256 - d), d = |a - b| mod 256.
std::uint64_t frame_delta_sum(ByteView a, ByteView b);

bool threshold_detector(double value, double tau);

/// Every k-th byte starting at 0, truncated to floor(F / k) bytes.
Bytes decimate(ByteView frame, std::size_t k);

Bytes encode_scalar(double v);
/// 8-byte payloads decode as double, 1-byte payloads as an unsigned byte.
double decode_scalar(ByteView payload);

/// Mean of the last min(n, W + 1) values pushed since the last reset.
class SlidingMean {
 public:
  explicit SlidingMean(Index warmup) : warmup_(warmup) {}

  double push(double value);
  void reset();

 private:
  Index warmup_;  // kInfiniteWarmup keeps every value
  std::deque<double> window_;
  long double running_ = 0;  // infinite windows only
};

}  // namespace framedag
