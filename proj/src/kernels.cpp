#include "framedag/kernels.hpp"

#include <cstring>

#include "framedag/error.hpp"

namespace framedag {

Histogram byte_histogram(ByteView frame) {
  Histogram h{};
  for (std::uint8_t b : frame) ++h[b];
  return h;
}

Bytes encode_histogram(const Histogram& h) {
  Bytes out;
  out.reserve(256 * 4);
  for (std::uint32_t c : h)
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(c >> (8 * i)));
  return out;
}

std::uint64_t frame_delta_sum(ByteView a, ByteView b) {
  if (a.size() != b.size())
    throw KernelError("frame_delta_sum: frame sizes differ (" + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const unsigned d = static_cast<std::uint8_t>(a[i] - b[i]);
    sum += d < 128 ? d : 256 - d;
  }
  return sum;
}

bool threshold_detector(double value, double tau) { return value > tau; }

Bytes decimate(ByteView frame, std::size_t k) {
  if (k == 0) throw KernelError("decimate: k must be >= 1");
  Bytes out(frame.size() / k);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = frame[i * k];
  return out;
}

Bytes encode_scalar(double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof bits);
  Bytes out(8);
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(bits >> (8 * i));
  return out;
}

double decode_scalar(ByteView p) {
  if (p.size() == 1) return p[0];
  if (p.size() != 8) throw KernelError("expected a 1- or 8-byte scalar, got " + std::to_string(p.size()) + " bytes");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  double v = 0;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

double SlidingMean::push(double value) {
  window_.push_back(value);
  if (warmup_ == kInfiniteWarmup) {
    running_ += value;
    return static_cast<double>(running_ / static_cast<long double>(window_.size()));
  }
  while (static_cast<Index>(window_.size()) > warmup_ + 1) window_.pop_front();
  // Summed oldest-first from scratch so the result depends only on the window.
  double sum = 0;
  for (double v : window_) sum += v;
  return sum / static_cast<double>(window_.size());
}

void SlidingMean::reset() {
  window_.clear();
  running_ = 0;
}

namespace {

void expect_fields(const KernelBatch& b, std::size_t n, const char* id) {
  if (b.fields.size() != n)
    throw KernelError(std::string(id) + ": expected " + std::to_string(n) + " fields, got " +
                      std::to_string(b.fields.size()));
}

class HistogramKernel final : public Kernel {
 public:
  void execute(const KernelBatch& b, std::vector<Bytes>& out) override {
    expect_fields(b, 1, "byte_histogram");
    for (std::size_t r = 0; r < b.rows(); ++r) out[r] = encode_histogram(byte_histogram(b.fields[0][r].payload));
  }
};

class DeltaSumKernel final : public Kernel {
 public:
  void execute(const KernelBatch& b, std::vector<Bytes>& out) override {
    expect_fields(b, 2, "frame_delta_sum");
    for (std::size_t r = 0; r < b.rows(); ++r)
      out[r] = encode_scalar(static_cast<double>(
          frame_delta_sum(b.fields[0][r].payload, b.fields[1][r].payload)));
  }
};

class ThresholdKernel final : public Kernel {
 public:
  explicit ThresholdKernel(double tau) : tau_(tau) {}
  void execute(const KernelBatch& b, std::vector<Bytes>& out) override {
    expect_fields(b, 1, "threshold_detector");
    for (std::size_t r = 0; r < b.rows(); ++r)
      out[r] = Bytes{static_cast<std::uint8_t>(
          threshold_detector(decode_scalar(b.fields[0][r].payload), tau_) ? 1 : 0)};
  }

 private:
  double tau_;
};

class DecimateKernel final : public Kernel {
 public:
  explicit DecimateKernel(std::size_t k) : k_(k) {
    if (k_ == 0) throw ValidationError("decimate: k must be >= 1");
  }
  void execute(const KernelBatch& b, std::vector<Bytes>& out) override {
    expect_fields(b, 1, "decimate");
    for (std::size_t r = 0; r < b.rows(); ++r) out[r] = decimate(b.fields[0][r].payload, k_);
  }

 private:
  std::size_t k_;
};

// Fill counts as 0 so a spaced sparse signal can be smoothed at full rate.
class SlidingMeanKernel final : public Kernel {
 public:
  explicit SlidingMeanKernel(Index warmup) : mean_(warmup) {}
  void reset() override { mean_.reset(); }
  void execute(const KernelBatch& b, std::vector<Bytes>& out) override {
    expect_fields(b, 1, "sliding_mean");
    for (std::size_t r = 0; r < b.rows(); ++r) {
      const ElementView& e = b.fields[0][r];
      out[r] = encode_scalar(mean_.push(e.fill ? 0.0 : decode_scalar(e.payload)));
    }
  }

 private:
  SlidingMean mean_;
};

}  // namespace

KernelRegistry KernelRegistry::with_builtins() {
  KernelRegistry r;
  r.add({"byte_histogram", 1, true, false, true, false},
        [](const KernelArgs&) { return std::make_unique<HistogramKernel>(); });
  r.add({"frame_delta_sum", 2, true, false, true, false},
        [](const KernelArgs&) { return std::make_unique<DeltaSumKernel>(); });
  r.add({"threshold_detector", 1, true, false, true, false}, [](const KernelArgs& a) {
    return std::make_unique<ThresholdKernel>(a.args.value("tau", 0.0));
  });
  r.add({"decimate", 1, true, false, true, false}, [](const KernelArgs& a) {
    return std::make_unique<DecimateKernel>(a.args.value("k", std::size_t{1}));
  });
  r.add({"sliding_mean", 1, true, true, true, true},
        [](const KernelArgs& a) { return std::make_unique<SlidingMeanKernel>(a.warmup); });
  return r;
}

void KernelRegistry::add(KernelDecl decl, KernelFactory factory) {
  auto id = decl.id;
  entries_[id] = Entry{std::move(decl), std::move(factory)};
}

const KernelDecl& KernelRegistry::decl(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw ValidationError("unknown kernel '" + id + "'");
  return it->second.decl;
}

std::unique_ptr<Kernel> KernelRegistry::make(const std::string& id, const KernelArgs& args) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw ValidationError("unknown kernel '" + id + "'");
  try {
    return it->second.factory(args);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("kernel '" + id + "': bad arguments: " + e.what());
  }
}

std::vector<std::string> KernelRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : entries_) out.push_back(id);
  return out;
}

std::size_t field_count(const OpDecl& op) {
  std::size_t width = 1;
  if (const auto* s = std::get_if<ops::Stencil>(&op.kind)) width = s->offsets.size();
  return op.arity * width;
}

void validate_kernels(const GraphSpec& graph, const KernelRegistry& registry,
                      ValidationReport& report) {
  for (const auto& op : graph.ops) {
    if (is_system_op(op.kind) || op.kernel.empty()) continue;
    if (!registry.contains(op.kernel)) {
      report.violations.push_back(
          {ViolationKind::unknown_kernel, "op '" + op.name + "': unknown kernel '" + op.kernel + "'"});
      continue;
    }
    const KernelDecl& d = registry.decl(op.kernel);
    if (d.fields != 0 && d.fields != field_count(op))
      report.violations.push_back(
          {ViolationKind::arity_mismatch, "op '" + op.name + "': kernel '" + d.id + "' takes " +
                                              std::to_string(d.fields) + " fields per element, op supplies " +
                                              std::to_string(field_count(op))});
    if (d.bounded_state && !std::holds_alternative<ops::BoundedState>(op.kind))
      report.violations.push_back({ViolationKind::invalid_op, "op '" + op.name + "': kernel '" + d.id +
                                                                  "' is stateful and needs a bounded_state op"});
  }
}

}  // namespace framedag
