#include "framedag/framestore.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <set>

#include <json.hpp>

#include "framedag/error.hpp"

namespace framedag {

namespace fs = std::filesystem;

namespace {

class OwnedBytes final : public ByteStorage {
 public:
  explicit OwnedBytes(Bytes b) : bytes_(std::move(b)) {}
  ByteView bytes() const override { return bytes_; }

 private:
  Bytes bytes_;
};

class MappedFile final : public ByteStorage {
 public:
  explicit MappedFile(const fs::path& path) {
    const int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd < 0) throw StorageError("cannot open " + path.string() + ": " + std::strerror(errno));
    struct stat st {};
    if (::fstat(fd, &st) != 0) {
      ::close(fd);
      throw StorageError("cannot stat " + path.string());
    }
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ > 0) {
      void* p = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd, 0);
      if (p == MAP_FAILED) {
        ::close(fd);
        throw StorageError("cannot map " + path.string() + ": " + std::strerror(errno));
      }
      data_ = static_cast<const std::uint8_t*>(p);
    }
    ::close(fd);
  }
  ~MappedFile() override {
    if (data_) ::munmap(const_cast<std::uint8_t*>(data_), size_);
  }
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;

  ByteView bytes() const override { return {data_, size_}; }

 private:
  const std::uint8_t* data_ = nullptr;
  std::size_t size_ = 0;
};

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(ByteView in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(ByteView in) {
  return static_cast<std::uint32_t>(in[0]) | (static_cast<std::uint32_t>(in[1]) << 8) |
         (static_cast<std::uint32_t>(in[2]) << 16) | (static_cast<std::uint32_t>(in[3]) << 24);
}

void write_file(const fs::path& path, ByteView data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw StorageError("short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void check_name(const std::string& name, const char* what) {
  const bool ok = !name.empty() && name.front() != '.' &&
                  std::all_of(name.begin(), name.end(), [](char c) {
                    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ||
                           c == '.';
                  });
  if (!ok) throw ValidationError(std::string("invalid ") + what + " name '" + name + "'");
}

fs::path frame_payload_path(const fs::path& dir, const std::string& col) { return dir / (col + ".frames"); }
fs::path frame_index_path(const fs::path& dir, const std::string& col) { return dir / (col + ".kfidx"); }
fs::path blob_data_path(const fs::path& dir, const std::string& col) { return dir / (col + ".blob"); }
fs::path blob_index_path(const fs::path& dir, const std::string& col) { return dir / (col + ".blobidx"); }

}  // namespace

std::shared_ptr<const ByteStorage> own_bytes(Bytes bytes) {
  return std::make_shared<OwnedBytes>(std::move(bytes));
}

std::shared_ptr<const ByteStorage> map_file(const fs::path& path) {
  return std::make_shared<MappedFile>(path);
}

// ---------------------------------------------------------------------------

const KeyframeEntry& KeyframeIndex::preceding(Index frame) const {
  auto it = std::upper_bound(entries_.begin(), entries_.end(), frame,
                             [](Index f, const KeyframeEntry& e) { return f < e.frame; });
  if (it == entries_.begin()) throw StorageError("no keyframe at or before frame " + std::to_string(frame));
  return *(it - 1);
}

bool KeyframeIndex::is_keyframe(Index frame) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), frame,
                             [](const KeyframeEntry& e, Index f) { return e.frame < f; });
  return it != entries_.end() && it->frame == frame;
}

std::optional<Index> KeyframeIndex::next_after(Index frame) const {
  auto it = std::upper_bound(entries_.begin(), entries_.end(), frame,
                             [](Index f, const KeyframeEntry& e) { return f < e.frame; });
  if (it == entries_.end()) return std::nullopt;
  return it->frame;
}

Bytes KeyframeIndex::serialize() const {
  Bytes out;
  out.reserve(entries_.size() * 16);
  for (const auto& e : entries_) {
    put_u64(out, static_cast<std::uint64_t>(e.frame));
    put_u64(out, e.offset);
  }
  return out;
}

KeyframeIndex KeyframeIndex::deserialize(ByteView data) {
  if (data.size() % 16 != 0) throw CorruptRecord("keyframe index size is not a multiple of 16");
  KeyframeIndex idx;
  for (std::size_t i = 0; i < data.size(); i += 16) {
    KeyframeEntry e{static_cast<Index>(get_u64(data.subspan(i))), get_u64(data.subspan(i + 8))};
    if (!idx.entries_.empty() &&
        (e.frame <= idx.entries_.back().frame || e.offset <= idx.entries_.back().offset))
      throw CorruptRecord("keyframe index is not strictly increasing");
    idx.entries_.push_back(e);
  }
  if (idx.entries_.empty() || idx.entries_.front().frame != 0 || idx.entries_.front().offset != 0)
    throw CorruptRecord("keyframe index must start at frame 0, offset 0");
  return idx;
}

bool KeyframePolicy::is_keyframe(Index frame) const {
  return frame % interval == 0 || std::find(forced.begin(), forced.end(), frame) != forced.end();
}

FrameColumnBuilder::FrameColumnBuilder(std::size_t frame_size, KeyframePolicy policy)
    : frame_size_(frame_size), policy_(std::move(policy)) {
  if (frame_size_ == 0) throw ValidationError("frame size must be > 0");
  if (policy_.interval < 1) throw ValidationError("keyframe interval must be >= 1");
  std::sort(policy_.forced.begin(), policy_.forced.end());
}

void FrameColumnBuilder::append(ByteView frame) {
  if (frame.size() != frame_size_)
    throw ValidationError("frame " + std::to_string(count_) + " has " +
                          std::to_string(frame.size()) + " bytes, expected " +
                          std::to_string(frame_size_));
  const bool key = count_ == 0 || policy_.is_keyframe(count_);
  if (key) index_.push_back({count_, payload_.size()});
  codec::encode_frame(frame, previous_, key, payload_);
  previous_.assign(frame.begin(), frame.end());
  ++count_;
}

FrameColumn FrameColumnBuilder::finish() {
  if (count_ == 0) throw ValidationError("cannot ingest an empty frame sequence");
  FrameColumn c;
  c.frame_size = frame_size_;
  c.frame_count = count_;
  c.keyframe_interval = policy_.forced.empty() ? policy_.interval : 0;
  c.index = std::move(index_);
  c.payload = own_bytes(std::move(payload_));
  return c;
}

FrameColumn ingest(const std::vector<Bytes>& frames, const KeyframePolicy& policy) {
  if (frames.empty()) throw ValidationError("cannot ingest an empty frame sequence");
  FrameColumnBuilder b(frames.front().size(), policy);
  for (const auto& f : frames) b.append(f);
  return b.finish();
}

Index DecodePlan::frames_decoded() const {
  Index n = 0;
  for (const auto& s : spans) n += s.decoded();
  return n;
}

Index DecodePlan::frames_emitted() const {
  Index n = 0;
  for (const auto& s : spans) n += s.emit.size();
  return n;
}

DecodePlan plan_decode(const FrameColumn& column, const RequiredSet& required) {
  if (!required.empty() && (required.front() < 0 || required.back() >= column.frame_count))
    throw ValidationError("required frames " + required.to_string() + " outside [0," +
                          std::to_string(column.frame_count) + ")");
  DecodePlan plan;
  RequiredSetBuilder emit;
  auto close_span = [&] {
    if (!plan.spans.empty()) plan.spans.back().emit = emit.build();
  };
  for (const auto& iv : required.intervals()) {
    // Later points of a run never justify a seek: their keyframe is at most
    // one past the frame just decoded.
    const Index k = column.index.preceding(iv.start).frame;
    if (plan.spans.empty() || k > plan.spans.back().last + 1) {
      close_span();
      plan.spans.push_back({k, iv.end - 1, {}});
    } else {
      plan.spans.back().last = iv.end - 1;
    }
    emit.add(iv.start, iv.end);
  }
  close_span();
  return plan;
}

DecodeCounters FrameDecoder::read(const FrameColumn& column, const DecodePlan& plan,
                                  const FrameSink& sink) {
  DecodeCounters counters;
  const ByteView data = column.bytes();
  const auto& entries = column.index.entries();
  if (column_ != column.payload) {
    column_ = column.payload;
    position_.reset();
  }
  buffer_.resize(column.frame_size);

  for (const auto& span : plan.spans) {
    if (span.emit.empty()) continue;
    Index frame = span.keyframe;
    std::uint64_t offset = 0;
    if (position_ && *position_ >= span.keyframe && *position_ < span.emit.front()) {
      frame = *position_ + 1;
      offset = next_offset_;
    } else {
      const KeyframeEntry& kf = column.index.preceding(span.keyframe);
      if (kf.frame != span.keyframe)
        throw CorruptRecord("decode span starts at frame " + std::to_string(span.keyframe) +
                            ", which is not a keyframe");
      offset = kf.offset;
    }
    // Next keyframe listed in the index, to cross-check record flags.
    auto next_kf = std::upper_bound(entries.begin(), entries.end(), frame - 1,
                                    [](Index f, const KeyframeEntry& e) { return f < e.frame; });
    Index emit_rank = span.emit.rank(std::max(frame, span.emit.front()));
    if (emit_rank < 0) emit_rank = 0;
    Index next_emit = span.emit.at(emit_rank);
    // Invalidate state until the span completes, so a throw leaves no stale position.
    position_.reset();
    for (; frame <= span.last; ++frame) {
      if (offset >= data.size()) throw CorruptRecord("frame " + std::to_string(frame) + " past end of column");
      const ByteView record = data.subspan(offset);
      const bool indexed_key = next_kf != entries.end() && next_kf->frame == frame;
      const codec::RecordHeader h = codec::read_header(record);
      if (h.keyframe() != indexed_key || (indexed_key && next_kf->offset != offset))
        throw CorruptRecord("keyframe index disagrees with record at frame " + std::to_string(frame));
      if (indexed_key) ++next_kf;
      const std::size_t used = codec::decode_frame(record, buffer_);
      offset += used;
      ++counters.frames_decoded;
      counters.bytes_read += used;
      if (frame == next_emit) {
        sink(frame, buffer_);
        ++counters.frames_emitted;
        if (++emit_rank < span.emit.size()) next_emit = span.emit.at(emit_rank);
        else next_emit = -1;
      }
    }
    position_ = span.last;
    next_offset_ = offset;
  }
  return counters;
}

DecodeCounters read_decode(const FrameColumn& column, const DecodePlan& plan,
                           const FrameSink& sink) {
  FrameDecoder d;
  return d.read(column, plan, sink);
}

FrameColumn reencode(const FrameColumn& column, const KeyframePolicy& policy) {
  FrameColumnBuilder b(column.frame_size, policy);
  read_decode(column, plan_decode(column, RequiredSet::all(column.frame_count)),
              [&](Index, ByteView f) { b.append(f); });
  return b.finish();
}

FrameColumn reencode_sampled(const FrameColumn& column, const SamplingStrategy& strategy,
                             const KeyframePolicy& policy) {
  const Index n = selected_count(strategy, column.frame_count);
  if (const auto* g = std::get_if<GatherStrategy>(&strategy);
      g && !g->indices.empty() && g->indices.back() >= column.frame_count)
    throw ValidationError("gather index out of range");
  RequiredSetBuilder sel;
  for (Index j = 0; j < n; ++j) sel.add(selected_point(strategy, j));
  FrameColumnBuilder b(column.frame_size, policy);
  const RequiredSet required = sel.build();
  read_decode(column, plan_decode(column, required), [&](Index, ByteView f) { b.append(f); });
  return b.finish();
}

// ---------------------------------------------------------------------------

void append_blob_record(const Element& e, Bytes& out) {
  const auto len = static_cast<std::uint32_t>(e.fill ? 0 : e.payload.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.push_back(e.fill ? kBlobFillFlag : kBlobValueFlag);
  if (!e.fill) out.insert(out.end(), e.payload.begin(), e.payload.end());
}

BlobColumn::BlobColumn(std::shared_ptr<const ByteStorage> data,
                       std::shared_ptr<const ByteStorage> index)
    : data_(std::move(data)) {
  const ByteView idx = index->bytes();
  if (idx.size() % 8 != 0) throw CorruptRecord("blob index size is not a multiple of 8");
  offsets_.reserve(idx.size() / 8);
  for (std::size_t i = 0; i < idx.size(); i += 8) offsets_.push_back(get_u64(idx.subspan(i)));
}

ElementView BlobColumn::view(Index row) const {
  if (row < 0 || row >= rows()) throw StorageError("blob row " + std::to_string(row) + " out of range");
  const ByteView data = data_->bytes();
  const std::uint64_t off = offsets_[static_cast<std::size_t>(row)];
  if (off + 5 > data.size()) throw CorruptRecord("blob record header past end of file");
  const std::uint32_t len = get_u32(data.subspan(off));
  const std::uint8_t flag = data[off + 4];
  if ((flag != kBlobValueFlag && flag != kBlobFillFlag) || (flag == kBlobFillFlag && len != 0))
    throw CorruptRecord("bad blob record flag at row " + std::to_string(row));
  if (off + 5 + len > data.size()) throw CorruptRecord("blob record body past end of file");
  return ElementView(data.subspan(off + 5, len), flag == kBlobFillFlag);
}

Element BlobColumn::read(Index row) const {
  const ElementView v = view(row);
  return Element{Bytes(v.payload.begin(), v.payload.end()), v.fill};
}

// ---------------------------------------------------------------------------

const ColumnDescriptor& TableManifest::column(const std::string& col) const {
  for (const auto& c : columns)
    if (c.name == col) return c;
  throw ValidationError("table '" + name + "' has no column '" + col + "'");
}

bool TableManifest::has_column(const std::string& col) const {
  return std::any_of(columns.begin(), columns.end(), [&](const auto& c) { return c.name == col; });
}

std::string TableManifest::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["rows"] = rows;
  j["columns"] = nlohmann::json::array();
  for (const auto& c : columns) {
    nlohmann::json cj{{"name", c.name}, {"kind", c.kind == ColumnKind::frame ? "frame" : "blob"}};
    if (c.kind == ColumnKind::frame) {
      cj["frame_size"] = c.frame_size;
      cj["keyframe_interval"] = c.keyframe_interval;
    }
    j["columns"].push_back(std::move(cj));
  }
  if (points) j["points"] = points->to_string();
  return j.dump(2) + "\n";
}

TableManifest TableManifest::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    TableManifest m;
    m.name = j.at("name").get<std::string>();
    m.rows = j.at("rows").get<Index>();
    for (const auto& cj : j.at("columns")) {
      ColumnDescriptor c;
      c.name = cj.at("name").get<std::string>();
      const auto kind = cj.at("kind").get<std::string>();
      if (kind == "frame") {
        c.kind = ColumnKind::frame;
        c.frame_size = cj.at("frame_size").get<std::size_t>();
        c.keyframe_interval = cj.at("keyframe_interval").get<Index>();
      } else if (kind == "blob") {
        c.kind = ColumnKind::blob;
      } else {
        throw StorageError("unknown column kind '" + kind + "'");
      }
      m.columns.push_back(std::move(c));
    }
    if (j.contains("points")) m.points = RequiredSet::parse(j.at("points").get<std::string>());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw StorageError(std::string("malformed manifest: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

TableWriter::TableWriter(fs::path root, std::string table, Index rows) : root_(std::move(root)) {
  check_name(table, "table");
  static std::atomic<unsigned> counter{0};
  manifest_.name = std::move(table);
  manifest_.rows = rows;
  fs::create_directories(root_);
  staging_ = root_ / (".staging-" + manifest_.name + "-" + std::to_string(::getpid()) + "-" +
                      std::to_string(counter++));
  fs::remove_all(staging_);
  fs::create_directories(staging_);
}

TableWriter::~TableWriter() {
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }
}

void TableWriter::add_frame_column(const std::string& name, const FrameColumn& column) {
  check_name(name, "column");
  if (column.frame_count != manifest_.rows)
    throw ValidationError("column '" + name + "' has " + std::to_string(column.frame_count) +
                          " rows, table has " + std::to_string(manifest_.rows));
  write_file(frame_payload_path(staging_, name), column.bytes());
  write_file(frame_index_path(staging_, name), column.index.serialize());
  manifest_.columns.push_back({name, ColumnKind::frame, column.frame_size, column.keyframe_interval});
}

void TableWriter::copy_column(const fs::path& table_dir, const ColumnDescriptor& c) {
  if (c.kind == ColumnKind::frame) {
    fs::copy_file(frame_payload_path(table_dir, c.name), frame_payload_path(staging_, c.name));
    fs::copy_file(frame_index_path(table_dir, c.name), frame_index_path(staging_, c.name));
  } else {
    fs::copy_file(blob_data_path(table_dir, c.name), blob_data_path(staging_, c.name));
    fs::copy_file(blob_index_path(table_dir, c.name), blob_index_path(staging_, c.name));
  }
  manifest_.columns.push_back(c);
}

TableWriter::BlobSink::BlobSink(fs::path data, fs::path index)
    : data_(data, std::ios::binary | std::ios::trunc), index_path_(std::move(index)) {
  if (!data_) throw StorageError("cannot write " + data.string());
}

void TableWriter::BlobSink::append(const Element& e) {
  scratch_.clear();
  append_blob_record(e, scratch_);
  data_.write(reinterpret_cast<const char*>(scratch_.data()),
              static_cast<std::streamsize>(scratch_.size()));
  offsets_.push_back(written_);
  written_ += scratch_.size();
}

void TableWriter::BlobSink::append_encoded(ByteView records) {
  std::size_t pos = 0;
  while (pos < records.size()) {
    if (pos + 5 > records.size()) throw CorruptRecord("truncated blob record");
    const std::uint32_t len = get_u32(records.subspan(pos));
    if (pos + 5 + len > records.size()) throw CorruptRecord("truncated blob record body");
    offsets_.push_back(written_ + pos);
    pos += 5 + len;
  }
  data_.write(reinterpret_cast<const char*>(records.data()), static_cast<std::streamsize>(records.size()));
  written_ += records.size();
}

void TableWriter::BlobSink::close() {
  data_.close();
  if (data_.fail()) throw StorageError("failed writing blob column");
  Bytes idx;
  idx.reserve(offsets_.size() * 8);
  for (auto o : offsets_) put_u64(idx, o);
  write_file(index_path_, idx);
}

TableWriter::BlobSink TableWriter::open_blob_column(const std::string& name) {
  check_name(name, "column");
  manifest_.columns.push_back({name, ColumnKind::blob, 0, 0});
  return BlobSink(blob_data_path(staging_, name), blob_index_path(staging_, name));
}

void TableWriter::commit() {
  std::set<std::string> names;
  for (const auto& c : manifest_.columns)
    if (!names.insert(c.name).second) throw ValidationError("duplicate column '" + c.name + "'");
  for (const auto& c : manifest_.columns) {
    if (c.kind != ColumnKind::blob) continue;
    const auto rows = fs::file_size(blob_index_path(staging_, c.name)) / 8;
    if (static_cast<Index>(rows) != manifest_.rows)
      throw ValidationError("blob column '" + c.name + "' has " + std::to_string(rows) +
                            " rows, table has " + std::to_string(manifest_.rows));
  }
  const std::string text = manifest_.to_json();
  write_file(staging_ / "manifest.json", ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  const fs::path dest = root_ / manifest_.name;
  const fs::path trash = staging_.string() + ".old";
  if (fs::exists(dest)) fs::rename(dest, trash);
  fs::rename(staging_, dest);
  committed_ = true;
  std::error_code ec;
  fs::remove_all(trash, ec);
}

// ---------------------------------------------------------------------------

TableStore::TableStore(fs::path root) : root_(std::move(root)) {}

TableStore TableStore::from_env() {
  if (const char* env = std::getenv("FRAMEDAG_STORE"); env && *env) return TableStore(env);
  return TableStore("framedag_store");
}

bool TableStore::exists(const std::string& table) const {
  return fs::exists(root_ / table / "manifest.json");
}

TableManifest TableStore::manifest(const std::string& table) const {
  check_name(table, "table");
  if (!exists(table)) throw StorageError("table '" + table + "' does not exist in " + root_.string());
  return TableManifest::from_json(read_text(root_ / table / "manifest.json"));
}

std::vector<std::string> TableStore::tables() const {
  std::vector<std::string> out;
  if (!fs::exists(root_)) return out;
  for (const auto& e : fs::directory_iterator(root_)) {
    const auto name = e.path().filename().string();
    if (e.is_directory() && name.front() != '.' && fs::exists(e.path() / "manifest.json"))
      out.push_back(name);
  }
  std::sort(out.begin(), out.end());
  return out;
}

FrameColumn TableStore::open_frame_column(const std::string& table, const std::string& column) const {
  const TableManifest m = manifest(table);
  const ColumnDescriptor& c = m.column(column);
  if (c.kind != ColumnKind::frame)
    throw ValidationError("column '" + table + "." + column + "' is not a frame column");
  const fs::path dir = table_dir(table);
  FrameColumn fc;
  fc.frame_size = c.frame_size;
  fc.frame_count = m.rows;
  fc.keyframe_interval = c.keyframe_interval;
  fc.payload = map_file(frame_payload_path(dir, column));
  fc.index = KeyframeIndex::deserialize(map_file(frame_index_path(dir, column))->bytes());
  return fc;
}

BlobColumn TableStore::open_blob_column(const std::string& table, const std::string& column) const {
  const TableManifest m = manifest(table);
  if (m.column(column).kind != ColumnKind::blob)
    throw ValidationError("column '" + table + "." + column + "' is not a blob column");
  const fs::path dir = table_dir(table);
  BlobColumn b(map_file(blob_data_path(dir, column)), map_file(blob_index_path(dir, column)));
  if (b.rows() != m.rows) throw CorruptRecord("blob column row count disagrees with manifest");
  return b;
}

void TableStore::write_frame_column(const std::string& table, const std::string& column,
                                    const FrameColumn& data) const {
  TableWriter w(root_, table, data.frame_count);
  if (exists(table)) {
    const TableManifest m = manifest(table);
    if (m.rows != data.frame_count)
      throw ValidationError("table '" + table + "' has " + std::to_string(m.rows) +
                            " rows; cannot add a column of " + std::to_string(data.frame_count));
    if (m.points) w.set_points(*m.points);
    for (const auto& c : m.columns)
      if (c.name != column) w.copy_column(table_dir(table), c);
  }
  w.add_frame_column(column, data);
  w.commit();
}

}  // namespace framedag
