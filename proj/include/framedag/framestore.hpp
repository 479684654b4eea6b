#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "framedag/codec.hpp"
#include "framedag/element.hpp"
#include "framedag/graph.hpp"
#include "framedag/required_set.hpp"

namespace framedag {

// ---------------------------------------------------------------------------
// Byte storage shared by in-memory and memory-mapped columns.

class ByteStorage {
 public:
  virtual ~ByteStorage() = default;
  virtual ByteView bytes() const = 0;
};

std::shared_ptr<const ByteStorage> own_bytes(Bytes bytes);
/// Read-only mapping of a whole file. Throws StorageError.
std::shared_ptr<const ByteStorage> map_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Frame columns.

struct KeyframeEntry {
  Index frame = 0;
  std::uint64_t offset = 0;
  friend bool operator==(const KeyframeEntry&, const KeyframeEntry&) = default;
};

class KeyframeIndex {
 public:
  KeyframeIndex() = default;
  explicit KeyframeIndex(std::vector<KeyframeEntry> entries) : entries_(std::move(entries)) {}

  const std::vector<KeyframeEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  void push_back(KeyframeEntry e) { entries_.push_back(e); }

  /// Entry of the last keyframe at or before `frame`.
  const KeyframeEntry& preceding(Index frame) const;
  bool is_keyframe(Index frame) const;
  /// First keyframe strictly after `frame`, if any.
  std::optional<Index> next_after(Index frame) const;

  Bytes serialize() const;  // 16 bytes per entry: u64 frame, u64 offset (LE)
  static KeyframeIndex deserialize(ByteView data);

  friend bool operator==(const KeyframeIndex&, const KeyframeIndex&) = default;

 private:
  std::vector<KeyframeEntry> entries_;
};

/// Frame i is a keyframe iff i % interval == 0 or i is listed in `forced`.
struct KeyframePolicy {
  Index interval = 1;
  std::vector<Index> forced;

  bool is_keyframe(Index frame) const;
};

struct FrameColumn {
  std::size_t frame_size = 0;
  Index frame_count = 0;
  Index keyframe_interval = 0;  // informational; 0 when keyframes are irregular
  KeyframeIndex index;
  std::shared_ptr<const ByteStorage> payload;

  ByteView bytes() const { return payload ? payload->bytes() : ByteView{}; }
  std::size_t encoded_size() const { return bytes().size(); }
};

/// Streams fixed-size frames into an encoded column.
class FrameColumnBuilder {
 public:
  FrameColumnBuilder(std::size_t frame_size, KeyframePolicy policy);

  void append(ByteView frame);
  FrameColumn finish();

 private:
  std::size_t frame_size_;
  KeyframePolicy policy_;
  Bytes payload_;
  Bytes previous_;
  KeyframeIndex index_;
  Index count_ = 0;
};

/// Encodes `frames`; all must share one non-zero size. Throws ValidationError
/// on an empty input, a size mismatch, or interval < 1.
FrameColumn ingest(const std::vector<Bytes>& frames, const KeyframePolicy& policy);

struct DecodeSpan {
  Index keyframe = 0;  // decode starts here
  Index last = 0;      // and ends here, inclusive
  RequiredSet emit;    // frames handed to the caller

  Index decoded() const { return last - keyframe + 1; }
};

struct DecodePlan {
  std::vector<DecodeSpan> spans;

  Index frames_decoded() const;
  Index frames_emitted() const;
};

/// Greedy keyframe-seek plan: a new span starts only when seeking to the
/// keyframe before the next required frame decodes strictly fewer frames
/// than continuing. Throws ValidationError for frames outside the column.
DecodePlan plan_decode(const FrameColumn& column, const RequiredSet& required);

struct DecodeCounters {
  Index frames_decoded = 0;
  Index frames_emitted = 0;
  std::uint64_t bytes_read = 0;

  DecodeCounters& operator+=(const DecodeCounters& o) {
    frames_decoded += o.frames_decoded;
    frames_emitted += o.frames_emitted;
    bytes_read += o.bytes_read;
    return *this;
  }
};

using FrameSink = std::function<void(Index frame, ByteView payload)>;

/// Decoder with a private working buffer. Frames that are decoded only to
/// reach an emitted frame stay in the buffer and are never handed out.
///
/// A decoder remembers where it stopped. When the next span of the same
/// column starts at a keyframe at or before that position, decoding resumes
/// from there instead of seeking back.
class FrameDecoder {
 public:
  DecodeCounters read(const FrameColumn& column, const DecodePlan& plan, const FrameSink& sink);
  void reset() { position_.reset(); }

 private:
  std::shared_ptr<const ByteStorage> column_;
  std::optional<Index> position_;  // last frame held in buffer_
  std::uint64_t next_offset_ = 0;
  Bytes buffer_;
};

/// One-shot decode with fresh decoder state.
DecodeCounters read_decode(const FrameColumn& column, const DecodePlan& plan,
                           const FrameSink& sink);

/// Decodes every frame and re-encodes with a new keyframe policy.
FrameColumn reencode(const FrameColumn& column, const KeyframePolicy& policy);
/// Keeps only the frames selected by `strategy` and encodes them as a new column.
FrameColumn reencode_sampled(const FrameColumn& column, const SamplingStrategy& strategy,
                             const KeyframePolicy& policy);

// ---------------------------------------------------------------------------
// Blob columns: records [u32 length][u8 flag][payload] plus a u64 offset per row.

inline constexpr std::uint8_t kBlobValueFlag = 0x00;
inline constexpr std::uint8_t kBlobFillFlag = 0x46;

void append_blob_record(const Element& e, Bytes& out);

class BlobColumn {
 public:
  BlobColumn() = default;
  BlobColumn(std::shared_ptr<const ByteStorage> data, std::shared_ptr<const ByteStorage> index);

  Index rows() const { return static_cast<Index>(offsets_.size()); }
  Element read(Index row) const;
  ElementView view(Index row) const;

 private:
  std::shared_ptr<const ByteStorage> data_;
  std::vector<std::uint64_t> offsets_;
};

// ---------------------------------------------------------------------------
// Tables.

enum class ColumnKind { frame, blob };

struct ColumnDescriptor {
  std::string name;
  ColumnKind kind = ColumnKind::blob;
  std::size_t frame_size = 0;   // frame columns only
  Index keyframe_interval = 0;  // frame columns only
  friend bool operator==(const ColumnDescriptor&, const ColumnDescriptor&) = default;
};

struct TableManifest {
  std::string name;
  Index rows = 0;
  std::vector<ColumnDescriptor> columns;
  /// Output-domain point of each row, when a job wrote a sparse subset.
  std::optional<RequiredSet> points;

  const ColumnDescriptor& column(const std::string& name) const;
  bool has_column(const std::string& name) const;
  std::string to_json() const;
  static TableManifest from_json(const std::string& text);
};

/// Builds a table in a staging directory and publishes it with one rename.
class TableWriter {
 public:
  TableWriter(std::filesystem::path root, std::string table, Index rows);
  ~TableWriter();
  TableWriter(const TableWriter&) = delete;
  TableWriter& operator=(const TableWriter&) = delete;

  void set_points(RequiredSet points) { manifest_.points = std::move(points); }
  void add_frame_column(const std::string& name, const FrameColumn& column);
  /// Copies an existing column's files unchanged.
  void copy_column(const std::filesystem::path& table_dir, const ColumnDescriptor& column);

  /// Streams blob rows; close() must be called before commit().
  class BlobSink {
   public:
    void append(const Element& e);
    /// Appends already-encoded blob records, indexing each one.
    void append_encoded(ByteView records);
    void close();
    Index rows() const { return static_cast<Index>(offsets_.size()); }

   private:
    friend class TableWriter;
    BlobSink(std::filesystem::path data, std::filesystem::path index);
    std::ofstream data_;
    std::filesystem::path index_path_;
    std::vector<std::uint64_t> offsets_;
    std::uint64_t written_ = 0;
    Bytes scratch_;
  };
  BlobSink open_blob_column(const std::string& name);

  const std::filesystem::path& staging_dir() const { return staging_; }
  /// Writes the manifest and atomically replaces any existing table.
  void commit();

 private:
  std::filesystem::path root_;
  std::filesystem::path staging_;
  TableManifest manifest_;
  bool committed_ = false;
};

class TableStore {
 public:
  explicit TableStore(std::filesystem::path root);
  /// Root from $FRAMEDAG_STORE, falling back to ./framedag_store.
  static TableStore from_env();

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path table_dir(const std::string& table) const { return root_ / table; }
  bool exists(const std::string& table) const;
  TableManifest manifest(const std::string& table) const;
  std::vector<std::string> tables() const;

  FrameColumn open_frame_column(const std::string& table, const std::string& column) const;
  BlobColumn open_blob_column(const std::string& table, const std::string& column) const;

  /// Writes a single-frame-column table, or adds/replaces the column when the
  /// table already exists with the same row count.
  void write_frame_column(const std::string& table, const std::string& column,
                          const FrameColumn& data) const;

 private:
  std::filesystem::path root_;
};

}  // namespace framedag
