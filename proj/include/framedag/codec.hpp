#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace framedag {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// Frame record layout, little-endian:
///   flag   u8   0x4B keyframe, 0x44 delta
///   length u32  body size in bytes
///   body        run-length pairs (count u8 >= 1, value u8)
/// A keyframe body encodes the raw bytes; a delta body encodes the byte-wise
/// difference (current - previous) mod 256.
namespace codec {

inline constexpr std::uint8_t kKeyframeFlag = 0x4B;
inline constexpr std::uint8_t kDeltaFlag = 0x44;
inline constexpr std::size_t kHeaderSize = 5;

void rle_encode(ByteView raw, Bytes& out);
/// Expands `body` into exactly `out.size()` bytes. Returns false on a zero
/// count, odd body length, or a size mismatch.
bool rle_decode(ByteView body, std::span<std::uint8_t> out);
/// Adds the expanded `body` into `acc` byte-wise mod 256; same checks as rle_decode.
bool rle_decode_add(ByteView body, std::span<std::uint8_t> acc);

/// Appends one record to `out`. `previous` is ignored for keyframes.
void encode_frame(ByteView frame, ByteView previous, bool keyframe, Bytes& out);

struct RecordHeader {
  std::uint8_t flag = 0;
  std::uint32_t length = 0;
  bool keyframe() const { return flag == kKeyframeFlag; }
};

/// Parses the header at the front of `data`. Throws CorruptRecord on a
/// truncated header, an unknown flag, or a body running past `data`.
RecordHeader read_header(ByteView data);

/// Decodes one record in place: `frame` holds the previous frame on entry
/// (ignored for keyframes) and the decoded frame on return. Returns the
/// record size. Throws CorruptRecord.
std::size_t decode_frame(ByteView record, std::span<std::uint8_t> frame);

}  // namespace codec
}  // namespace framedag
