#include "framedag/codec.hpp"

#include <string>

#include "framedag/error.hpp"

namespace framedag::codec {

namespace {

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename Apply>
bool rle_expand(ByteView body, std::size_t expected, Apply&& apply) {
  if (body.size() % 2 != 0) return false;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < body.size(); i += 2) {
    const std::size_t count = body[i];
    if (count == 0 || pos + count > expected) return false;
    apply(pos, count, body[i + 1]);
    pos += count;
  }
  return pos == expected;
}

}  // namespace

void rle_encode(ByteView raw, Bytes& out) {
  std::size_t i = 0;
  while (i < raw.size()) {
    const std::uint8_t v = raw[i];
    std::size_t run = 1;
    while (i + run < raw.size() && run < 255 && raw[i + run] == v) ++run;
    out.push_back(static_cast<std::uint8_t>(run));
    out.push_back(v);
    i += run;
  }
}

bool rle_decode(ByteView body, std::span<std::uint8_t> out) {
  return rle_expand(body, out.size(), [&](std::size_t pos, std::size_t n, std::uint8_t v) {
    for (std::size_t k = 0; k < n; ++k) out[pos + k] = v;
  });
}

bool rle_decode_add(ByteView body, std::span<std::uint8_t> acc) {
  return rle_expand(body, acc.size(), [&](std::size_t pos, std::size_t n, std::uint8_t v) {
    if (v == 0) return;
    for (std::size_t k = 0; k < n; ++k) acc[pos + k] = static_cast<std::uint8_t>(acc[pos + k] + v);
  });
}

void encode_frame(ByteView frame, ByteView previous, bool keyframe, Bytes& out) {
  out.push_back(keyframe ? kKeyframeFlag : kDeltaFlag);
  const std::size_t length_at = out.size();
  put_u32(out, 0);
  const std::size_t body_at = out.size();
  if (keyframe) {
    rle_encode(frame, out);
  } else {
    Bytes delta(frame.size());
    for (std::size_t i = 0; i < frame.size(); ++i)
      delta[i] = static_cast<std::uint8_t>(frame[i] - previous[i]);
    rle_encode(delta, out);
  }
  const auto body = static_cast<std::uint32_t>(out.size() - body_at);
  for (int i = 0; i < 4; ++i) out[length_at + i] = static_cast<std::uint8_t>(body >> (8 * i));
}

RecordHeader read_header(ByteView data) {
  if (data.size() < kHeaderSize) throw CorruptRecord("truncated record header");
  RecordHeader h;
  h.flag = data[0];
  if (h.flag != kKeyframeFlag && h.flag != kDeltaFlag)
    throw CorruptRecord("unknown record flag " + std::to_string(h.flag));
  h.length = static_cast<std::uint32_t>(data[1]) | (static_cast<std::uint32_t>(data[2]) << 8) |
             (static_cast<std::uint32_t>(data[3]) << 16) |
             (static_cast<std::uint32_t>(data[4]) << 24);
  if (data.size() - kHeaderSize < h.length) throw CorruptRecord("record body runs past the file");
  return h;
}

std::size_t decode_frame(ByteView record, std::span<std::uint8_t> frame) {
  const RecordHeader h = read_header(record);
  const ByteView body = record.subspan(kHeaderSize, h.length);
  const bool ok = h.keyframe() ? rle_decode(body, frame) : rle_decode_add(body, frame);
  if (!ok) throw CorruptRecord("record body does not expand to the frame size");
  return kHeaderSize + h.length;
}

}  // namespace framedag::codec
