#pragma once

#include "framedag/codec.hpp"

namespace framedag {

/// One sequence element. Fill elements come from spacing and carry no payload.
struct Element {
  Bytes payload;
  bool fill = false;

  static Element make_fill() { return Element{{}, true}; }
  friend bool operator==(const Element&, const Element&) = default;
};

/// Non-owning view of an element handed to kernels.
struct ElementView {
  ByteView payload;
  bool fill = false;

  ElementView() = default;
  ElementView(const Element& e) : payload(e.payload), fill(e.fill) {}  // NOLINT(implicit)
  ElementView(ByteView p, bool f) : payload(p), fill(f) {}
};

}  // namespace framedag
