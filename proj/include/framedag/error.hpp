#pragma once

#include <stdexcept>
#include <string>

namespace framedag {

// Graph, job-spec, and argument problems. The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem and table-store failures.
class StorageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A frame record whose flag, length, or run-length body does not decode.
class CorruptRecord : public StorageError {
 public:
  using StorageError::StorageError;
};

// Raised by kernels; the executor retries the owning work packet.
class KernelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace framedag
