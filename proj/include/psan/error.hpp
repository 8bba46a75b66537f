#ifndef PSAN_ERROR_HPP
#define PSAN_ERROR_HPP

#include <stdexcept>
#include <string>

namespace psan {

// Exit-code contract of the command line tool. Usage/input problems map to 2,
// anything internal or numeric to 1.
enum class ErrorKind {
  invalid_argument,      // bad parameter or shape mismatch
  invalid_state,         // stale trace, inconsistent model/manifest pair
  empty_selection,       // e.g. bounding box of an empty mask
  unsupported_operation, // layer kind outside the supported set
  format,                // unrecognized bytes in a model bundle / manifest
  version,               // bundle format version mismatch
  checksum,              // bundle section CRC failure
  truncated,             // bundle ends mid-section
  io,                    // file system failure, with path context
  training_diverged,     // loss became non-finite
  undefined_ratio,       // similarity ratio with non-positive denominator
  internal_consistency,  // diagnostic invariant violated (e.g. LRP conservation)
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // true for errors caused by user input rather than internal failures
  bool is_usage() const noexcept {
    switch (kind_) {
      case ErrorKind::invalid_argument:
      case ErrorKind::format:
      case ErrorKind::version:
      case ErrorKind::io:
        return true;
      default:
        return false;
    }
  }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) raise(kind, message);
}

} // namespace psan

#endif
