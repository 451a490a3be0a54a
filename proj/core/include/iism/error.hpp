#pragma once

#include <stdexcept>
#include <string>

namespace iism {

// Error taxonomy shared across the library. The CLI maps kinds to exit codes
// (validation -> 3, everything else -> 4), and tests match on kind instead of
// parsing messages.
enum class ErrorKind {
    validation,     // bad arguments, violated preconditions, malformed config
    io,             // filesystem and decode failures
    integrity,      // digest mismatch on checkpoint load
    version,        // unknown on-disk format version
    missing_tensor, // checkpoint references a tensor that is not on disk
    numerics,       // NaN loss, non-PSD covariance beyond tolerance, ...
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void throw_error(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace iism
