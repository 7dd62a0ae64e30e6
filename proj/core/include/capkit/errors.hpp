#pragma once

#include <stdexcept>
#include <string>

namespace capkit {

// Bad input: malformed config, shape mismatch, invalid dataset contents.
// The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem and serialization failures. The CLI maps this to exit code 2.
class IoError : public std::runtime_error {
 public:
  enum class Kind {
    OpenFailed,
    WriteFailed,
    BadMagic,
    BadVersion,
    Truncated,
    DuplicateId,
    SizeMismatch,
  };

  IoError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace capkit
