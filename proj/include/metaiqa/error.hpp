#pragma once

#include <stdexcept>
#include <string>

namespace metaiqa {

// Categories double as CLI exit codes.
enum class ErrorKind : int {
  InvalidArgument = 2,
  ShapeMismatch = 3,
  NonFinite = 4,
  Incompatible = 5,
  CorruptCheckpoint = 6,
  VersionMismatch = 7,
  FingerprintMismatch = 8,
  Io = 9,
  State = 10,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::InvalidArgument, what);
}

}  // namespace metaiqa
