#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mprobe {

/// Failure categories. The CLI maps these onto exit codes.
enum class ErrorKind {
  Config,        // invalid configuration or usage
  Input,         // caller passed arguments outside an operation's domain
  Precondition,  // input well-formed but the operation does not apply
  Data,          // malformed or inconsistent file / dataset content
  Io,            // file could not be opened, read or written
  Generation,    // sampler gave up after bounded retries
  Degenerate,    // a score is undefined (e.g. a baseline already at 1)
  Numeric,       // NaN / divergence / violated bound
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

/// Process exit code for an error: 1 usage/config, 2 data/format, 3 numeric.
int exit_code(ErrorKind kind);

}  // namespace mprobe
