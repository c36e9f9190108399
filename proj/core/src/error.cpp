#include "mprobe/error.hpp"

namespace mprobe {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config error";
    case ErrorKind::Input: return "input error";
    case ErrorKind::Precondition: return "precondition error";
    case ErrorKind::Data: return "data error";
    case ErrorKind::Io: return "io error";
    case ErrorKind::Generation: return "generation error";
    case ErrorKind::Degenerate: return "degenerate score";
    case ErrorKind::Numeric: return "numeric error";
  }
  return "error";
}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Input:
    case ErrorKind::Precondition:
      return 1;
    case ErrorKind::Data:
    case ErrorKind::Io:
    case ErrorKind::Generation:
    case ErrorKind::Degenerate:
      return 2;
    case ErrorKind::Numeric:
      return 3;
  }
  return 1;
}

}  // namespace mprobe
