#include "effectbench/error.hpp"

namespace effectbench {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::parse: return "parse_error";
    case ErrorKind::config: return "config_error";
    case ErrorKind::numeric: return "numeric_error";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::io: return "io_error";
  }
  return "error";
}

}  // namespace effectbench
