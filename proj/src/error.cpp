#include "cotdyn/error.hpp"

namespace cotdyn {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::format: return "format";
    case ErrorKind::corruption: return "corruption";
    case ErrorKind::consistency: return "consistency";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::domain: return "domain";
    case ErrorKind::capacity: return "capacity";
    case ErrorKind::data: return "data";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::numerical: return 3;
    case ErrorKind::io: return 4;
    default: return 2;
  }
}

}  // namespace cotdyn
