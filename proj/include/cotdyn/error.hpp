#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cotdyn {

enum class ErrorKind {
  validation,
  format,
  corruption,
  consistency,
  dimension,
  numerical,
  configuration,
  domain,
  capacity,
  data,
  io,
};

std::string_view to_string(ErrorKind kind);

/// Base of every error raised by the library. The kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define COTDYN_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& message) : Error(Kind, message) {}   \
  }

COTDYN_DEFINE_ERROR(ValidationError, ErrorKind::validation);
COTDYN_DEFINE_ERROR(FormatError, ErrorKind::format);
COTDYN_DEFINE_ERROR(CorruptionError, ErrorKind::corruption);
COTDYN_DEFINE_ERROR(ConsistencyError, ErrorKind::consistency);
COTDYN_DEFINE_ERROR(DimensionError, ErrorKind::dimension);
COTDYN_DEFINE_ERROR(NumericalError, ErrorKind::numerical);
COTDYN_DEFINE_ERROR(ConfigurationError, ErrorKind::configuration);
COTDYN_DEFINE_ERROR(DomainError, ErrorKind::domain);
COTDYN_DEFINE_ERROR(CapacityError, ErrorKind::capacity);
COTDYN_DEFINE_ERROR(DataError, ErrorKind::data);
COTDYN_DEFINE_ERROR(IoError, ErrorKind::io);

#undef COTDYN_DEFINE_ERROR

/// Process exit code for an error kind: 2 validation-like, 3 numerical, 4 I/O.
int exit_code(ErrorKind kind) noexcept;

}  // namespace cotdyn
