#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace epi {

enum class ErrorKind {
  invalid_argument,
  degenerate,
  undecidable,
  indeterminate,
  empty_input,
  insufficient_data,
  non_finite,
  io,
  schema_mismatch,
  parse,
};

std::string_view to_string(ErrorKind kind);

// All library failures surface as epi::Error; the kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

inline void require(bool cond, ErrorKind kind, const char* what) {
  if (!cond) fail(kind, what);
}

}  // namespace epi
