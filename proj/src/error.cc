#include "epi/error.h"

namespace epi {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::undecidable: return "undecidable";
    case ErrorKind::indeterminate: return "indeterminate";
    case ErrorKind::empty_input: return "empty_input";
    case ErrorKind::insufficient_data: return "insufficient_data";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::io: return "io";
    case ErrorKind::schema_mismatch: return "schema_mismatch";
    case ErrorKind::parse: return "parse";
  }
  return "unknown";
}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace epi
