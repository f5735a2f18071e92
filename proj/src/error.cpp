#include "colotrace/error.hpp"

namespace colotrace {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kFormat: return "format_error";
    case ErrorCode::kParameter: return "parameter_error";
    case ErrorCode::kMissingInput: return "missing_input";
    case ErrorCode::kData: return "data_error";
  }
  return "unknown_error";
}

void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace colotrace
