#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace colotrace {

// Each category maps to a distinct CLI exit status.
enum class ErrorCode {
  kIo = 2,
  kFormat = 3,
  kParameter = 4,
  kMissingInput = 5,
  kData = 6,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace colotrace
