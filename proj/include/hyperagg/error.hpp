#pragma once

#include <stdexcept>
#include <string>

namespace hyperagg {

enum class ErrorCode {
  InvalidShape,
  InvalidConfig,
  InvalidInput,
  InvalidKeypoint,
  NonFinite,
  InconsistentDenoiser,
  IoError,
  UnsupportedFormat,
  CorruptArchive,
  ParseError,
  InvalidRecord,
  GraphError,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, long index = -1)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        index_(index) {}

  ErrorCode code() const noexcept { return code_; }
  // Line number (ParseError) or record index (InvalidRecord); -1 otherwise.
  long index() const noexcept { return index_; }

 private:
  ErrorCode code_;
  long index_;
};

}  // namespace hyperagg
