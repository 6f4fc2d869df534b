#include "hyperagg/error.hpp"

namespace hyperagg {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::InvalidKeypoint: return "InvalidKeypoint";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::InconsistentDenoiser: return "InconsistentDenoiser";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::CorruptArchive: return "CorruptArchive";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvalidRecord: return "InvalidRecord";
    case ErrorCode::GraphError: return "GraphError";
  }
  return "Unknown";
}

}  // namespace hyperagg
