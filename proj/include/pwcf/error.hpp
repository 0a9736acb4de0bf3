#pragma once

#include <stdexcept>
#include <string>

namespace pwcf {

enum class ErrorCode {
  kDimensionMismatch,
  kNonFinite,
  kInvalidArgument,
  kUnsupportedFormulation,
  kNotConverged,
  kIo,
};

const char* ToString(ErrorCode code);

// Single exception type for contract violations. Solver outcomes (line-search
// failure, iteration caps) are reported through status fields, not thrown.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pwcf
