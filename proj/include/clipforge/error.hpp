#pragma once

#include <stdexcept>
#include <string>

namespace clipforge {

enum class ErrorCode {
  invalid_argument,  // precondition or validation failure
  io,                // file system, decode/encode
  numeric,           // degenerate or non-finite values
  runtime,           // everything else
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }
[[noreturn]] inline void fail_invalid(const std::string& msg) {
  fail(ErrorCode::invalid_argument, msg);
}

}  // namespace clipforge
