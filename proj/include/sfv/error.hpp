#pragma once

#include <stdexcept>
#include <string>

namespace sfv {

enum class ErrorCode : int {
  invalid_argument = 1,
  io = 2,
  format = 3,
  checksum = 4,
  version = 5,
  diverged = 6,
  internal = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::invalid_argument, what);
}

}  // namespace sfv

// Like require(), but the message is only built on failure.
#define SFV_REQUIRE(ok, ...)                                                        \
  do {                                                                              \
    if (!(ok)) ::sfv::fail(::sfv::ErrorCode::invalid_argument, __VA_ARGS__);        \
  } while (0)
