#pragma once

#include <stdexcept>
#include <string>

namespace uasa {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

#define UASA_DEFINE_ERROR(Name, tag)                           \
  class Name : public Error {                                  \
   public:                                                     \
    using Error::Error;                                        \
    const char* kind() const noexcept override { return tag; } \
  };

UASA_DEFINE_ERROR(InvalidInput, "invalid-input")
UASA_DEFINE_ERROR(InvalidParameter, "invalid-parameter")
UASA_DEFINE_ERROR(InvalidState, "invalid-state")
UASA_DEFINE_ERROR(InvalidConfig, "invalid-config")
UASA_DEFINE_ERROR(ParseError, "parse-error")
UASA_DEFINE_ERROR(IoError, "io-error")
UASA_DEFINE_ERROR(DivergenceError, "divergence")

#undef UASA_DEFINE_ERROR

}  // namespace uasa
