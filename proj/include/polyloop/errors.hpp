#pragma once

#include <stdexcept>
#include <string>

namespace polyloop {

// Base for every error raised by the library. Catch this to handle any
// contract violation uniformly; catch the subclasses to dispatch by kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define POLYLOOP_DEFINE_ERROR(Name)          \
  class Name : public Error {                \
   public:                                   \
    explicit Name(const std::string& what)   \
        : Error(std::string(#Name ": ") + what) {} \
  }

POLYLOOP_DEFINE_ERROR(DegeneratePolygon);
POLYLOOP_DEFINE_ERROR(ShapeMismatch);
POLYLOOP_DEFINE_ERROR(InvalidRange);
POLYLOOP_DEFINE_ERROR(OutOfBounds);
POLYLOOP_DEFINE_ERROR(InvalidK);
POLYLOOP_DEFINE_ERROR(InvalidTemperature);
POLYLOOP_DEFINE_ERROR(PrerequisiteMissing);
POLYLOOP_DEFINE_ERROR(InvalidTarget);
POLYLOOP_DEFINE_ERROR(EmptyChunk);
POLYLOOP_DEFINE_ERROR(InvalidSchedule);
POLYLOOP_DEFINE_ERROR(SkippedInstance);
POLYLOOP_DEFINE_ERROR(CheckpointError);

#undef POLYLOOP_DEFINE_ERROR

// Malformed manifest or store line; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("ParseError: line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace polyloop
