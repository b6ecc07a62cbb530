#pragma once

#include <stdexcept>
#include <string>

namespace prsr {

// One exception type for the whole library; the category maps to a distinct
// process exit code so scripted callers can tell failure classes apart.
enum class ErrorCategory {
  invalid_input,  // bad values handed to an operation (non-finite, empty, out of range)
  dimension,      // shape or length mismatch
  parse,          // malformed file content
  data,           // structurally valid file with inconsistent content (duplicate ids, ...)
  config,         // conflicting or impossible configuration
  io,             // missing file, unreadable path, socket failure
  contract,       // API misuse (backward on non-scalar, ...)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const { return category_; }

  int exit_code() const { return exit_code_for(category_); }

  static int exit_code_for(ErrorCategory c) {
    switch (c) {
      case ErrorCategory::io: return 3;
      case ErrorCategory::parse: return 4;
      case ErrorCategory::data: return 5;
      case ErrorCategory::config: return 6;
      case ErrorCategory::invalid_input: return 7;
      case ErrorCategory::dimension: return 8;
      case ErrorCategory::contract: return 9;
    }
    return 1;
  }

  static const char* category_name(ErrorCategory c) {
    switch (c) {
      case ErrorCategory::invalid_input: return "invalid-input";
      case ErrorCategory::dimension: return "dimension";
      case ErrorCategory::parse: return "parse";
      case ErrorCategory::data: return "data";
      case ErrorCategory::config: return "config";
      case ErrorCategory::io: return "io";
      case ErrorCategory::contract: return "contract";
    }
    return "error";
  }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void throw_error(ErrorCategory c, const std::string& message) {
  throw Error(c, message);
}

}  // namespace prsr
