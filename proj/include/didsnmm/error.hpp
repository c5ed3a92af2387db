#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace didsnmm {

// Exit-code taxonomy shared by the library and the CLI.
enum class ExitCode : int {
  ok = 0,
  config_error = 2,
  data_error = 3,
  estimation_failure = 4,
  acceptance_failure = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Invalid configuration or model specification. `pointer` is a JSON pointer
/// into the offending document when one is available.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string pointer = {})
      : Error(ExitCode::config_error, pointer.empty() ? what : pointer + ": " + what),
        pointer_(std::move(pointer)) {}
  const std::string& pointer() const noexcept { return pointer_; }

 private:
  std::string pointer_;
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::data_error, what) {}
};

class EstimationError : public Error {
 public:
  explicit EstimationError(const std::string& what) : Error(ExitCode::estimation_failure, what) {}
};

}  // namespace didsnmm
