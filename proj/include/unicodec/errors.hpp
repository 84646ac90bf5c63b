#pragma once

#include <stdexcept>
#include <string>

namespace unicodec {

// Every error carries a short machine-parseable category; the CLI prints
// "error: <category>: <message>" and maps categories to exit codes.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

struct NonFiniteError : Error {
  explicit NonFiniteError(const std::string& what) : Error("numeric", what) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

struct UnsupportedFormatError : Error {
  explicit UnsupportedFormatError(const std::string& what)
      : Error("unsupported-format", what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

struct StageOrderError : Error {
  explicit StageOrderError(const std::string& what) : Error("stage-order", what) {}
};

struct InputError : Error {
  explicit InputError(const std::string& what) : Error("input", what) {}
};

}  // namespace unicodec
