#pragma once

#include <stdexcept>
#include <string>

namespace memaudit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments, configuration or shapes. The CLI maps these to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure; the message always carries the offending path.
class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Malformed file content.
class FormatError : public Error {
 public:
  enum class Kind {
    bad_magic,
    unsupported_version,
    unknown_dtype,
    truncated,
    trailing_data,
    unsupported_format,
    bad_rank,
    bad_header,
  };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace memaudit
