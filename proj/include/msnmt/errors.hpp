#pragma once

#include <stdexcept>
#include <string>

namespace msnmt {

enum class ErrorKind {
  Dimension,
  Argument,
  Vocabulary,
  Numeric,
  Alignment,
  Io,
  Validation,
  Compatibility,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorKind::Dimension, w) {}
};
struct ArgumentError : Error {
  explicit ArgumentError(const std::string& w) : Error(ErrorKind::Argument, w) {}
};
struct VocabularyError : Error {
  explicit VocabularyError(const std::string& w) : Error(ErrorKind::Vocabulary, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::Numeric, w) {}
};
struct AlignmentError : Error {
  explicit AlignmentError(const std::string& w) : Error(ErrorKind::Alignment, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::Io, w) {}
};
struct ValidationError : Error {
  explicit ValidationError(const std::string& w) : Error(ErrorKind::Validation, w) {}
};
struct CompatibilityError : Error {
  explicit CompatibilityError(const std::string& w) : Error(ErrorKind::Compatibility, w) {}
};

// Process exit status for each error class: 1 validation, 2 I/O, 3 numeric, 4 compatibility.
int exit_code_for(ErrorKind kind) noexcept;

}  // namespace msnmt
