#pragma once

#include <stdexcept>
#include <string>

namespace softdiamond {

/// Root of every error thrown by the library. `kind()` is a stable
/// machine-readable tag; `what()` carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Input failed validation before any numeric work started.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message) : Error("ValidationError", message) {}
  ValidationError(std::string kind, const std::string& message) : Error(std::move(kind), message) {}
};

/// A numeric procedure could not produce a trustworthy result.
class NumericError : public Error {
 public:
  NumericError(std::string kind, const std::string& message) : Error(std::move(kind), message) {}
};

/// Corrupt or incompatible file/bytes.
class FormatError : public Error {
 public:
  FormatError(std::string kind, const std::string& message) : Error(std::move(kind), message) {}
};

struct InvalidParameter : ValidationError {
  explicit InvalidParameter(const std::string& m) : ValidationError("InvalidParameter", m) {}
};
struct NonSymmetric : ValidationError {
  explicit NonSymmetric(const std::string& m) : ValidationError("NonSymmetric", m) {}
};
struct ShapeMismatch : ValidationError {
  explicit ShapeMismatch(const std::string& m) : ValidationError("ShapeMismatch", m) {}
};
struct QuadratureFailure : NumericError {
  explicit QuadratureFailure(const std::string& m) : NumericError("QuadratureFailure", m) {}
};
struct DegenerateDensity : NumericError {
  explicit DegenerateDensity(const std::string& m) : NumericError("DegenerateDensity", m) {}
};
struct NonFiniteGradient : NumericError {
  explicit NonFiniteGradient(const std::string& m) : NumericError("NonFiniteGradient", m) {}
};
struct EmptyLevelSet : NumericError {
  explicit EmptyLevelSet(const std::string& m) : NumericError("EmptyLevelSet", m) {}
};
struct RootNotBracketed : NumericError {
  explicit RootNotBracketed(const std::string& m) : NumericError("RootNotBracketed", m) {}
};
struct InfeasibleBudget : NumericError {
  explicit InfeasibleBudget(const std::string& m) : NumericError("InfeasibleBudget", m) {}
};
struct EmptyModel : ValidationError {
  explicit EmptyModel(const std::string& m) : ValidationError("EmptyModel", m) {}
};
struct ChecksumMismatch : FormatError {
  explicit ChecksumMismatch(const std::string& m) : FormatError("ChecksumMismatch", m) {}
};
struct VersionMismatch : FormatError {
  explicit VersionMismatch(const std::string& m) : FormatError("VersionMismatch", m) {}
};
struct MalformedRecord : FormatError {
  explicit MalformedRecord(const std::string& m) : FormatError("MalformedRecord", m) {}
};
struct LabelOutOfRange : FormatError {
  explicit LabelOutOfRange(const std::string& m) : FormatError("LabelOutOfRange", m) {}
};

}  // namespace softdiamond
