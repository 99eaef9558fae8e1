#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pistm {

// All recoverable failures carry a stable machine-readable category string
// ("shape.mismatch", "io.missing_input", ...). The CLI prints the category
// verbatim and the C API maps it onto a status code.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}

  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape.mismatch", message) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& message) : Error("contract", message) {}
};

class NotPositiveDefiniteError : public Error {
 public:
  NotPositiveDefiniteError(std::size_t pivot, const std::string& message)
      : Error("linalg.not_positive_definite", message), pivot_(pivot) {}

  std::size_t pivot() const { return pivot_; }

 private:
  std::size_t pivot_;
};

class SingularError : public Error {
 public:
  explicit SingularError(const std::string& message) : Error("linalg.singular", message) {}
};

class LowMachError : public Error {
 public:
  explicit LowMachError(const std::string& message) : Error("lbm.low_mach", message) {}
};

class InstabilityError : public Error {
 public:
  InstabilityError(long step, const std::string& message)
      : Error("lbm.instability", message), step_(step) {}

  long step() const { return step_; }

 private:
  long step_;
};

class TrainingDivergedError : public Error {
 public:
  explicit TrainingDivergedError(const std::string& message) : Error("train.diverged", message) {}
};

class IoError : public Error {
 public:
  IoError(const std::string& subcategory, const std::string& message)
      : Error("io." + subcategory, message) {}
};

}  // namespace pistm
