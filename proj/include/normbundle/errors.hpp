#pragma once

#include <stdexcept>
#include <string>

namespace normbundle {

// Error taxonomy. `code` is the machine-readable tag surfaced in CLI reports;
// the CLI maps invalid_input/parse to exit 2 and numeric failures to exit 3.
class model_error : public std::runtime_error {
public:
  model_error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

private:
  std::string code_;
};

struct invalid_input_error : model_error {
  explicit invalid_input_error(const std::string& what)
      : model_error("invalid-input", what) {}
};

struct parse_error : model_error {
  explicit parse_error(const std::string& what) : model_error("parse-error", what) {}
};

struct numeric_overflow_error : model_error {
  explicit numeric_overflow_error(const std::string& what)
      : model_error("numeric-overflow", what) {}
};

struct missing_lag_error : model_error {
  explicit missing_lag_error(const std::string& what)
      : model_error("missing-lag", what) {}
};

struct singular_equilibrium_error : model_error {
  explicit singular_equilibrium_error(const std::string& what)
      : model_error("singular-equilibrium", what) {}
};

struct classification_unavailable_error : model_error {
  explicit classification_unavailable_error(const std::string& what)
      : model_error("classification-unavailable", what) {}
};

struct non_convergence_error : model_error {
  explicit non_convergence_error(const std::string& what)
      : model_error("non-convergence", what) {}
};

struct non_invertible_information_error : model_error {
  explicit non_invertible_information_error(const std::string& what)
      : model_error("non-invertible-information", what) {}
};

struct rank_deficient_error : model_error {
  explicit rank_deficient_error(const std::string& what)
      : model_error("rank-deficient", what) {}
};

}  // namespace normbundle
