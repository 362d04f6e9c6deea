#pragma once

#include <cmath>
#include <vector>

#include "normbundle/errors.hpp"

namespace normbundle {

// Shock-space integration settings: regular grid_n x grid_n grid on
// [-bound, bound]^2 with sigmoid smoothing temperature epsilon.
struct QuadratureSpec {
  int grid_n = 200;
  double bound = 5.0;
  double epsilon = 0.05;
};

inline void validate(const QuadratureSpec& q) {
  if (q.grid_n < 2) throw invalid_input_error("quadrature grid_n must be >= 2");
  if (!(q.bound > 0.0)) throw invalid_input_error("quadrature bound must be positive");
  if (!(q.epsilon > 0.0)) throw invalid_input_error("quadrature epsilon must be positive");
}

// Precomputed trapezoid nodes/weights and the density*weight surface for one
// correlation value.  set_rho is cheap to skip when rho is unchanged, which is
// what makes finite-difference sweeps over non-rho parameters inexpensive.
class ShockGrid {
public:
  explicit ShockGrid(const QuadratureSpec& spec) : spec_(spec) {
    validate(spec);
    const int n = spec_.grid_n;
    z_.resize(n);
    w_.resize(n);
    const double h = 2.0 * spec_.bound / (n - 1);
    for (int i = 0; i < n; ++i) {
      z_[i] = -spec_.bound + h * i;
      w_[i] = (i == 0 || i == n - 1) ? 0.5 * h : h;
    }
    dw_.resize(static_cast<std::size_t>(n) * n);
  }

  void set_rho(double rho) {
    if (has_rho_ && rho == rho_) return;
    if (!(rho > -1.0 && rho < 1.0))
      throw invalid_input_error("rho must lie strictly inside (-1,1)");
    const double om = 1.0 - rho * rho;
    const double k = 0.5 / om;
    const double c = 1.0 / (6.283185307179586476925286766559 * std::sqrt(om));
    const int n = spec_.grid_n;
    // single exponent per entry: the quadratic form is nonnegative for any
    // |rho| < 1, so the exp never overflows even with rho pushed near +-1
    for (int i = 0; i < n; ++i) {
      double* row = &dw_[static_cast<std::size_t>(i) * n];
      const double ci = c * w_[i];
      const double zi = z_[i];
      for (int j = 0; j < n; ++j) {
        const double zj = z_[j];
        row[j] = ci * w_[j] * std::exp(-k * (zi * zi + zj * zj - 2.0 * rho * zi * zj));
      }
    }
    rho_ = rho;
    has_rho_ = true;
  }

  const QuadratureSpec& spec() const { return spec_; }
  int n() const { return spec_.grid_n; }
  double epsilon() const { return spec_.epsilon; }
  const std::vector<double>& z() const { return z_; }
  const double* dw_row(int i) const { return &dw_[static_cast<std::size_t>(i) * n()]; }

private:
  QuadratureSpec spec_;
  std::vector<double> z_, w_, dw_;
  double rho_ = 0.0;
  bool has_rho_ = false;
};

}  // namespace normbundle
