#include "normbundle/optim.hpp"

#include <cmath>
#include <limits>

namespace normbundle {

namespace {

Eigen::VectorXd clip_to(const Box& box, Eigen::VectorXd x) {
  for (Eigen::Index k = 0; k < x.size(); ++k)
    x[k] = std::min(box.hi[k], std::max(box.lo[k], x[k]));
  return x;
}

// Gradient of the minimization objective with bound-blocked coordinates
// zeroed: a coordinate pinned at a face only counts if it pushes inward.
Eigen::VectorXd projected(const Eigen::VectorXd& g, const Eigen::VectorXd& x, const Box& box) {
  Eigen::VectorXd pg = g;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    if (x[k] <= box.lo[k] && g[k] > 0.0) pg[k] = 0.0;
    if (x[k] >= box.hi[k] && g[k] < 0.0) pg[k] = 0.0;
  }
  return pg;
}

}  // namespace

Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x, int* n_evals) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd g(n);
  Eigen::VectorXd probe = x;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[k]));
    probe[k] = x[k] + h;
    const double fp = f(probe);
    probe[k] = x[k] - h;
    const double fm = f(probe);
    probe[k] = x[k];
    g[k] = (fp - fm) / (2.0 * h);
  }
  if (n_evals) *n_evals += 2 * static_cast<int>(n);
  return g;
}

Eigen::MatrixXd fd_hessian(const Objective& f, const Eigen::VectorXd& x, double rel_step) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd h(n);
  for (Eigen::Index k = 0; k < n; ++k) h[k] = rel_step * std::max(1.0, std::abs(x[k]));
  const double f0 = f(x);
  Eigen::MatrixXd H(n, n);
  Eigen::VectorXd p = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    p[i] = x[i] + h[i];
    const double fp = f(p);
    p[i] = x[i] - h[i];
    const double fm = f(p);
    p[i] = x[i];
    H(i, i) = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      p[i] = x[i] + h[i];
      p[j] = x[j] + h[j];
      const double fpp = f(p);
      p[j] = x[j] - h[j];
      const double fpm = f(p);
      p[i] = x[i] - h[i];
      const double fmm = f(p);
      p[j] = x[j] + h[j];
      const double fmp = f(p);
      p[i] = x[i];
      p[j] = x[j];
      H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
    }
  }
  return H;
}

OptimResult maximize(const Objective& f, const Eigen::VectorXd& x0, const Box& box,
                     const OptimOptions& opts) {
  validate(box);
  validate(opts);
  if (x0.size() != box.lo.size()) throw invalid_input_error("start point does not match box size");
  const Eigen::Index n = x0.size();

  int evals = 0;
  auto F = [&](const Eigen::VectorXd& v) {  // minimized objective
    ++evals;
    return -f(v);
  };

  Eigen::VectorXd x = clip_to(box, x0);
  double Fx = F(x);
  if (!std::isfinite(Fx)) throw invalid_input_error("objective non-finite at the start point");
  Eigen::VectorXd g = -fd_gradient(f, x);
  evals += 2 * static_cast<int>(n);

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);  // inverse-Hessian approximation
  bool scaled = false;

  OptimResult out;
  out.message = "max-iter";
  int iter = 0;
  double last_step = std::numeric_limits<double>::infinity();

  for (iter = 0; iter < opts.max_iter; ++iter) {
    Eigen::VectorXd pg = projected(g, x, box);
    if (pg.lpNorm<Eigen::Infinity>() <= opts.gradient_tol) {
      out.message = "gradient-tol";
      break;
    }
    if (last_step < opts.step_tol) {
      out.message = "step-tol";
      break;
    }

    bool accepted = false;
    Eigen::VectorXd xt;
    double Ft = 0.0;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      Eigen::VectorXd d = attempt == 0 ? Eigen::VectorXd(-H * g) : Eigen::VectorXd(-pg);
      for (Eigen::Index k = 0; k < n; ++k)  // never push along a blocked face
        if (pg[k] == 0.0 && g[k] != 0.0 && (x[k] <= box.lo[k] || x[k] >= box.hi[k])) d[k] = 0.0;
      if (attempt == 0 && d.dot(g) >= 0.0) {  // curvature went bad; retry steepest
        H = Eigen::MatrixXd::Identity(n, n);
        continue;
      }

      double alpha = 1.0;
      for (int ls = 0; ls < 45; ++ls) {
        xt = clip_to(box, x + alpha * d);
        Eigen::VectorXd step = xt - x;
        if (step.lpNorm<Eigen::Infinity>() == 0.0) break;
        Ft = F(xt);
        if (std::isfinite(Ft) && Ft <= Fx + 1e-4 * g.dot(step)) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted && attempt == 0) H = Eigen::MatrixXd::Identity(n, n);
    }
    if (!accepted) {
      out.message = "line-search-stall";
      break;
    }

    Eigen::VectorXd gt = -fd_gradient(f, xt);
    evals += 2 * static_cast<int>(n);
    Eigen::VectorXd s = xt - x;
    Eigen::VectorXd y = gt - g;
    const double sy = s.dot(y);
    if (!scaled && sy > 0.0) {
      H *= sy / y.squaredNorm();
      scaled = true;
    }
    if (sy > 1e-10 * s.norm() * y.norm()) {
      const double r = 1.0 / sy;
      Eigen::MatrixXd V = Eigen::MatrixXd::Identity(n, n) - r * s * y.transpose();
      H = V * H * V.transpose() + r * s * s.transpose();
    }
    last_step = s.lpNorm<Eigen::Infinity>();
    x = xt;
    Fx = Ft;
    g = gt;
  }

  Eigen::VectorXd pg = projected(g, x, box);
  out.x = x;
  out.f = -Fx;
  out.gradient = -g;
  out.grad_norm = pg.lpNorm<Eigen::Infinity>();
  out.converged = out.grad_norm <= opts.gradient_tol;
  out.iterations = iter;
  out.n_evals = evals;
  return out;
}

}  // namespace normbundle
