#include "normbundle/estimation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include "normbundle/choice.hpp"
#include "normbundle/rng.hpp"

namespace normbundle {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kCoefBound = 20.0;   // rest stop for diverging coefficients
constexpr double kRhoPreBound = 7.0;  // |rho| <= tanh(7), numerically safe
constexpr double kInfoCondWarn = 1e8;

// Rows sharing a (group, period, covariate) pattern face identical choice
// probabilities, so the likelihood collapses to per-pattern choice counts.
// std::map keys make the unit order independent of row order.
struct Unit {
  CovariateRow x;
  ShareVector lag;
  std::array<std::int64_t, 4> counts{};
};

struct CollapsedPanel {
  std::vector<Unit> units;
  std::int64_t n_rows = 0;
};

CollapsedPanel collapse(const PanelDataset& data, const LaggedShareTable& q_hat) {
  std::map<std::int64_t, std::int64_t> first_period;
  for (const auto& r : data.rows) {
    auto it = first_period.find(r.group);
    if (it == first_period.end() || r.period < it->second) first_period[r.group] = r.period;
  }

  std::map<std::tuple<std::int64_t, std::int64_t, std::vector<double>>,
           std::array<std::int64_t, 4>>
      counts;
  for (const auto& r : data.rows) {
    if (r.choice < 0 || r.choice > 3) throw invalid_input_error("choice code outside 0..3");
    if (r.period == first_period[r.group]) continue;  // no lag for the first period
    counts[{r.group, r.period, r.x}][static_cast<std::size_t>(r.choice)]++;
  }

  CollapsedPanel cp;
  for (const auto& [key, c] : counts) {
    const auto& [group, period, x] = key;
    const CellShare* lag = q_hat.find(group, period - 1);
    if (!lag) {
      std::ostringstream os;
      os << "no lagged shares for cell (group=" << group << ", period=" << period - 1 << ")";
      throw missing_lag_error(os.str());
    }
    Unit u;
    u.x.x = x;
    u.x.group_id = static_cast<int>(group);
    u.x.period = static_cast<int>(period);
    u.lag = lag->q;
    u.counts = c;
    for (auto k : c) cp.n_rows += k;
    cp.units.push_back(std::move(u));
  }
  return cp;
}

double eval_loglik(const Theta& th, const CollapsedPanel& cp, ShockGrid& grid) {
  grid.set_rho(th.rho);
  double total = 0.0;
  for (const auto& u : cp.units) {
    const auto mu = mean_utilities(th, u.x, u.lag);
    const auto sr = detail::smoothed_probs_core(mu[1], mu[2], gamma_tilde(th, u.lag), grid);
    for (int v = 0; v < 4; ++v)
      if (u.counts[v]) total += static_cast<double>(u.counts[v]) * std::log(std::max(sr.q[v], kProbFloor));
  }
  return total;
}

}  // namespace

const CellShare* LaggedShareTable::find(std::int64_t group, std::int64_t period) const {
  auto it = std::lower_bound(cells.begin(), cells.end(), std::make_pair(group, period),
                             [](const CellShare& c, const std::pair<std::int64_t, std::int64_t>& k) {
                               return std::make_pair(c.group, c.period) < k;
                             });
  if (it == cells.end() || it->group != group || it->period != period) return nullptr;
  return &*it;
}

LaggedShareTable compute_lagged_shares(const PanelDataset& data, std::int64_t min_cell) {
  if (min_cell < 1) throw invalid_input_error("min_cell must be >= 1");
  std::map<std::pair<std::int64_t, std::int64_t>, std::array<std::int64_t, 4>> counts;
  for (const auto& r : data.rows) {
    if (r.choice < 0 || r.choice > 3) throw invalid_input_error("choice code outside 0..3");
    counts[{r.group, r.period}][static_cast<std::size_t>(r.choice)]++;
  }

  LaggedShareTable table;
  table.min_cell = min_cell;
  for (const auto& [key, c] : counts) {
    CellShare cell;
    cell.group = key.first;
    cell.period = key.second;
    cell.n = c[0] + c[1] + c[2] + c[3];
    cell.q.p_A = static_cast<double>(c[kA]) / static_cast<double>(cell.n);
    cell.q.p_B = static_cast<double>(c[kB]) / static_cast<double>(cell.n);
    cell.q.p_AB = static_cast<double>(c[kAB]) / static_cast<double>(cell.n);
    cell.small = cell.n < min_cell;
    table.cells.push_back(cell);
  }

  // every populated cell after a group's first period needs its predecessor
  std::ostringstream gaps;
  bool any_gap = false;
  for (std::size_t i = 1; i < table.cells.size(); ++i) {
    const auto& prev = table.cells[i - 1];
    const auto& cur = table.cells[i];
    if (cur.group == prev.group && cur.period != prev.period + 1) {
      if (any_gap) gaps << ", ";
      gaps << "(group=" << cur.group << ", period=" << cur.period - 1 << ")";
      any_gap = true;
    }
  }
  if (any_gap)
    throw missing_lag_error("empty cells needed as lags: " + gaps.str());
  return table;
}

double loglik(const Theta& theta, const PanelDataset& data, const LaggedShareTable& q_hat,
              const FitConfig& cfg) {
  validate(theta);
  validate(cfg.quad);
  const CollapsedPanel cp = collapse(data, q_hat);
  ShockGrid grid(cfg.quad);
  return eval_loglik(theta, cp, grid);
}

double rho_from_precursor(double pre) {
  // tanh rounds to +-1 beyond |pre|~19; cap far outside the optimizer's box so
  // the map stays strictly inside (-1,1) for any input
  const double cap = 1.0 - 1e-12;
  return std::clamp(std::tanh(pre), -cap, cap);
}
double precursor_from_rho(double rho) {
  if (!(rho > -1.0 && rho < 1.0)) throw invalid_input_error("rho must lie strictly inside (-1,1)");
  return std::atanh(rho);
}

ParamPacker::ParamPacker(std::size_t n_cov, const ExclusionSpec& exclusion, bool restrict_additive,
                         bool s_nonnegative, bool fix_spillovers)
    : n_cov_(n_cov),
      additive_(restrict_additive),
      s_nonneg_(s_nonnegative),
      fix_s_(fix_spillovers) {
  validate(exclusion, n_cov);
  a_idx_.assign(n_cov, -1);
  b_idx_.assign(n_cov, -1);
  int k = 0;
  for (std::size_t j = 0; j < n_cov; ++j)
    if (!exclusion.idx_A.count(j)) {
      a_idx_[j] = k++;
      names_.push_back("beta_A[" + std::to_string(j) + "]");
    }
  for (std::size_t j = 0; j < n_cov; ++j)
    if (!exclusion.idx_B.count(j)) {
      b_idx_[j] = k++;
      names_.push_back("beta_B[" + std::to_string(j) + "]");
    }
  if (!fix_s_) {
    s_a_ = k++;
    names_.push_back("s_A");
    s_b_ = k++;
    names_.push_back("s_B");
    if (!additive_) {
      s_ab_ = k++;
      names_.push_back("s_AB");
    }
  }
  gamma_ = k++;
  names_.push_back("gamma");
  rho_ = k++;
  names_.push_back("rho");
  dim_ = k;
}

Eigen::VectorXd ParamPacker::pack(const Theta& th) const {
  if (th.n_cov() != n_cov_) throw invalid_input_error("theta covariate count does not match packer");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
  for (std::size_t j = 0; j < n_cov_; ++j) {
    if (a_idx_[j] >= 0) v[a_idx_[j]] = th.beta_A[j];
    if (b_idx_[j] >= 0) v[b_idx_[j]] = th.beta_B[j];
  }
  if (fix_s_) {
    if (th.s_A != 0.0 || th.s_B != 0.0 || th.s_AB != 0.0)
      throw invalid_input_error("theta has nonzero spillovers but the packer fixes them at zero");
  } else {
    v[s_a_] = th.s_A;
    v[s_b_] = th.s_B;
    if (s_ab_ >= 0) v[s_ab_] = th.s_AB;
  }
  v[gamma_] = th.gamma;
  v[rho_] = precursor_from_rho(th.rho);
  return v;
}

Theta ParamPacker::unpack(const Eigen::VectorXd& v) const {
  if (v.size() != dim_) throw invalid_input_error("packed vector does not match packer size");
  Theta th;
  th.beta_A.assign(n_cov_, 0.0);
  th.beta_B.assign(n_cov_, 0.0);
  for (std::size_t j = 0; j < n_cov_; ++j) {
    if (a_idx_[j] >= 0) th.beta_A[j] = v[a_idx_[j]];
    if (b_idx_[j] >= 0) th.beta_B[j] = v[b_idx_[j]];
  }
  th.s_A = fix_s_ ? 0.0 : v[s_a_];
  th.s_B = fix_s_ ? 0.0 : v[s_b_];
  th.s_AB = (additive_ || fix_s_) ? th.s_A + th.s_B : v[s_ab_];
  th.gamma = v[gamma_];
  th.rho = rho_from_precursor(v[rho_]);
  th.restrict_additive = additive_;
  return th;
}

Box ParamPacker::box() const {
  Box b;
  b.lo = Eigen::VectorXd::Constant(dim_, -kCoefBound);
  b.hi = Eigen::VectorXd::Constant(dim_, kCoefBound);
  if (s_nonneg_ && !fix_s_) {
    b.lo[s_a_] = 0.0;
    b.lo[s_b_] = 0.0;
    if (s_ab_ >= 0) b.lo[s_ab_] = 0.0;
  }
  b.lo[rho_] = -kRhoPreBound;
  b.hi[rho_] = kRhoPreBound;
  return b;
}

void validate(const FitConfig& cfg, std::size_t n_cov) {
  validate(cfg.quad);
  validate(cfg.optimizer);
  validate(cfg.exclusion, n_cov);
  if (cfg.n_starts < 1) throw invalid_input_error("n_starts must be >= 1");
  if (!(cfg.start_dispersion >= 0.0)) throw invalid_input_error("start_dispersion must be >= 0");
}

FitResult fit(const PanelDataset& data, const FitConfig& cfg) {
  const std::size_t n_cov = data.covariate_names.size();
  validate(cfg, n_cov);
  if (data.rows.empty()) throw invalid_input_error("dataset is empty");

  LaggedShareTable q_hat = compute_lagged_shares(data);
  const CollapsedPanel cp = collapse(data, q_hat);
  if (cp.n_rows == 0) throw invalid_input_error("data must span at least two periods");

  const ParamPacker packer(n_cov, cfg.exclusion, cfg.restrict_additive, cfg.s_nonnegative,
                           cfg.fix_spillovers);
  const Box box = packer.box();
  ShockGrid grid(cfg.quad);
  const double scale = static_cast<double>(cp.n_rows);
  Objective objective = [&](const Eigen::VectorXd& v) {
    return eval_loglik(packer.unpack(v), cp, grid) / scale;
  };

  std::vector<StartRecord> table;
  std::vector<OptimResult> runs;
  for (int k = 0; k < cfg.n_starts; ++k) {
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(packer.dim());
    if (k > 0) {
      NormalSampler rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(k)));
      for (int j = 0; j < packer.dim(); ++j) x0[j] = cfg.start_dispersion * rng.normal();
    }
    OptimResult r = maximize(objective, x0, box, cfg.optimizer);
    table.push_back({r.f * scale, r.converged, r.iterations});
    runs.push_back(std::move(r));
  }

  int best = -1;
  for (int k = 0; k < cfg.n_starts; ++k) {
    if (!runs[k].converged) continue;
    if (best < 0 || runs[k].f > runs[best].f) best = k;
  }
  if (best < 0) throw fit_failure_error("no optimization start converged", table);

  FitResult out;
  out.theta_hat = packer.unpack(runs[best].x);
  out.loglik = runs[best].f * scale;
  out.converged = true;
  out.start_table = std::move(table);
  out.lagged_share_table = q_hat;
  out.n_rows_used = cp.n_rows;
  out.free_values = runs[best].x;
  out.free_names = packer.names();

  for (const auto& c : q_hat.cells)
    if (c.small) {
      std::ostringstream os;
      os << "small cell (group=" << c.group << ", period=" << c.period << "): n=" << c.n;
      out.warnings.push_back(os.str());
    }
  for (int k = 0; k < packer.dim(); ++k) {
    const double tol = 1e-6 * std::max(1.0, std::abs(box.lo[k]));
    if (runs[best].x[k] <= box.lo[k] + tol || runs[best].x[k] >= box.hi[k] - tol)
      out.warnings.push_back("parameter " + packer.names()[k] + " at box bound");
  }

  // observed information (sum scale) for the condition report, plug-in SEs,
  // and the exclusion-relevance advisory
  const Eigen::MatrixXd info = -scale * fd_hessian(objective, runs[best].x);
  const double diag_max = std::max(1.0, info.diagonal().maxCoeff());
  for (int k = 0; k < packer.dim(); ++k)
    if (info(k, k) <= 1e-10 * diag_max)
      out.warnings.push_back("parameter " + packer.names()[k] +
                             " unidentified at the optimum (flat likelihood)");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
  const double ev_min = es.eigenvalues().minCoeff();
  const double ev_max = es.eigenvalues().maxCoeff();
  out.se_plugin = Eigen::VectorXd::Constant(packer.dim(), std::numeric_limits<double>::quiet_NaN());
  if (ev_min > 0.0) {
    out.info_condition = ev_max / ev_min;
    const Eigen::MatrixXd vcov = info.inverse();
    for (int k = 0; k < packer.dim(); ++k) out.se_plugin[k] = std::sqrt(std::max(vcov(k, k), 0.0));
    // precursor -> rho scale
    const double slope = 1.0 - out.theta_hat.rho * out.theta_hat.rho;
    out.se_plugin[packer.idx_rho()] *= slope;
  } else {
    out.info_condition = std::numeric_limits<double>::infinity();
    out.warnings.push_back("observed information not positive definite");
  }
  if (out.info_condition > kInfoCondWarn)
    out.warnings.push_back("information condition number above 1e8");

  if (ev_min > 0.0) {
    bool any_cross = false, any_relevant = false;
    auto check = [&](int packed_idx, double coef) {
      if (packed_idx < 0) return;
      any_cross = true;
      const double se = out.se_plugin[packed_idx];
      if (se > 0.0 && std::abs(coef) / se >= 1.96) any_relevant = true;
    };
    for (auto j : cfg.exclusion.idx_A) check(packer.idx_beta_B(j), out.theta_hat.beta_B[j]);
    for (auto j : cfg.exclusion.idx_B) check(packer.idx_beta_A(j), out.theta_hat.beta_A[j]);
    if (any_cross && !any_relevant)
      out.warnings.push_back("exclusion relevance: no excluded column is significant for the other norm");
  }

  return out;
}

}  // namespace normbundle
