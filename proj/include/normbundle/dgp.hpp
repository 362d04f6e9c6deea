#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "normbundle/types.hpp"

namespace normbundle {

// One covariate column generator.
struct ColumnSpec {
  enum class Kind { constant, binary, normal, policy_step };
  Kind kind = Kind::constant;
  std::string name = "x";
  double p = 0.5;        // binary
  double mu = 0.0;       // normal
  double sigma = 1.0;    // normal
  int cutoff = 2;        // policy_step: column is 1 for period >= cutoff

  static ColumnSpec constant(std::string name) { return {Kind::constant, std::move(name)}; }
  static ColumnSpec binary(std::string name, double p) {
    ColumnSpec c{Kind::binary, std::move(name)};
    c.p = p;
    return c;
  }
  static ColumnSpec normal(std::string name, double mu, double sigma) {
    ColumnSpec c{Kind::normal, std::move(name)};
    c.mu = mu;
    c.sigma = sigma;
    return c;
  }
  static ColumnSpec policy_step(std::string name, int cutoff) {
    ColumnSpec c{Kind::policy_step, std::move(name)};
    c.cutoff = cutoff;
    return c;
  }
};

struct SimConfig {
  int n_groups = 1;
  int n_per_group = 1000;
  int n_periods = 2;
  Theta theta_true;
  std::vector<ColumnSpec> covariates;
  std::vector<ShareVector> initial_shares;  // one per group
  std::uint64_t seed = 1;
};

void validate(const SimConfig& cfg);

struct PanelRow {
  std::int64_t id = 0;
  int period = 0;
  int group = 0;
  int choice = 0;  // Bundle coding
  std::vector<double> x;
};

struct PanelDataset {
  std::vector<std::string> covariate_names;
  std::vector<PanelRow> rows;
};

struct SimResult {
  PanelDataset data;
  // realized sample shares per group and period, share_path[g][t-1]
  std::vector<std::vector<ShareVector>> share_path;
};

SimResult simulate(const SimConfig& cfg);

}  // namespace normbundle
