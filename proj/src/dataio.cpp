#include "normbundle/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <Eigen/Dense>

namespace normbundle {

std::string dataset_csv(const PanelDataset& data) {
  std::ostringstream os;
  os << "id,period,group,choice";
  for (const auto& name : data.covariate_names) os << ',' << name;
  os << '\n';
  char buf[64];
  for (const auto& r : data.rows) {
    os << r.id << ',' << r.period << ',' << r.group << ',' << r.choice;
    for (double v : r.x) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    os << '\n';
  }
  return os.str();
}

void save_dataset(const PanelDataset& data, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw invalid_input_error("cannot open for writing: " + path);
  f << dataset_csv(data);
  if (!f) throw invalid_input_error("write failed: " + path);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

bool is_missing(const std::string& tok) {
  return tok.empty() || tok == "NA" || tok == "na" || tok == "NaN" || tok == "nan";
}

std::int64_t parse_int(const std::string& tok, const char* what, std::size_t line_no) {
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || p != tok.data() + tok.size())
    throw parse_error("line " + std::to_string(line_no) + ": " + what + " is not an integer: '" +
                      tok + "'");
  return v;
}

int parse_choice(const std::string& tok, std::size_t line_no) {
  if (tok == "0" || tok == "empty") return kEmpty;
  if (tok == "1" || tok == "A") return kA;
  if (tok == "2" || tok == "B") return kB;
  if (tok == "3" || tok == "AB") return kAB;
  throw parse_error("line " + std::to_string(line_no) + ": unknown choice token '" + tok + "'");
}

}  // namespace

LoadReport load_dataset(std::istream& in, const std::vector<std::string>& covariates,
                        const std::map<std::string, Recode>& recodes) {
  std::string line;
  if (!std::getline(in, line)) throw parse_error("empty file: no header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_line(line);

  auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw parse_error("required column missing from header: " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_id = col("id"), c_period = col("period"), c_group = col("group"),
                    c_choice = col("choice");

  LoadReport rep;
  std::vector<std::size_t> c_cov;
  if (covariates.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (j != c_id && j != c_period && j != c_group && j != c_choice) {
        c_cov.push_back(j);
        rep.data.covariate_names.push_back(header[j]);
      }
  } else {
    for (const auto& name : covariates) {
      c_cov.push_back(col(name));
      rep.data.covariate_names.push_back(name);
    }
  }
  for (const auto& [name, rule] : recodes) {
    (void)rule;
    if (std::find(rep.data.covariate_names.begin(), rep.data.covariate_names.end(), name) ==
        rep.data.covariate_names.end())
      throw invalid_input_error("recode names a column not being loaded: " + name);
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> f = split_line(line);
    if (f.size() != header.size())
      throw parse_error("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields, got " +
                        std::to_string(f.size()));

    if (is_missing(f[c_choice])) {
      ++rep.dropped_missing_choice;
      continue;
    }
    PanelRow row;
    row.id = parse_int(f[c_id], "id", line_no);
    row.period = static_cast<int>(parse_int(f[c_period], "period", line_no));
    row.group = static_cast<int>(parse_int(f[c_group], "group", line_no));
    row.choice = parse_choice(f[c_choice], line_no);

    bool missing_cov = false;
    row.x.reserve(c_cov.size());
    for (std::size_t k = 0; k < c_cov.size(); ++k) {
      const std::string& tok = f[c_cov[k]];
      const auto rule = recodes.find(rep.data.covariate_names[k]);
      if (is_missing(tok)) {
        if (rule != recodes.end() && rule->second == Recode::na_to_zero) {
          row.x.push_back(0.0);
          continue;
        }
        missing_cov = true;
        break;
      }
      double v = 0.0;
      const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc{} || p != tok.data() + tok.size())
        throw parse_error("line " + std::to_string(line_no) + ": covariate '" +
                          rep.data.covariate_names[k] + "' is not numeric: '" + tok + "'");
      if (v == 0.0 && rule != recodes.end() && rule->second == Recode::zero_to_na) {
        missing_cov = true;
        break;
      }
      row.x.push_back(v);
    }
    if (missing_cov) {
      ++rep.dropped_missing_covariate;
      continue;
    }
    rep.data.rows.push_back(std::move(row));
  }
  return rep;
}

LoadReport load_dataset(const std::string& path, const std::vector<std::string>& covariates,
                        const std::map<std::string, Recode>& recodes) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw invalid_input_error("cannot open: " + path);
  return load_dataset(f, covariates, recodes);
}

Outcome outcome_from_string(const std::string& s) {
  if (s == "A") return Outcome::A_only;
  if (s == "B") return Outcome::B_only;
  if (s == "AB") return Outcome::AB;
  if (s == "any") return Outcome::any;
  throw invalid_input_error("unknown outcome '" + s + "' (want A, B, AB, or any)");
}

ResidualizedShares residualize_cohort_shares(const PanelDataset& data, Outcome outcome,
                                             const std::vector<std::string>& fe_columns,
                                             const std::vector<std::string>& covariate_columns,
                                             int cutoff_period) {
  if (data.rows.empty()) throw invalid_input_error("empty dataset");
  const std::int64_t n = static_cast<std::int64_t>(data.rows.size());

  auto cov_index = [&](const std::string& name) {
    const auto it =
        std::find(data.covariate_names.begin(), data.covariate_names.end(), name);
    if (it == data.covariate_names.end())
      throw invalid_input_error("column not in the dataset: " + name);
    return static_cast<std::size_t>(it - data.covariate_names.begin());
  };

  // factor levels -> dummy columns, first level dropped
  struct Factor {
    std::string name;
    std::vector<double> values;  // per row
    std::vector<double> levels;  // sorted distinct
  };
  std::vector<Factor> factors;
  for (const auto& fc : fe_columns) {
    Factor f;
    f.name = fc;
    if (fc == "group") {
      for (const auto& r : data.rows) f.values.push_back(r.group);
    } else {
      const std::size_t j = cov_index(fc);
      for (const auto& r : data.rows) f.values.push_back(r.x[j]);
    }
    std::set<double> lv(f.values.begin(), f.values.end());
    f.levels.assign(lv.begin(), lv.end());
    factors.push_back(std::move(f));
  }

  std::vector<std::string> names{"intercept"};
  for (const auto& f : factors)
    for (std::size_t l = 1; l < f.levels.size(); ++l) {
      std::ostringstream nm;
      nm << f.name << '=' << f.levels[l];
      names.push_back(nm.str());
    }
  for (const auto& c : covariate_columns) names.push_back(c);
  names.push_back("post");
  const std::size_t k = names.size();

  Eigen::MatrixXd X(n, k);
  Eigen::VectorXd y(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const PanelRow& r = data.rows[i];
    switch (outcome) {
      case Outcome::A_only: y[i] = r.choice == kA; break;
      case Outcome::B_only: y[i] = r.choice == kB; break;
      case Outcome::AB: y[i] = r.choice == kAB; break;
      case Outcome::any: y[i] = r.choice != kEmpty; break;
    }
    std::size_t c = 0;
    X(i, c++) = 1.0;
    for (const auto& f : factors)
      for (std::size_t l = 1; l < f.levels.size(); ++l)
        X(i, c++) = f.values[i] == f.levels[l] ? 1.0 : 0.0;
    for (const auto& cc : covariate_columns) X(i, c++) = r.x[cov_index(cc)];
    X(i, c++) = r.period >= cutoff_period ? 1.0 : 0.0;
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (static_cast<std::size_t>(qr.rank()) < k) {
    const auto perm = qr.colsPermutation().indices();
    std::string bad;
    for (std::size_t j = qr.rank(); j < k; ++j) {
      if (!bad.empty()) bad += ", ";
      bad += names[perm[j]];
    }
    throw rank_deficient_error("design is rank deficient; collinear columns: " + bad);
  }
  const Eigen::VectorXd b = qr.solve(y);
  const Eigen::VectorXd e = y - X * b;

  // HC1 sandwich for the step coefficient
  const Eigen::MatrixXd xtx_inv = (X.transpose() * X).inverse();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
  for (std::int64_t i = 0; i < n; ++i)
    meat.noalias() += e[i] * e[i] * X.row(i).transpose() * X.row(i);
  const Eigen::MatrixXd V =
      xtx_inv * meat * xtx_inv * (static_cast<double>(n) / static_cast<double>(n - k));

  ResidualizedShares out;
  out.design_columns = names;
  out.n_rows = n;
  out.tau = b[k - 1];
  out.tau_se = std::sqrt(V(k - 1, k - 1));

  std::map<int, std::pair<double, std::int64_t>> by_period;
  for (std::int64_t i = 0; i < n; ++i) {
    auto& [sum, cnt] = by_period[data.rows[i].period];
    sum += e[i];
    ++cnt;
  }
  for (const auto& [t, agg] : by_period) {
    out.periods.push_back(t);
    out.shares.push_back(agg.first / agg.second + (t >= cutoff_period ? out.tau : 0.0));
  }
  return out;
}

}  // namespace normbundle
