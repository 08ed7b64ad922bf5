#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pscal/data.hpp"
#include "pscal/errors.hpp"

namespace pscal {

// Comma-separated values with a header row; a missing value is an empty cell
// or the literal NA. No quoting rules: column names and numbers only.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<double>>> rows;

  Eigen::Index n() const { return static_cast<Eigen::Index>(rows.size()); }

  Eigen::Index column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw BadColumn("no column named '" + name + "'");
    return static_cast<Eigen::Index>(it - columns.begin());
  }
  bool has_column(const std::string& name) const {
    return std::find(columns.begin(), columns.end(), name) != columns.end();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace detail

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path + "' is empty");
  table.columns = detail::split_csv_line(line);
  if (table.columns.empty()) throw ParseError("'" + path + "' has an empty header");

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != table.columns.size())
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(table.columns.size()) + " fields, got " +
                       std::to_string(fields.size()));
    std::vector<std::optional<double>> row;
    row.reserve(fields.size());
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const auto& f = fields[j];
      if (f.empty() || f == "NA") {
        row.emplace_back(std::nullopt);
        continue;
      }
      try {
        std::size_t used = 0;
        const double v = std::stod(f, &used);
        if (used != f.size()) throw std::invalid_argument(f);
        row.emplace_back(v);
      } catch (const std::exception&) {
        throw NonNumeric("column '" + table.columns[j] + "' at line " +
                         std::to_string(lineno) + ": '" + f + "'");
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

struct ColumnRoles {
  std::vector<std::string> outcomes;    // one for Sample, several for MultiSample
  std::vector<std::string> covariates;  // empty = every non-outcome, non-response column
  std::string response_col;             // optional explicit 0/1 indicator
};

namespace detail {

inline std::vector<std::string> resolve_covariates(const CsvTable& t,
                                                   const ColumnRoles& roles) {
  if (!roles.covariates.empty()) {
    for (const auto& c : roles.covariates) t.column(c);
    return roles.covariates;
  }
  std::vector<std::string> cov;
  for (const auto& c : t.columns) {
    if (std::find(roles.outcomes.begin(), roles.outcomes.end(), c) != roles.outcomes.end())
      continue;
    if (c == roles.response_col) continue;
    cov.push_back(c);
  }
  return cov;
}

inline double require_cell(const CsvTable& t, Eigen::Index i, Eigen::Index j) {
  const auto& cell = t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  if (!cell)
    throw ParseError("column '" + t.columns[static_cast<std::size_t>(j)] +
                     "' has a missing value at data row " + std::to_string(i + 1) +
                     " but must be fully observed");
  return *cell;
}

}  // namespace detail

struct LoadedSample {
  Sample sample;
  std::vector<std::string> covariate_names;
};

// Missingness comes from empty cells of the outcome column, or from an
// explicit response column when configured (in which case outcome values of
// nonrespondents are dropped).
inline LoadedSample load_sample(const CsvTable& t, const ColumnRoles& roles) {
  if (roles.outcomes.size() != 1)
    throw MissingRequired("exactly one outcome column expected");
  const auto yc = t.column(roles.outcomes[0]);
  const auto cov = detail::resolve_covariates(t, roles);
  const auto n = t.n();
  if (n == 0) throw ParseError("no data rows");

  Matrix X(n, static_cast<Eigen::Index>(cov.size()));
  for (std::size_t j = 0; j < cov.size(); ++j) {
    const auto cj = t.column(cov[j]);
    for (Eigen::Index i = 0; i < n; ++i)
      X(i, static_cast<Eigen::Index>(j)) = detail::require_cell(t, i, cj);
  }

  LoadedSample out;
  out.covariate_names = cov;
  if (roles.response_col.empty()) {
    std::vector<std::optional<double>> y(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      y[static_cast<std::size_t>(i)] = t.rows[static_cast<std::size_t>(i)]
                                             [static_cast<std::size_t>(yc)];
    out.sample = Sample::from_optional(std::move(X), y);
  } else {
    const auto rc = t.column(roles.response_col);
    Vector y = Vector::Zero(n);
    std::vector<std::uint8_t> delta(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dv = detail::require_cell(t, i, rc);
      if (dv != 0.0 && dv != 1.0)
        throw ParseError("response column '" + roles.response_col +
                         "' must be 0/1; data row " + std::to_string(i + 1));
      delta[static_cast<std::size_t>(i)] = dv == 1.0 ? 1 : 0;
      const auto& cell = t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(yc)];
      if (delta[static_cast<std::size_t>(i)]) {
        if (!cell)
          throw MissingObservedOutcome("data row " + std::to_string(i + 1) +
                                       " responds but the outcome cell is empty");
        y(i) = *cell;
      }
      // nonrespondent outcome values, when present, are dropped
    }
    out.sample = Sample::masked(std::move(X), std::move(y), std::move(delta));
  }
  validate(out.sample);
  return out;
}

struct LoadedMultiSample {
  MultiSample sample;
  std::vector<std::string> outcome_names;
  std::vector<std::string> covariate_names;
};

inline LoadedMultiSample load_multisample(const CsvTable& t, const ColumnRoles& roles) {
  if (roles.outcomes.size() < 2)
    throw MissingRequired("at least two outcome columns expected");
  const auto n = t.n();
  if (n == 0) throw ParseError("no data rows");
  const auto cov = detail::resolve_covariates(t, roles);

  LoadedMultiSample out;
  out.outcome_names = roles.outcomes;
  out.covariate_names = cov;
  out.sample.Y = Matrix::Zero(n, static_cast<Eigen::Index>(roles.outcomes.size()));
  out.sample.observed.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    out.sample.observed[static_cast<std::size_t>(i)].assign(roles.outcomes.size(), 0);
  for (std::size_t j = 0; j < roles.outcomes.size(); ++j) {
    const auto cj = t.column(roles.outcomes[j]);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& cell = t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(cj)];
      if (cell) {
        out.sample.Y(i, static_cast<Eigen::Index>(j)) = *cell;
        out.sample.observed[static_cast<std::size_t>(i)][j] = 1;
      }
    }
  }
  out.sample.X = Matrix(n, static_cast<Eigen::Index>(cov.size()));
  for (std::size_t j = 0; j < cov.size(); ++j) {
    const auto cj = t.column(cov[j]);
    for (Eigen::Index i = 0; i < n; ++i)
      out.sample.X(i, static_cast<Eigen::Index>(j)) = detail::require_cell(t, i, cj);
  }
  return out;
}

}  // namespace pscal
