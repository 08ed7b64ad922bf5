// pscal: propensity-score estimation by exponential-tilting calibration.
// Subcommands: estimate, estimate-mv, simulate, varsel, sdr, eltest.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pscal/calibration.hpp"
#include "pscal/csv.hpp"
#include "pscal/data.hpp"
#include "pscal/errors.hpp"
#include "pscal/estimators.hpp"
#include "pscal/inference.hpp"
#include "pscal/multivariate.hpp"
#include "pscal/parallel.hpp"
#include "pscal/sdr.hpp"
#include "pscal/simulation.hpp"
#include "pscal/varsel.hpp"
#include "pscal/version.hpp"

using nlohmann::json;
using namespace pscal;

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (text.empty() || text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path + "' failed");
}

void write_report(const std::string& path, const json& report) {
  write_text(path, report.dump(2) + "\n");
}

json tool_stanza() {
  return json{{"name", "pscal"}, {"version", kVersion}};
}

std::vector<Eigen::Index> balance_indices(const std::vector<std::string>& names,
                                          const std::vector<std::string>& covariates) {
  std::vector<Eigen::Index> idx;
  for (const auto& b : names) {
    auto it = std::find(covariates.begin(), covariates.end(), b);
    if (it == covariates.end())
      throw BadColumn("balance column '" + b + "' is not among the covariates");
    idx.push_back(static_cast<Eigen::Index>(it - covariates.begin()));
  }
  return idx;
}

json data_stanza(const Sample& s) {
  return json{{"n", s.n()},
              {"covariates", s.d()},
              {"respondents", s.n_respondents()},
              {"missing_rate",
               static_cast<double>(s.n_nonrespondents()) / static_cast<double>(s.n())}};
}

json interval(double center, double se, double level) {
  const double z = normal_quantile(0.5 + level / 2.0);
  return json::array({center - z * se, center + z * se});
}

// ---------------------------------------------------------------------------
// estimate

struct EstimateArgs {
  std::string data, outcome, response_col, method = "ip", variance = "linearized";
  std::vector<std::string> covariates, balance;
  int bootstrap_reps = 500;
  std::uint64_t seed = 1;
  double ci_level = 0.95;
  std::optional<double> c_ratio;
  int threads = 0;
  std::string out;
};

json run_estimate(const EstimateArgs& a) {
  auto table = read_csv(a.data);
  ColumnRoles roles;
  roles.outcomes = {a.outcome};
  roles.covariates = a.covariates;
  roles.response_col = a.response_col;
  auto loaded = load_sample(table, roles);
  const auto& s = loaded.sample;

  std::vector<std::string> balance_names =
      a.balance.empty() ? loaded.covariate_names : a.balance;
  auto cols = balance_indices(balance_names, loaded.covariate_names);
  auto design = BalancingDesign::columns(cols);
  auto estfun = EstimatingFunction::mean();

  json config{{"subcommand", "estimate"},
              {"data", a.data},
              {"outcome", a.outcome},
              {"covariates", loaded.covariate_names},
              {"balance", balance_names},
              {"response_col", a.response_col},
              {"method", a.method},
              {"variance", a.variance},
              {"bootstrap_reps", a.bootstrap_reps},
              {"seed", a.seed},
              {"ci_level", a.ci_level},
              {"threads", a.threads}};
  if (a.c_ratio) config["c_ratio"] = *a.c_ratio;

  json report{{"tool", tool_stanza()}, {"config", config}, {"data", data_stanza(s)}};

  double theta = 0.0;
  if (a.method == "ip") {
    SolverOptions cal_opts;
    cal_opts.c_override = a.c_ratio;
    TiltingParams params = solve_tilting(s, design, cal_opts);
    SmoothedWeights w = smoothed_weights(s, design, params);
    auto sol = detail::solve_weighted_ee(s, w.omega, estfun);
    theta = sol.theta(0);
    report["calibration"] = json{{"lambda0", params.lambda0},
                                 {"lambda1", to_json(params.lambda1)},
                                 {"c", params.c},
                                 {"iterations", params.iterations},
                                 {"balancing_residual", w.residual}};
    json variance;
    double se = std::numeric_limits<double>::quiet_NaN();
    if (a.variance == "linearized" || a.variance == "both") {
      Matrix V = linearized_variance(s, design, params, sol.theta, estfun);
      variance["linearized"] = to_json(V);
      se = std::sqrt(V(0, 0));
    }
    if (a.variance == "bootstrap" || a.variance == "both") {
      auto bs = bootstrap_variance(s, design, estfun, a.bootstrap_reps, a.seed, a.threads);
      variance["bootstrap"] = to_json(bs.cov);
      variance["bootstrap_replicates"] = bs.replicates;
      variance["bootstrap_failures"] = bs.failures;
      if (a.variance == "bootstrap") se = std::sqrt(bs.cov(0, 0));
    }
    json est{{"method", a.method}, {"theta", json::array({theta})}};
    if (std::isfinite(se)) {
      est["se"] = json::array({se});
      est["ci"] = json::array({interval(theta, se, a.ci_level)});
      est["ci_level"] = a.ci_level;
    }
    report["estimate"] = est;
    if (!variance.is_null()) report["variance"] = variance;
  } else {
    EstimateResult est;
    if (a.method == "mle") {
      std::vector<Eigen::Index> all(static_cast<std::size_t>(s.d()));
      for (Eigen::Index j = 0; j < s.d(); ++j) all[static_cast<std::size_t>(j)] = j;
      est = mle_ipw_estimate(s, all, estfun);
    } else if (a.method == "cbps") {
      est = cbps_el_estimate(s, design, estfun);
    } else {
      est = ebps_estimate(s, design, estfun);
    }
    theta = est.theta(0);
    report["estimate"] = json{{"method", a.method}, {"theta", json::array({theta})}};
    if (a.method != "mle")
      report["calibration"] =
          json{{"balancing_residual", est.diagnostics.balancing_residual}};
  }
  return report;
}

// ---------------------------------------------------------------------------
// estimate-mv

struct EstimateMvArgs {
  std::string data, out;
  std::vector<std::string> outcomes, covariates;
  double ci_level = 0.95;
};

json run_estimate_mv(const EstimateMvArgs& a) {
  auto table = read_csv(a.data);
  ColumnRoles roles;
  roles.outcomes = a.outcomes;
  roles.covariates = a.covariates;
  auto loaded = load_multisample(table, roles);
  const auto& ms = loaded.sample;

  auto part = partition_patterns(ms);
  auto tilt = solve_pattern_tilting(part, ms, default_pattern_designs(ms, part));
  Vector omega = mv_weights(part, tilt, ms);

  json patterns = json::object();
  for (Eigen::Index t = 0; t < part.T(); ++t) {
    std::string mask(static_cast<std::size_t>(ms.p()), '0');
    for (auto c : part.observed_cols[static_cast<std::size_t>(t)])
      mask[static_cast<std::size_t>(c)] = '1';
    patterns[mask] = part.members[static_cast<std::size_t>(t)].size();
  }

  json estimates = json::array();
  for (std::size_t j = 0; j < a.outcomes.size(); ++j) {
    auto estfun = OutcomeEstimatingFunction::mean_of(static_cast<Eigen::Index>(j));
    auto sol = detail::solve_mv_weighted_ee(ms, part.members[0], omega, estfun);
    Matrix V = mv_linearized_variance(ms, part, tilt, sol.theta, estfun);
    const double se = std::sqrt(V(0, 0));
    estimates.push_back(json{{"outcome", a.outcomes[j]},
                             {"theta", sol.theta(0)},
                             {"se", se},
                             {"ci", interval(sol.theta(0), se, a.ci_level)}});
  }

  json config{{"subcommand", "estimate-mv"},
              {"data", a.data},
              {"outcomes", a.outcomes},
              {"covariates", loaded.covariate_names},
              {"ci_level", a.ci_level}};
  return json{{"tool", tool_stanza()},
              {"config", config},
              {"data", json{{"n", ms.n()}, {"outcomes", ms.p()}, {"covariates", ms.d()}}},
              {"patterns", patterns},
              {"balancing_residual", mv_balancing_residual(part, tilt, ms)},
              {"estimates", estimates}};
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string study = "two";
  int or_model = 1, rm_model = 1, scenario = 1;
  long long n = 0;  // 0 = study default
  int reps = 1000;
  std::uint64_t seed = 1;
  std::vector<std::string> methods;
  std::vector<std::string> design;
  bool with_variance = false;
  int threads = 0;
  std::string out, manifest, dump;
};

SimConfig build_sim_config(const SimulateArgs& a) {
  SimConfig cfg;
  cfg.study = a.study;
  cfg.rm = a.rm_model == 2 ? RmKind::rm2 : RmKind::rm1;
  cfg.orm = a.or_model == 2 ? OrKind::or2 : OrKind::or1;
  cfg.scenario = a.scenario;
  cfg.n = a.n > 0 ? static_cast<Eigen::Index>(a.n) : (a.study == "one" ? 5000 : 1000);
  cfg.replications = a.reps;
  cfg.seed = a.seed;
  cfg.with_variance = a.with_variance;
  cfg.threads = a.threads;

  const Eigen::Index d = a.study == "one" ? 4 : 3;
  std::vector<Eigen::Index> cols;
  if (a.design.empty()) {
    for (Eigen::Index j = 0; j < d; ++j) cols.push_back(j);
  } else {
    for (const auto& name : a.design) {
      if (name.size() < 2 || name[0] != 'x')
        throw BadColumn("design entries are x1..x" + std::to_string(d));
      const int j = std::atoi(name.c_str() + 1);
      if (j < 1 || j > d) throw BadColumn("no simulated covariate '" + name + "'");
      cols.push_back(j - 1);
    }
  }

  if (a.methods.empty()) {
    cfg.methods =
        a.study == "one" ? default_methods_study_one() : default_methods_study_two();
    if (!a.design.empty())
      for (auto& m : cfg.methods) m.design_cols = cols;
  } else {
    for (const auto& name : a.methods) {
      MethodSpec spec;
      if (name == "ip")
        spec.kind = MethodKind::ip;
      else if (name == "mle")
        spec.kind = MethodKind::mle;
      else if (name == "cbps")
        spec.kind = MethodKind::cbps;
      else if (name == "ebps")
        spec.kind = MethodKind::ebps;
      else if (name == "dr")
        spec.kind = MethodKind::dr_true_pi;
      else if (name == "raw")
        spec.kind = MethodKind::raw_ps;
      else
        throw UnknownFlag("unknown method '" + name + "'");
      spec.design_cols = cols;
      spec.label = name;
      cfg.methods.push_back(std::move(spec));
    }
  }
  return cfg;
}

std::string metrics_csv(const SimulateArgs& a, const MetricsTable& table) {
  std::string out =
      "study,or,rm,scenario,method,design,theta0,replications,failures,bias,se,rmse,"
      "mean_var,coverage,max_residual\n";
  for (const auto& r : table.rows) {
    out += a.study + ",";
    out += (a.study == "one" ? std::to_string(a.or_model) : "") + ",";
    out += (a.study == "one" ? std::to_string(a.rm_model) : "") + ",";
    out += (a.study == "two" ? std::to_string(a.scenario) : "") + ",";
    out += r.method + ",\"" + r.design + "\",";
    out += fmt17(r.theta0) + ",";
    out += std::to_string(r.replications) + "," + std::to_string(r.failures) + ",";
    out += fmt17(r.bias) + "," + fmt17(r.se) + "," + fmt17(r.rmse) + ",";
    out += (std::isfinite(r.mean_var) ? fmt17(r.mean_var) : "") + std::string(",");
    out += (std::isfinite(r.coverage) ? fmt17(r.coverage) : "") + std::string(",");
    out += fmt17(r.max_residual) + "\n";
  }
  return out;
}

void run_simulate(const SimulateArgs& a) {
  SimConfig cfg = build_sim_config(a);
  MetricsTable table = run_monte_carlo(cfg);

  write_text(a.out, metrics_csv(a, table));

  json methods = json::array();
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    methods.push_back(json{{"label", table.rows[m].method},
                           {"kind", method_name(cfg.methods[m].kind)},
                           {"design", table.rows[m].design},
                           {"failures", table.rows[m].failures}});
  }
  json manifest{{"tool", tool_stanza()},
                {"config", json{{"subcommand", "simulate"},
                                {"study", a.study},
                                {"or", a.or_model},
                                {"rm", a.rm_model},
                                {"scenario", a.scenario},
                                {"n", cfg.n},
                                {"reps", cfg.replications},
                                {"seed", cfg.seed},
                                {"with_variance", cfg.with_variance},
                                {"out", a.out},
                                {"threads", a.threads}}},
                {"theta0", table.theta0},
                {"methods", methods}};
  if (!a.manifest.empty()) write_report(a.manifest, manifest);

  if (!a.dump.empty()) {
    std::string dump = "replicate,method,estimate\n";
    for (const auto& r : table.rows) {
      for (std::size_t k = 0; k < r.draws.size(); ++k)
        dump += std::to_string(k) + "," + r.method + "," + fmt17(r.draws[k]) + "\n";
    }
    write_text(a.dump, dump);
  }
}

// ---------------------------------------------------------------------------
// varsel / sdr / eltest

struct VarselArgs {
  std::string data, outcome, response_col, out;
  std::vector<std::string> covariates;
  double ci_level = 0.95;
};

json run_varsel(const VarselArgs& a) {
  auto table = read_csv(a.data);
  ColumnRoles roles;
  roles.outcomes = {a.outcome};
  roles.covariates = a.covariates;
  roles.response_col = a.response_col;
  auto loaded = load_sample(table, roles);

  auto ts = two_stage_sps(loaded.sample);
  json support = json::array();
  for (auto j : ts.selection.support)
    support.push_back(loaded.covariate_names[static_cast<std::size_t>(j)]);
  json path = json::array();
  for (const auto& [lambda, bic] : ts.selection.criterion_path)
    path.push_back(json{{"lambda", lambda}, {"bic", bic}});

  const double theta = ts.estimate.theta(0);
  const double se = ts.estimate.se(0);
  return json{{"tool", tool_stanza()},
              {"config", json{{"subcommand", "varsel"},
                              {"data", a.data},
                              {"outcome", a.outcome},
                              {"covariates", loaded.covariate_names},
                              {"ci_level", a.ci_level}}},
              {"data", data_stanza(loaded.sample)},
              {"selection", json{{"support", support},
                                 {"alpha", to_json(ts.selection.alpha)},
                                 {"lambda", ts.selection.lambda},
                                 {"criterion_path", path}}},
              {"estimate", json{{"method", "ip_two_stage"},
                                {"theta", json::array({theta})},
                                {"se", json::array({se})},
                                {"ci", json::array({interval(theta, se, a.ci_level)})},
                                {"ci_level", a.ci_level}}}};
}

struct SdrArgs {
  std::string data, outcome, response_col, out;
  std::vector<std::string> covariates;
  long long dim = 1;
  int restarts = 5, max_iter = 150;
  double ridge = 1e-3;
  std::uint64_t seed = 1;
};

json run_sdr(const SdrArgs& a) {
  auto table = read_csv(a.data);
  ColumnRoles roles;
  roles.outcomes = {a.outcome};
  roles.covariates = a.covariates;
  roles.response_col = a.response_col;
  auto loaded = load_sample(table, roles);

  SdrOptions opts;
  opts.restarts = a.restarts;
  opts.max_iter = a.max_iter;
  opts.ridge = a.ridge;
  opts.seed = a.seed;
  auto fit = kernel_sdr(loaded.sample, static_cast<Eigen::Index>(a.dim), opts);

  return json{{"tool", tool_stanza()},
              {"config", json{{"subcommand", "sdr"},
                              {"data", a.data},
                              {"outcome", a.outcome},
                              {"covariates", loaded.covariate_names},
                              {"dim", a.dim},
                              {"restarts", a.restarts},
                              {"max_iter", a.max_iter},
                              {"ridge", a.ridge},
                              {"seed", a.seed}}},
              {"data", data_stanza(loaded.sample)},
              {"projection", json{{"W", to_json(fit.W)},
                                  {"objective", fit.objective},
                                  {"bandwidth_y", fit.bandwidth_y},
                                  {"bandwidth_wx", fit.bandwidth_wx},
                                  {"ridge", fit.ridge},
                                  {"converged", fit.converged},
                                  {"iterations", fit.iterations}}}};
}

struct ElTestArgs {
  std::string data, outcome, response_col, out;
  std::vector<std::string> covariates, balance;
  double theta0 = 0.0;
};

json run_eltest(const ElTestArgs& a) {
  auto table = read_csv(a.data);
  ColumnRoles roles;
  roles.outcomes = {a.outcome};
  roles.covariates = a.covariates;
  roles.response_col = a.response_col;
  auto loaded = load_sample(table, roles);

  std::vector<std::string> balance_names =
      a.balance.empty() ? loaded.covariate_names : a.balance;
  auto cols = balance_indices(balance_names, loaded.covariate_names);
  auto design = BalancingDesign::columns(cols);

  Vector theta0(1);
  theta0(0) = a.theta0;
  auto t = el_ratio_test(loaded.sample, design, EstimatingFunction::mean(), theta0);

  return json{{"tool", tool_stanza()},
              {"config", json{{"subcommand", "eltest"},
                              {"data", a.data},
                              {"outcome", a.outcome},
                              {"balance", balance_names},
                              {"theta0", a.theta0}}},
              {"data", data_stanza(loaded.sample)},
              {"test", json{{"statistic", t.statistic},
                            {"p_value", t.p_value},
                            {"df", 1},
                            {"theta_hat", to_json(t.theta_hat)},
                            {"theta0_infeasible", t.theta0_infeasible}}}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"propensity-score weighting via density-ratio calibration"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "read defaults from a config file; flags override");
  app.require_subcommand(1);

  EstimateArgs ea;
  auto* est = app.add_subcommand("estimate", "fit one outcome on a CSV dataset");
  est->add_option("--data", ea.data, "input CSV path")->required();
  est->add_option("--outcome", ea.outcome, "outcome column")->required();
  est->add_option("--covariates", ea.covariates, "covariate columns (default: all others)")
      ->delimiter(',');
  est->add_option("--balance", ea.balance, "balancing columns (default: covariates)")
      ->delimiter(',');
  est->add_option("--response-col", ea.response_col, "explicit 0/1 response column");
  est->add_option("--method", ea.method, "ip|mle|cbps|ebps")
      ->check(CLI::IsMember({"ip", "mle", "cbps", "ebps"}));
  est->add_option("--variance", ea.variance, "none|linearized|bootstrap|both")
      ->check(CLI::IsMember({"none", "linearized", "bootstrap", "both"}));
  est->add_option("--bootstrap-reps", ea.bootstrap_reps, "bootstrap replicates");
  est->add_option("--seed", ea.seed, "rng seed");
  est->add_option("--ci-level", ea.ci_level, "confidence level");
  double c_ratio_flag = -1.0;
  auto* c_opt = est->add_option("--c-ratio", c_ratio_flag,
                                "externally known N0/N1 population ratio");
  est->add_option("--threads", ea.threads, "worker threads (0 = auto)");
  est->add_option("--out", ea.out, "report path (default stdout)");

  EstimateMvArgs ma;
  auto* emv = app.add_subcommand("estimate-mv", "multivariate missingness patterns");
  emv->add_option("--data", ma.data, "input CSV path")->required();
  emv->add_option("--outcomes", ma.outcomes, "outcome columns")->required()->delimiter(',');
  emv->add_option("--covariates", ma.covariates, "fully observed covariate columns")
      ->delimiter(',');
  emv->add_option("--ci-level", ma.ci_level, "confidence level");
  emv->add_option("--out", ma.out, "report path (default stdout)");

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Monte Carlo studies");
  sim->add_option("--study", sa.study, "one|two")->check(CLI::IsMember({"one", "two"}));
  sim->add_option("--or", sa.or_model, "outcome model for study one (1|2)")
      ->check(CLI::Range(1, 2));
  sim->add_option("--rm", sa.rm_model, "response mechanism for study one (1|2)")
      ->check(CLI::Range(1, 2));
  sim->add_option("--scenario", sa.scenario, "study-two scenario (1|2)")
      ->check(CLI::Range(1, 2));
  sim->add_option("--n", sa.n, "sample size (default 5000/1000)");
  sim->add_option("--reps", sa.reps, "Monte Carlo replications");
  sim->add_option("--seed", sa.seed, "rng seed");
  sim->add_option("--methods", sa.methods, "ip,mle,cbps,ebps,dr,raw")->delimiter(',');
  sim->add_option("--design", sa.design, "balancing columns, e.g. x1,x2")->delimiter(',');
  sim->add_flag("--with-variance", sa.with_variance, "linearized variance + coverage");
  sim->add_option("--threads", sa.threads, "worker threads (0 = auto)");
  sim->add_option("--out", sa.out, "metrics CSV path (default stdout)");
  sim->add_option("--manifest", sa.manifest, "run manifest JSON path");
  sim->add_option("--dump", sa.dump, "per-replicate estimates CSV path");

  VarselArgs va;
  auto* var = app.add_subcommand("varsel", "SCAD selection + two-stage fit");
  var->add_option("--data", va.data, "input CSV path")->required();
  var->add_option("--outcome", va.outcome, "outcome column")->required();
  var->add_option("--covariates", va.covariates, "candidate covariate columns")
      ->delimiter(',');
  var->add_option("--response-col", va.response_col, "explicit 0/1 response column");
  var->add_option("--ci-level", va.ci_level, "confidence level");
  var->add_option("--out", va.out, "report path (default stdout)");

  SdrArgs da;
  auto* sdr = app.add_subcommand("sdr", "kernel sufficient dimension reduction");
  sdr->add_option("--data", da.data, "input CSV path")->required();
  sdr->add_option("--outcome", da.outcome, "outcome column")->required();
  sdr->add_option("--covariates", da.covariates, "covariate columns")->delimiter(',');
  sdr->add_option("--response-col", da.response_col, "explicit 0/1 response column");
  sdr->add_option("--dim", da.dim, "target dimension l")->required();
  sdr->add_option("--restarts", da.restarts, "random restarts");
  sdr->add_option("--max-iter", da.max_iter, "iteration cap per restart");
  sdr->add_option("--ridge", da.ridge, "gram ridge epsilon");
  sdr->add_option("--seed", da.seed, "rng seed");
  sdr->add_option("--out", da.out, "report path (default stdout)");

  ElTestArgs ta;
  auto* elt = app.add_subcommand("eltest", "empirical likelihood ratio test");
  elt->add_option("--data", ta.data, "input CSV path")->required();
  elt->add_option("--outcome", ta.outcome, "outcome column")->required();
  elt->add_option("--covariates", ta.covariates, "covariate columns")->delimiter(',');
  elt->add_option("--balance", ta.balance, "balancing columns (default: covariates)")
      ->delimiter(',');
  elt->add_option("--response-col", ta.response_col, "explicit 0/1 response column");
  elt->add_option("--theta0", ta.theta0, "null value of the mean")->required();
  elt->add_option("--out", ta.out, "report path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*est) {
      if (c_opt->count() > 0) ea.c_ratio = c_ratio_flag;
      write_report(ea.out, run_estimate(ea));
    } else if (*emv) {
      write_report(ma.out, run_estimate_mv(ma));
    } else if (*sim) {
      run_simulate(sa);
    } else if (*var) {
      write_report(va.out, run_varsel(va));
    } else if (*sdr) {
      write_report(da.out, run_sdr(da));
    } else if (*elt) {
      write_report(ta.out, run_eltest(ta));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::numerical: return 1;
      case ErrorKind::usage: return 2;
      case ErrorKind::io: return 3;
    }
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
