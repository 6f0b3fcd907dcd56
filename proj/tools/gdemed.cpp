// Command-line front end: simulation studies, single-dataset analysis, the
// true-value oracle, calibration and DAG adjustment sets.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gdemed/config.hpp"
#include "gdemed/csv.hpp"
#include "gdemed/dag.hpp"
#include "gdemed/dgm.hpp"
#include "gdemed/gest.hpp"
#include "gdemed/resample.hpp"
#include "gdemed/study.hpp"

namespace {

using namespace gdemed;

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

std::string fmt(double v, int prec = 4) {
  if (std::isnan(v)) return "NA";
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

void print_summary(std::ostream& out, const PerformanceSummary& summary) {
  out << std::left << std::setw(12) << "method" << std::right;
  for (const char* h : {"nsim", "fail", "bias", "mcse", "emp_sd", "se_mod", "se_boot", "se_jack", "rej_mod",
                        "rej_boot", "rej_jack", "cov_mod", "cov_boot", "cov_jack"})
    out << std::setw(9) << h;
  out << '\n';
  for (const auto& s : summary) {
    out << std::left << std::setw(12) << to_string(s.method) << std::right << std::setw(9) << s.nsim << std::setw(9)
        << s.failures;
    for (double v : {s.bias, s.mcse_bias, s.emp_sd, s.model.mean_se, s.bootstrap.mean_se, s.jackknife.mean_se,
                     s.model.rejection, s.bootstrap.rejection, s.jackknife.rejection, s.model.coverage,
                     s.bootstrap.coverage, s.jackknife.coverage})
      out << std::setw(9) << fmt(v);
    out << '\n';
  }
}

StudyConfig calibrated(StudyConfig c) {
  if (c.calibrate) {
    const auto cal = calibrate(c.calibrate->target_sd, c.calibrate->share, c.params);
    c.params = apply_calibration(c.params, cal);
    std::cerr << "calibrated: tau=" << cal.tau << " decline_var=" << cal.decline_var
              << " achieved_sd=" << cal.achieved_sd << '\n';
  }
  return c;
}

struct SimulateArgs {
  std::string config, out = "results";
  std::optional<std::uint64_t> seed;
  std::optional<int> nsim, threads;
  bool quiet = false;
};

int run_simulate(const SimulateArgs& a) {
  StudyConfig c = load_config(a.config);
  if (a.seed) c.study.master_seed = *a.seed;
  if (a.nsim) c.study.nsim = *a.nsim;
  if (a.threads) c.study.threads = *a.threads;
  if (!a.quiet)
    c.study.progress = [](int done, int total) {
      if (done % 50 == 0 || done == total) std::cerr << "\rtrials " << done << "/" << total << std::flush;
      if (done == total) std::cerr << '\n';
    };
  if (c.grid) {
    const auto cells = run_grid(*c.grid, c.params, c.study);
    emit_grid(a.out, *c.grid, cells);
    for (const auto& cell : cells) {
      std::cout << "sym_sd=" << cell.sym_sd << " axis=" << cell.axis_value;
      if (!cell.ok) {
        std::cout << "  " << cell.reason << '\n';
        continue;
      }
      std::cout << " theta_true=" << fmt(cell.theta_true) << '\n';
      print_summary(std::cout, cell.summary);
    }
    return 0;
  }
  c = calibrated(std::move(c));
  double theta = 0;
  if (c.theta_true) {
    theta = *c.theta_true;
  } else {
    const auto o = true_value_oracle(c.params, c.oracle_n, StreamKey(c.study.master_seed, {c.study.scenario_id, 0xFFFF}),
                                     c.study.threads > 0 ? c.study.threads : 0);
    theta = o.theta;
    std::cerr << "oracle theta=" << o.theta << " (se " << o.se << ", n " << o.n << ")\n";
  }
  const auto results = run_scenario(c.params, c.study);
  const auto summary = summarize(results, theta);
  emit_results(a.out, results, summary, theta);
  std::cout << "theta_true=" << fmt(theta) << '\n';
  print_summary(std::cout, summary);
  return 0;
}

struct AnalyzeArgs {
  std::string dataset;
  std::vector<std::string> methods{"mmrm", "established", "mod1", "mod2", "mod3"};
  int bootstrap = 1000;
  bool jackknife = false;
  std::uint64_t seed = 20240601;
  std::string format = "text";
  std::string mask = "after_initiation";
};

int run_analyze(const AnalyzeArgs& a) {
  std::ifstream in(a.dataset);
  if (!in) throw std::runtime_error("cannot open dataset " + a.dataset);
  const TrialData trial = read_dataset_csv(in);
  std::vector<Method> methods;
  for (const auto& m : a.methods) methods.push_back(parse_method(m));
  AnalysisOptions opts;
  opts.mask = a.mask == "at_initiation" ? MaskRule::at_initiation : MaskRule::after_initiation;
  const auto est = estimate_methods(trial, methods, opts);
  std::vector<double> se_boot(methods.size(), kNaN), se_jack(methods.size(), kNaN);
  if (a.bootstrap > 0) {
    std::vector<double> thetas;
    for (const auto& e : est) thetas.push_back(e.theta_hat);
    const auto boot = bootstrap_methods(trial, methods, thetas, a.bootstrap, StreamKey(a.seed, {0}), opts);
    for (std::size_t j = 0; j < methods.size(); ++j) se_boot[j] = boot[j].se;
  }
  if (a.jackknife) se_jack = jackknife_methods(trial, methods, opts);
  auto p = [](double theta, double se) { return se > 0 ? wald_p_value(theta, se) : kNaN; };
  if (a.format == "csv") {
    std::cout << "method,theta_hat,se_model,se_bootstrap,se_jackknife,p_model,p_bootstrap,p_jackknife\n";
    for (std::size_t j = 0; j < methods.size(); ++j) {
      const auto& e = est[j];
      std::cout << to_string(methods[j]);
      for (double v : {e.theta_hat, e.model_se, se_boot[j], se_jack[j], p(e.theta_hat, e.model_se),
                       p(e.theta_hat, se_boot[j]), p(e.theta_hat, se_jack[j])})
        std::cout << ',' << csv::format_number(v);
      std::cout << '\n';
    }
    return 0;
  }
  std::cout << "patients: " << trial.size() << '\n';
  std::cout << std::left << std::setw(12) << "method" << std::right;
  for (const char* h : {"theta_hat", "se_model", "se_boot", "se_jack", "p_model", "p_boot", "p_jack"})
    std::cout << std::setw(11) << h;
  std::cout << '\n';
  for (std::size_t j = 0; j < methods.size(); ++j) {
    const auto& e = est[j];
    std::cout << std::left << std::setw(12) << to_string(methods[j]) << std::right;
    for (double v : {e.theta_hat, e.model_se, se_boot[j], se_jack[j]}) std::cout << std::setw(11) << fmt(v);
    for (double v : {p(e.theta_hat, e.model_se), p(e.theta_hat, se_boot[j]), p(e.theta_hat, se_jack[j])})
      std::cout << std::setw(11) << fmt(v);
    std::cout << '\n';
  }
  return 0;
}

int run_oracle(const std::string& config, long long n, std::optional<std::uint64_t> seed, int threads) {
  StudyConfig c = calibrated(load_config(config));
  const auto o = true_value_oracle(c.params, n, StreamKey(seed.value_or(c.study.master_seed), {0xFFFF}),
                                   threads > 0 ? threads : 0);
  std::cout << "theta=" << std::setprecision(6) << o.theta << " se=" << o.se << " n=" << o.n << '\n';
  return 0;
}

int run_calibrate(const std::string& config, double target, std::optional<double> share) {
  const StudyConfig c = load_config(config);
  const auto cal = calibrate(target, share, c.params);
  std::cout << "tau=" << std::setprecision(8) << cal.tau << " decline_var=" << cal.decline_var
            << " achieved_sd=" << cal.achieved_sd << '\n';
  return 0;
}

int run_dag_adjust(const std::string& file, std::string exposure, std::string outcome) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file);
  std::stringstream text;
  text << in.rdbuf();
  const CausalDag g = parse_dag(text.str());
  if (exposure.empty()) exposure = g.exposure().value_or("");
  if (outcome.empty()) outcome = g.outcome().value_or("");
  if (exposure.empty() || outcome.empty()) throw std::runtime_error("exposure and outcome must be given or flagged in the file");
  const auto sets = minimal_adjustment_sets(g, exposure, outcome);
  if (sets.empty()) std::cerr << "no valid adjustment set of observed nodes\n";
  for (const auto& s : sets) {
    bool first = true;
    for (const auto& n : s) {
      std::cout << (first ? "" : ",") << n;
      first = false;
    }
    std::cout << '\n';
  }
  return 0;
}

int run_report(const std::string& input, std::optional<double> theta_true, const std::string& out) {
  std::filesystem::path path(input);
  if (std::filesystem::is_directory(path)) path /= "trials.csv";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  double theta = 0;
  if (theta_true) {
    theta = *theta_true;
  } else {
    const csv::Table t = csv::read(buf);
    std::size_t col = t.header.size();
    for (std::size_t i = 0; i < t.header.size(); ++i)
      if (t.header[i] == "theta_true") col = i;
    if (col == t.header.size() || t.rows.empty()) throw std::runtime_error("trials.csv: no theta_true; pass --theta-true");
    theta = csv::parse_number(t.rows.front()[col], "theta_true", 2);
    buf.clear();
    buf.seekg(0);
  }
  const auto results = read_trials_csv(buf);
  const auto summary = summarize(results, theta);
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    write_summary_csv(f, summary);
  }
  std::cout << "theta_true=" << fmt(theta) << '\n';
  print_summary(std::cout, summary);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulation and analysis tools for de-mediation of symptomatic medication effects"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run the simulation study described by a config file");
  simulate->add_option("config", sim.config, "Scenario config file")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sim.out, "Output directory")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Master seed (overrides the config)");
  simulate->add_option("--nsim", sim.nsim, "Number of trials (overrides the config)")->check(CLI::PositiveNumber);
  simulate->add_option("--threads", sim.threads, "Worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
  simulate->add_flag("--quiet", sim.quiet, "No progress output");

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Apply the estimators to one dataset CSV");
  analyze->add_option("dataset", an.dataset, "Dataset CSV")->required()->check(CLI::ExistingFile);
  analyze->add_option("--methods", an.methods, "Methods: mmrm, established, mod1, mod2, mod3, benchmark")
      ->delimiter(',')
      ->capture_default_str();
  analyze->add_option("--bootstrap", an.bootstrap, "Bootstrap replicates (0 = none)")->capture_default_str();
  analyze->add_flag("--jackknife", an.jackknife, "Also compute jackknife SEs");
  analyze->add_option("--seed", an.seed, "Bootstrap seed")->capture_default_str();
  analyze->add_option("--format", an.format, "Output format")->check(CLI::IsMember({"text", "csv"}))->capture_default_str();
  analyze->add_option("--mask", an.mask, "MMRM masking rule")
      ->check(CLI::IsMember({"at_initiation", "after_initiation"}))
      ->capture_default_str();

  std::string oracle_config;
  long long oracle_n = 10'000'000;
  std::optional<std::uint64_t> oracle_seed;
  int oracle_threads = 0;
  auto* oracle = app.add_subcommand("oracle", "True value of the estimand by large-sample simulation");
  oracle->add_option("config", oracle_config, "Scenario config file")->required()->check(CLI::ExistingFile);
  oracle->add_option("--n", oracle_n, "Simulated patients")->capture_default_str();
  oracle->add_option("--seed", oracle_seed, "Seed (default: the config seed)");
  oracle->add_option("--threads", oracle_threads, "Worker threads (default: all cores)");

  std::string cal_config;
  double cal_target = 14.0;
  std::optional<double> cal_share;
  auto* cal = app.add_subcommand("calibrate", "Calibrate tau (and the decline variance) to a target SD of Y2*");
  cal->add_option("config", cal_config, "Scenario config file")->required()->check(CLI::ExistingFile);
  cal->add_option("--target-sd", cal_target, "Target placebo SD of the unaffected two-year score")->required();
  cal->add_option("--share", cal_share, "Share of variability due to decline-rate heterogeneity");

  std::string dag_file, dag_exposure, dag_outcome;
  auto* dag = app.add_subcommand("dag-adjust", "Minimal sufficient adjustment sets");
  dag->add_option("file", dag_file, "DAG file in dagitty syntax")->required()->check(CLI::ExistingFile);
  dag->add_option("--exposure", dag_exposure, "Exposure node (default: flagged in the file)");
  dag->add_option("--outcome", dag_outcome, "Outcome node (default: flagged in the file)");

  std::string report_input, report_out;
  std::optional<double> report_theta;
  auto* report = app.add_subcommand("report", "Summarize a trials.csv written by simulate");
  report->add_option("input", report_input, "trials.csv or its directory")->required()->check(CLI::ExistingPath);
  report->add_option("--theta-true", report_theta, "True value (default: from the file)");
  report->add_option("--out", report_out, "Write summary.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*simulate) return run_simulate(sim);
    if (*analyze) return run_analyze(an);
    if (*oracle) return run_oracle(oracle_config, oracle_n, oracle_seed, oracle_threads);
    if (*cal) return run_calibrate(cal_config, cal_target, cal_share);
    if (*dag) return run_dag_adjust(dag_file, dag_exposure, dag_outcome);
    if (*report) return run_report(report_input, report_theta, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
