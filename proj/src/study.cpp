#include "gdemed/study.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "gdemed/csv.hpp"

namespace gdemed {

namespace {

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  return s;
}

void fail(MethodOutcome& o, const std::string& what) {
  o.failed = true;
  o.error = one_line(what);
}

std::string describe(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& ex) {
    return ex.what();
  } catch (...) {
    return "unknown error";
  }
}

bool is_resample_failure(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const ResampleError&) {
    return true;
  } catch (...) {
    return is_fit_failure(e);
  }
}

int worker_count(int requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace

TrialResult run_trial(const ScenarioParams& params, const StudyOptions& options, long k) {
  const StreamKey key(options.master_seed, {options.scenario_id, static_cast<std::uint64_t>(k)});
  const TrialData trial = simulate_trial(params, key.child(0));
  const auto& methods = options.methods;
  const auto& aopts = options.analysis;

  TrialResult result;
  result.trial_index = k;
  result.outcomes.resize(methods.size());
  for (std::size_t j = 0; j < methods.size(); ++j) result.outcomes[j].method = methods[j];

  auto store = [&](MethodOutcome& o, const EstimateResult& r) {
    o.theta_hat = r.theta_hat;
    o.se_model = r.model_se;
    o.iterations = r.trace.iterations;
    o.converged = r.trace.converged;
  };
  try {
    const auto res = estimate_methods(trial, methods, aopts);
    for (std::size_t j = 0; j < methods.size(); ++j) store(result.outcomes[j], res[j]);
  } catch (...) {
    if (!is_fit_failure(std::current_exception())) throw;
    for (std::size_t j = 0; j < methods.size(); ++j) {
      const Method one[] = {methods[j]};
      try {
        store(result.outcomes[j], estimate_methods(trial, one, aopts)[0]);
      } catch (...) {
        if (!is_fit_failure(std::current_exception())) throw;
        fail(result.outcomes[j], describe(std::current_exception()));
      }
    }
  }

  auto live = [&] {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < methods.size(); ++j)
      if (!result.outcomes[j].failed) idx.push_back(j);
    return idx;
  };

  // Joint evaluation, falling back to one method at a time to isolate failures.
  auto with_fallback = [&](auto&& joint, auto&& single) {
    const auto idx = live();
    if (idx.empty()) return;
    std::vector<Method> ms;
    for (auto j : idx) ms.push_back(methods[j]);
    try {
      joint(idx, ms);
    } catch (...) {
      if (!is_resample_failure(std::current_exception())) throw;
      for (auto j : idx) {
        try {
          single(j);
        } catch (...) {
          if (!is_resample_failure(std::current_exception())) throw;
          fail(result.outcomes[j], describe(std::current_exception()));
        }
      }
    }
  };

  if (options.bootstrap) {
    const StreamKey boot_key = key.child(1);
    auto put = [&](std::size_t j, BootstrapResult&& b) {
      auto& o = result.outcomes[j];
      o.se_bootstrap = b.se;
      o.ci_basic = b.ci_basic;
      o.bootstrap_failures = b.failures;
    };
    with_fallback(
        [&](const std::vector<std::size_t>& idx, const std::vector<Method>& ms) {
          std::vector<double> thetas;
          for (auto j : idx) thetas.push_back(result.outcomes[j].theta_hat);
          auto res = bootstrap_methods(trial, ms, thetas, options.B, boot_key, aopts);
          for (std::size_t i = 0; i < idx.size(); ++i) put(idx[i], std::move(res[i]));
        },
        [&](std::size_t j) {
          const Method one[] = {methods[j]};
          const double theta[] = {result.outcomes[j].theta_hat};
          put(j, std::move(bootstrap_methods(trial, one, theta, options.B, boot_key, aopts)[0]));
        });
  }
  if (options.jackknife) {
    with_fallback(
        [&](const std::vector<std::size_t>& idx, const std::vector<Method>& ms) {
          const auto res = jackknife_methods(trial, ms, aopts);
          for (std::size_t i = 0; i < idx.size(); ++i) result.outcomes[idx[i]].se_jackknife = res[i];
        },
        [&](std::size_t j) { result.outcomes[j].se_jackknife = jackknife(trial, methods[j], aopts); });
  }

  for (auto& o : result.outcomes) {
    if (o.failed) continue;
    o.reject_model = o.se_model > 0 && wald_test(o.theta_hat, o.se_model);
    if (options.bootstrap)
      o.reject_bootstrap = options.bootstrap_test == BootstrapTest::basic_ci
                               ? basic_ci_test(o.ci_basic)
                               : o.se_bootstrap > 0 && wald_test(o.theta_hat, o.se_bootstrap);
    if (options.jackknife) o.reject_jackknife = o.se_jackknife > 0 && wald_test(o.theta_hat, o.se_jackknife);
  }
  return result;
}

std::vector<TrialResult> run_scenario(const ScenarioParams& params, const StudyOptions& options) {
  if (options.nsim < 1) throw std::invalid_argument("run_scenario: nsim must be at least 1");
  if (options.methods.empty()) throw std::invalid_argument("run_scenario: no methods requested");
  params.validate();
  std::vector<TrialResult> results(static_cast<std::size_t>(options.nsim));
  std::atomic<long> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;
  std::mutex mu;
  int done = 0;

  auto work = [&] {
    for (;;) {
      const long k = next++;
      if (k >= options.nsim || stop) return;
      try {
        results[static_cast<std::size_t>(k)] = run_trial(params, options, k);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        stop = true;
        return;
      }
      if (options.progress) {
        std::lock_guard lock(mu);
        options.progress(++done, options.nsim);
      }
    }
  };
  const int n_workers = std::min(worker_count(options.threads), options.nsim);
  if (n_workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  check_failures(results, options.max_failure_share);
  return results;
}

void check_failures(const std::vector<TrialResult>& results, double max_share) {
  if (results.empty()) return;
  std::map<Method, int> failures;
  for (const auto& r : results)
    for (const auto& o : r.outcomes)
      if (o.failed) ++failures[o.method];
  std::string msg;
  for (const auto& [m, count] : failures)
    if (static_cast<double>(count) > max_share * static_cast<double>(results.size()))
      msg += (msg.empty() ? "" : "; ") + std::string(to_string(m)) + " failed on " + std::to_string(count) + " of " +
             std::to_string(results.size()) + " trials";
  if (!msg.empty()) throw StudyError("scenario failure rate too high: " + msg);
}

namespace {

FlavorSummary flavor(const std::vector<const MethodOutcome*>& ok, double theta_true, double MethodOutcome::*se,
                     bool MethodOutcome::*reject) {
  FlavorSummary f;
  std::vector<const MethodOutcome*> have;
  for (const auto* o : ok)
    if (!std::isnan(o->*se)) have.push_back(o);
  if (have.empty()) return f;
  const auto n = static_cast<double>(have.size());
  double se_sum = 0, rej = 0, cov = 0;
  for (const auto* o : have) {
    se_sum += o->*se;
    rej += (o->*reject) ? 1 : 0;
    cov += std::abs(o->theta_hat - theta_true) <= kZ975 * (o->*se) ? 1 : 0;
  }
  f.mean_se = se_sum / n;
  f.rejection = rej / n;
  f.mcse_rejection = std::sqrt(f.rejection * (1 - f.rejection) / n);
  f.coverage = cov / n;
  f.mcse_coverage = std::sqrt(f.coverage * (1 - f.coverage) / n);
  return f;
}

}  // namespace

PerformanceSummary summarize(const std::vector<TrialResult>& results, double theta_true) {
  PerformanceSummary out;
  if (results.empty()) return out;
  const std::size_t k = results.front().outcomes.size();
  for (std::size_t j = 0; j < k; ++j) {
    MethodSummary s;
    s.method = results.front().outcomes[j].method;
    s.theta_true = theta_true;
    std::vector<const MethodOutcome*> ok;
    for (const auto& r : results) {
      if (r.outcomes.size() != k || r.outcomes[j].method != s.method)
        throw std::invalid_argument("summarize: trials disagree on the method list");
      if (r.outcomes[j].failed) ++s.failures;
      else ok.push_back(&r.outcomes[j]);
    }
    s.nsim = static_cast<int>(ok.size());
    if (!ok.empty()) {
      std::vector<double> est;
      double iters = 0;
      for (const auto* o : ok) {
        est.push_back(o->theta_hat);
        iters += o->iterations;
        if (!o->converged) ++s.nonconverged;
      }
      const auto n = static_cast<double>(ok.size());
      s.mean_estimate = std::accumulate(est.begin(), est.end(), 0.0) / n;
      s.bias = s.mean_estimate - theta_true;
      s.emp_sd = sample_sd(est);
      s.mcse_bias = s.emp_sd / std::sqrt(n);
      s.mean_iterations = iters / n;
      s.model = flavor(ok, theta_true, &MethodOutcome::se_model, &MethodOutcome::reject_model);
      s.bootstrap = flavor(ok, theta_true, &MethodOutcome::se_bootstrap, &MethodOutcome::reject_bootstrap);
      s.jackknife = flavor(ok, theta_true, &MethodOutcome::se_jackknife, &MethodOutcome::reject_jackknife);
    }
    out.push_back(s);
  }
  return out;
}

double relative_sd_difference(const PerformanceSummary& s, Method method, Method comparator) {
  const MethodSummary* a = nullptr;
  const MethodSummary* b = nullptr;
  for (const auto& m : s) {
    if (m.method == method) a = &m;
    if (m.method == comparator) b = &m;
  }
  if (!a || !b) return kNaN;
  return 100.0 * (a->emp_sd - b->emp_sd) / b->emp_sd;
}

std::vector<GridCell> run_grid(const GridSpec& spec, const ScenarioParams& base, const StudyOptions& options) {
  const double share = spec.axis == GridSpec::Axis::target_sd
                           ? spec.fixed_share.value_or(implied_decline_share(base, spec.fixed_target_sd, spec.calibration))
                           : 0.0;
  std::vector<GridCell> cells;
  std::uint64_t cell_id = 0;
  for (double value : spec.axis_values) {
    for (double sym_sd : spec.sym_sd) {
      GridCell cell;
      cell.sym_sd = sym_sd;
      cell.axis_value = value;
      cell.params = base;
      cell.params.sym_effect.sd = sym_sd;
      if (sym_sd > 0) {
        cell.params.sym_effect.lo = base.sym_effect.mean - 2.0 * sym_sd;
        cell.params.sym_effect.hi = base.sym_effect.mean + 2.0 * sym_sd;
      }
      ++cell_id;
      try {
        const bool sd_axis = spec.axis == GridSpec::Axis::target_sd;
        const auto cal = calibrate(sd_axis ? value : spec.fixed_target_sd, sd_axis ? share : value, base,
                                   spec.calibration);
        cell.params = apply_calibration(cell.params, cal);
      } catch (const std::exception& e) {
        cell.reason = one_line(std::string("calibration failed: ") + e.what());
        cells.push_back(std::move(cell));
        continue;
      }
      cell.theta_true =
          true_value_oracle(cell.params, spec.oracle_n, StreamKey(options.master_seed, {options.scenario_id, cell_id, 0}),
                            worker_count(options.threads))
              .theta;
      StudyOptions o = options;
      o.scenario_id = options.scenario_id * 1000 + cell_id;
      const auto results = run_scenario(cell.params, o);
      cell.summary = summarize(results, cell.theta_true);
      cell.ok = true;
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

// ---- CSV -------------------------------------------------------------------

namespace {

const char* const kTrialHeader[] = {
    "trial",           "method",           "failed",           "theta_hat",          "se_model",
    "se_bootstrap",    "se_jackknife",     "ci_basic_lo",      "ci_basic_hi",        "reject_model",
    "reject_bootstrap", "reject_jackknife", "iterations",       "converged",          "bootstrap_failures",
    "theta_true",      "ci_model_lo",      "ci_model_hi",      "ci_bootstrap_lo",    "ci_bootstrap_hi",
    "ci_jackknife_lo", "ci_jackknife_hi",  "abs_z_model",      "abs_z_bootstrap",    "abs_z_jackknife",
    "error"};

std::string num(double v) { return csv::format_number(v); }

template <class It>
void write_row(std::ostream& out, It first, It last) {
  for (It it = first; it != last; ++it) out << (it == first ? "" : ",") << *it;
  out << '\n';
}

}  // namespace

void write_trials_csv(std::ostream& out, const std::vector<TrialResult>& results, double theta_true) {
  write_row(out, std::begin(kTrialHeader), std::end(kTrialHeader));
  for (const auto& r : results)
    for (const auto& o : r.outcomes) {
      auto lo = [&](double se) { return num(o.theta_hat - kZ975 * se); };
      auto hi = [&](double se) { return num(o.theta_hat + kZ975 * se); };
      auto z = [&](double se) { return num(std::abs(o.theta_hat - theta_true) / se); };
      const std::vector<std::string> row{std::to_string(r.trial_index),
                                         std::string(to_string(o.method)),
                                         o.failed ? "1" : "0",
                                         num(o.theta_hat),
                                         num(o.se_model),
                                         num(o.se_bootstrap),
                                         num(o.se_jackknife),
                                         num(o.ci_basic.lo),
                                         num(o.ci_basic.hi),
                                         o.reject_model ? "1" : "0",
                                         o.reject_bootstrap ? "1" : "0",
                                         o.reject_jackknife ? "1" : "0",
                                         std::to_string(o.iterations),
                                         o.converged ? "1" : "0",
                                         std::to_string(o.bootstrap_failures),
                                         num(theta_true),
                                         lo(o.se_model),
                                         hi(o.se_model),
                                         lo(o.se_bootstrap),
                                         hi(o.se_bootstrap),
                                         lo(o.se_jackknife),
                                         hi(o.se_jackknife),
                                         z(o.se_model),
                                         z(o.se_bootstrap),
                                         z(o.se_jackknife),
                                         one_line(o.error)};
      write_row(out, row.begin(), row.end());
    }
}

std::vector<TrialResult> read_trials_csv(std::istream& in) {
  const csv::Table t = csv::read(in);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < t.header.size(); ++i) col[t.header[i]] = i;
  for (const char* name : kTrialHeader)
    if (!col.count(name)) throw std::invalid_argument(std::string("trials.csv: missing column ") + name);
  std::vector<TrialResult> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::size_t line = r + 2;
    auto field = [&](const char* name) -> const std::string& { return row[col.at(name)]; };
    auto number = [&](const char* name) { return csv::parse_number(field(name), name, line); };
    auto flag = [&](const char* name) {
      const auto& f = field(name);
      if (f != "0" && f != "1") throw std::invalid_argument(std::string("trials.csv: column ") + name + " line " +
                                                            std::to_string(line) + ": expected 0 or 1");
      return f == "1";
    };
    const long k = std::stol(field("trial"));
    if (out.empty() || out.back().trial_index != k) {
      out.emplace_back();
      out.back().trial_index = k;
    }
    MethodOutcome o;
    o.method = parse_method(field("method"));
    o.failed = flag("failed");
    o.theta_hat = number("theta_hat");
    o.se_model = number("se_model");
    o.se_bootstrap = number("se_bootstrap");
    o.se_jackknife = number("se_jackknife");
    o.ci_basic = {number("ci_basic_lo"), number("ci_basic_hi")};
    o.reject_model = flag("reject_model");
    o.reject_bootstrap = flag("reject_bootstrap");
    o.reject_jackknife = flag("reject_jackknife");
    o.iterations = static_cast<int>(number("iterations"));
    o.converged = flag("converged");
    o.bootstrap_failures = static_cast<int>(number("bootstrap_failures"));
    o.error = field("error");
    out.back().outcomes.push_back(std::move(o));
  }
  return out;
}

void write_summary_csv(std::ostream& out, const PerformanceSummary& summary) {
  out << "method,estimable,nsim,failures,theta_true,mean_estimate,bias,mcse_bias,emp_sd,"
         "mean_se_model,mean_se_bootstrap,mean_se_jackknife,"
         "rejection_model,rejection_bootstrap,rejection_jackknife,"
         "mcse_rejection_model,mcse_rejection_bootstrap,mcse_rejection_jackknife,"
         "coverage_model,coverage_bootstrap,coverage_jackknife,"
         "mcse_coverage_model,mcse_coverage_bootstrap,mcse_coverage_jackknife,"
         "mean_iterations,nonconverged\n";
  for (const auto& s : summary) {
    out << to_string(s.method) << ',' << (s.method == Method::benchmark ? 0 : 1) << ',' << s.nsim << ','
        << s.failures << ',' << num(s.theta_true) << ',' << num(s.mean_estimate) << ',' << num(s.bias) << ','
        << num(s.mcse_bias) << ',' << num(s.emp_sd);
    for (const auto* f : {&s.model, &s.bootstrap, &s.jackknife}) out << ',' << num(f->mean_se);
    for (const auto* f : {&s.model, &s.bootstrap, &s.jackknife}) out << ',' << num(f->rejection);
    for (const auto* f : {&s.model, &s.bootstrap, &s.jackknife}) out << ',' << num(f->mcse_rejection);
    for (const auto* f : {&s.model, &s.bootstrap, &s.jackknife}) out << ',' << num(f->coverage);
    for (const auto* f : {&s.model, &s.bootstrap, &s.jackknife}) out << ',' << num(f->mcse_coverage);
    out << ',' << num(s.mean_iterations) << ',' << s.nonconverged << '\n';
  }
}

void write_heatmap_csv(std::ostream& out, const GridSpec& spec, const std::vector<GridCell>& cells) {
  const Method gest[] = {Method::established, Method::mod1, Method::mod2, Method::mod3};
  out << "sym_sd,axis,axis_value,status,tau,decline_var,theta_true,nsim";
  for (Method m : gest) out << ",emp_sd_" << to_string(m) << ",bias_" << to_string(m);
  out << ",emp_sd_benchmark";
  for (Method m : {Method::mod1, Method::mod2, Method::mod3}) out << ',' << to_string(m) << "_vs_established_pct";
  for (Method m : gest) out << ',' << to_string(m) << "_vs_benchmark_pct";
  out << '\n';
  const char* axis = spec.axis == GridSpec::Axis::target_sd ? "target_sd" : "decline_share";
  for (const auto& c : cells) {
    out << num(c.sym_sd) << ',' << axis << ',' << num(c.axis_value) << ',' << (c.ok ? "ok" : c.reason);
    if (!c.ok) {
      for (int i = 0; i < 4 + 2 * 4 + 1 + 3 + 4; ++i) out << ",NA";
      out << '\n';
      continue;
    }
    auto find = [&](Method m) -> const MethodSummary* {
      for (const auto& s : c.summary)
        if (s.method == m) return &s;
      return nullptr;
    };
    const auto* first = c.summary.empty() ? nullptr : &c.summary.front();
    out << ',' << num(c.params.tau) << ',' << num(c.params.baseline_cov(1, 1)) << ',' << num(c.theta_true) << ','
        << (first ? first->nsim : 0);
    for (Method m : gest) {
      const auto* s = find(m);
      out << ',' << num(s ? s->emp_sd : kNaN) << ',' << num(s ? s->bias : kNaN);
    }
    const auto* b = find(Method::benchmark);
    out << ',' << num(b ? b->emp_sd : kNaN);
    for (Method m : {Method::mod1, Method::mod2, Method::mod3})
      out << ',' << num(relative_sd_difference(c.summary, m, Method::established));
    for (Method m : gest) out << ',' << num(relative_sd_difference(c.summary, m, Method::benchmark));
    out << '\n';
  }
}

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

}  // namespace

void emit_results(const std::string& dir, const std::vector<TrialResult>& results, const PerformanceSummary& summary,
                  double theta_true) {
  std::filesystem::create_directories(dir);
  auto trials = open_out(std::filesystem::path(dir) / "trials.csv");
  write_trials_csv(trials, results, theta_true);
  auto sum = open_out(std::filesystem::path(dir) / "summary.csv");
  write_summary_csv(sum, summary);
  if (!trials || !sum) throw std::runtime_error("error writing results to " + dir);
}

void emit_grid(const std::string& dir, const GridSpec& spec, const std::vector<GridCell>& cells) {
  std::filesystem::create_directories(dir);
  auto heat = open_out(std::filesystem::path(dir) / "heatmap.csv");
  write_heatmap_csv(heat, spec, cells);
  auto sum = open_out(std::filesystem::path(dir) / "summary.csv");
  bool first = true;
  for (const auto& c : cells) {
    std::ostringstream block;
    write_summary_csv(block, c.summary);
    std::string text = block.str();
    const auto nl = text.find('\n');
    if (first) sum << "sym_sd,axis_value," << text.substr(0, nl + 1);
    first = false;
    std::istringstream lines(text.substr(nl + 1));
    for (std::string line; std::getline(lines, line);) sum << num(c.sym_sd) << ',' << num(c.axis_value) << ',' << line << '\n';
  }
  if (first) {
    std::ostringstream block;
    write_summary_csv(block, {});
    sum << "sym_sd,axis_value," << block.str();
  }
  if (!heat || !sum) throw std::runtime_error("error writing results to " + dir);
}

}  // namespace gdemed
