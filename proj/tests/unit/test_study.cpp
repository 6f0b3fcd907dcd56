#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "gdemed/csv.hpp"
#include "gdemed/stochastics.hpp"
#include "gdemed/study.hpp"
#include "oracles.hpp"

using namespace gdemed;

namespace {

MethodOutcome outcome(Method m, double theta, double se) {
  MethodOutcome o;
  o.method = m;
  o.theta_hat = theta;
  o.se_model = se;
  o.reject_model = wald_test(theta, se);
  return o;
}

StudyOptions small_study(int nsim) {
  StudyOptions o;
  o.nsim = nsim;
  o.B = 8;
  o.methods = {Method::mmrm, Method::established, Method::mod3};
  o.master_seed = 5;
  return o;
}

ScenarioParams small_params() {
  ScenarioParams p;
  p.tau = 174.15;
  p.e_dm = 0.5;
  return p;
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("summary of a constant estimator") {
  std::vector<TrialResult> results;
  for (int k = 0; k < 10; ++k) results.push_back({k, {outcome(Method::established, 1.0, 0.5)}});
  results[3].outcomes[0].failed = true;
  const auto s = summarize(results, 0.0);
  REQUIRE(s.size() == 1);
  CHECK(s[0].nsim == 9);
  CHECK(s[0].failures == 1);
  CHECK(s[0].bias == 1.0);
  CHECK(s[0].emp_sd == 0.0);
  CHECK(s[0].mcse_bias == 0.0);
  CHECK(s[0].model.mean_se == 0.5);
  CHECK(s[0].model.coverage == 0.0);
  CHECK(s[0].model.rejection == 0.0);
  CHECK(std::isnan(s[0].bootstrap.mean_se));
  CHECK(summarize({}, 0.0).empty());
}

TEST_CASE("summary of a Gaussian estimator") {
  Stream s(StreamKey(61, {0}));
  std::vector<TrialResult> results;
  oracle::Vec est;
  const double theta = -2.0;
  for (int k = 0; k < 20000; ++k) {
    const double t = theta + s.normal();
    est.push_back(t);
    results.push_back({k, {outcome(Method::mod2, t, 1.0)}});
  }
  const auto sum = summarize(results, theta);
  const auto m = oracle::moments(est);
  CHECK(sum[0].mean_estimate == doctest::Approx(m.mean).epsilon(1e-12));
  CHECK(sum[0].emp_sd == doctest::Approx(std::sqrt(m.var)).epsilon(1e-12));
  CHECK(std::abs(sum[0].bias) < 4 * sum[0].mcse_bias);
  CHECK(std::abs(sum[0].model.coverage - 0.95) < 4 * sum[0].model.mcse_coverage);
  const double power = oracle::Phi(-kZ975 - theta);
  CHECK(std::abs(sum[0].model.rejection - power) < 4 * std::sqrt(power * (1 - power) / 20000));
}

TEST_CASE("relative SD difference") {
  PerformanceSummary s(2);
  s[0].method = Method::mod1;
  s[0].emp_sd = 1.1;
  s[1].method = Method::established;
  s[1].emp_sd = 1.0;
  CHECK(relative_sd_difference(s, Method::mod1, Method::established) == doctest::Approx(10.0));
  CHECK(std::isnan(relative_sd_difference(s, Method::mod3, Method::established)));
}

TEST_CASE("failure share check") {
  std::vector<TrialResult> results;
  for (int k = 0; k < 100; ++k) results.push_back({k, {outcome(Method::mod1, 0, 1)}});
  results[0].outcomes[0].failed = true;
  CHECK_NOTHROW(check_failures(results, 0.01));
  results[1].outcomes[0].failed = true;
  CHECK_THROWS_AS(check_failures(results, 0.01), StudyError);
}

TEST_CASE("scenario runs do not depend on the thread count") {
  auto one = small_study(4);
  one.threads = 1;
  auto many = small_study(4);
  many.threads = 3;
  const auto a = run_scenario(small_params(), one);
  const auto b = run_scenario(small_params(), many);
  std::ostringstream sa, sb;
  write_trials_csv(sa, a, -1);
  write_trials_csv(sb, b, -1);
  CHECK(sa.str() == sb.str());
  const auto single = run_trial(small_params(), one, 2);
  CHECK(single.outcomes[1].theta_hat == a[2].outcomes[1].theta_hat);
  CHECK(single.outcomes[0].se_bootstrap == a[2].outcomes[0].se_bootstrap);
  for (const auto& r : a)
    for (const auto& o : r.outcomes) {
      CHECK_FALSE(o.failed);
      CHECK(o.se_bootstrap > 0);
      CHECK(o.se_jackknife > 0);
    }
}

TEST_CASE("trials csv round trip") {
  auto opt = small_study(3);
  opt.threads = 1;
  auto results = run_scenario(small_params(), opt);
  results[1].outcomes[2].failed = true;
  results[1].outcomes[2].error = "mod3: synthetic failure";
  results[1].outcomes[2].theta_hat = kNaN;
  std::ostringstream out;
  write_trials_csv(out, results, -4.25);
  std::istringstream in(out.str());
  const auto back = read_trials_csv(in);
  REQUIRE(back.size() == results.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    CHECK(back[k].trial_index == results[k].trial_index);
    REQUIRE(back[k].outcomes.size() == results[k].outcomes.size());
    for (std::size_t j = 0; j < back[k].outcomes.size(); ++j) {
      const auto& x = back[k].outcomes[j];
      const auto& y = results[k].outcomes[j];
      CHECK(x.method == y.method);
      CHECK(x.failed == y.failed);
      if (y.failed) continue;
      for (auto f : {&MethodOutcome::theta_hat, &MethodOutcome::se_model, &MethodOutcome::se_bootstrap,
                     &MethodOutcome::se_jackknife})
        CHECK(std::abs(x.*f - y.*f) <= 1e-12 * std::abs(y.*f));
      CHECK(std::abs(x.ci_basic.lo - y.ci_basic.lo) <= 1e-12 * std::abs(y.ci_basic.lo));
      CHECK(x.reject_model == y.reject_model);
      CHECK(x.reject_bootstrap == y.reject_bootstrap);
      CHECK(x.iterations == y.iterations);
      CHECK(x.converged == y.converged);
    }
  }
  std::ostringstream again;
  write_trials_csv(again, back, -4.25);
  CHECK(again.str() == out.str());
}

TEST_CASE("empty inputs give header-only files") {
  std::ostringstream t, s, h;
  write_trials_csv(t, {}, 0);
  write_summary_csv(s, {});
  write_heatmap_csv(h, GridSpec{}, {});
  CHECK(count_lines(t.str()) == 1);
  CHECK(t.str().rfind("trial,method,failed,theta_hat,", 0) == 0);
  CHECK(count_lines(s.str()) == 1);
  CHECK(s.str().rfind("method,", 0) == 0);
  CHECK(count_lines(h.str()) == 1);
  CHECK(h.str().rfind("sym_sd,axis,axis_value,", 0) == 0);
}

TEST_CASE("heatmap has one row per cell") {
  GridSpec spec;
  spec.sym_sd = {0, 2};
  spec.axis_values = {10, 11, 12, 13, 14, 15, 16, 17, 18};
  std::vector<GridCell> cells;
  for (double sd : spec.sym_sd)
    for (double v : spec.axis_values) {
      GridCell c;
      c.sym_sd = sd;
      c.axis_value = v;
      c.ok = v != 10;
      c.reason = "unreachable";
      c.theta_true = -5;
      MethodSummary est, m1, b;
      est.method = Method::established;
      est.emp_sd = 1.5;
      m1.method = Method::mod1;
      m1.emp_sd = 1.8;
      b.method = Method::benchmark;
      b.emp_sd = 1.2;
      c.summary = {est, m1, b};
      cells.push_back(c);
    }
  std::ostringstream out;
  write_heatmap_csv(out, spec, cells);
  const std::string text = out.str();
  CHECK(count_lines(text) == 19);
  std::istringstream lines(text);
  std::string header, row;
  std::getline(lines, header);
  const auto columns = std::count(header.begin(), header.end(), ',');
  while (std::getline(lines, row)) CHECK(std::count(row.begin(), row.end(), ',') == columns);
  CHECK(text.find("unreachable") != std::string::npos);
  std::istringstream again(text);
  const auto table = csv::read(again);
  const auto col = std::find(table.header.begin(), table.header.end(), "mod1_vs_established_pct") - table.header.begin();
  CHECK(std::stod(table.rows[1][static_cast<std::size_t>(col)]) == doctest::Approx(20.0));
  CHECK(table.rows[0][static_cast<std::size_t>(col)] == "NA");
}

TEST_CASE("invalid study options") {
  auto o = small_study(0);
  CHECK_THROWS_AS(run_scenario(small_params(), o), std::invalid_argument);
}

TEST_CASE("grid cells scale the medication-effect bounds with its SD") {
  GridSpec spec;
  spec.sym_sd = {5};
  spec.axis_values = {14};
  spec.fixed_share = 0.5;
  spec.oracle_n = 20000;
  spec.calibration.n_patients = 20000;
  StudyOptions o;
  o.nsim = 2;
  o.bootstrap = false;
  o.jackknife = false;
  o.methods = {Method::established, Method::mod1};
  o.threads = 1;
  const auto cells = run_grid(spec, small_params(), o);
  REQUIRE(cells.size() == 1);
  REQUIRE(cells[0].ok);
  CHECK(cells[0].params.sym_effect.sd == 5);
  CHECK(cells[0].params.sym_effect.lo == doctest::Approx(-12.6));
  CHECK(cells[0].params.sym_effect.hi == doctest::Approx(7.4));
  CHECK(cells[0].summary.size() == 2);
  CHECK(cells[0].summary[0].nsim == 2);
}
