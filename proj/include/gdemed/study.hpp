#pragma once

// Simulation studies: many trials per scenario, every estimator and
// inference flavor per trial, performance summaries and CSV output.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gdemed/dgm.hpp"
#include "gdemed/gest.hpp"
#include "gdemed/resample.hpp"

namespace gdemed {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum class BootstrapTest { wald, basic_ci };

struct StudyOptions {
  std::uint64_t scenario_id = 1;
  int nsim = 2000;
  std::vector<Method> methods{Method::mmrm, Method::established, Method::mod1, Method::mod2, Method::mod3};
  bool bootstrap = true;
  bool jackknife = true;
  int B = 500;
  BootstrapTest bootstrap_test = BootstrapTest::wald;
  std::uint64_t master_seed = 20240601;
  int threads = 0;  // 0 = all available cores
  AnalysisOptions analysis;
  /// Scenario-level error when a method fails on more than this share of trials.
  double max_failure_share = 0.01;
  std::function<void(int done, int total)> progress;
};

struct MethodOutcome {
  Method method = Method::established;
  bool failed = false;
  std::string error;
  double theta_hat = kNaN;
  double se_model = kNaN;
  double se_bootstrap = kNaN;
  double se_jackknife = kNaN;
  Interval ci_basic{kNaN, kNaN};
  bool reject_model = false;
  bool reject_bootstrap = false;
  bool reject_jackknife = false;
  int iterations = 0;
  bool converged = true;
  int bootstrap_failures = 0;
};

struct TrialResult {
  long trial_index = 0;
  std::vector<MethodOutcome> outcomes;  // in StudyOptions::methods order
};

class StudyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trial k is simulated from StreamKey(master_seed, {scenario_id, k}).child(0)
/// and resampled from .child(1); results do not depend on the thread count.
std::vector<TrialResult> run_scenario(const ScenarioParams& params, const StudyOptions& options);

/// Analysis of one simulated trial as done inside run_scenario.
TrialResult run_trial(const ScenarioParams& params, const StudyOptions& options, long k);

/// Throws StudyError when any method failed on more than `max_share` of trials.
void check_failures(const std::vector<TrialResult>& results, double max_share);

struct FlavorSummary {
  double mean_se = kNaN;
  double rejection = kNaN;
  double mcse_rejection = kNaN;
  double coverage = kNaN;
  double mcse_coverage = kNaN;
};

struct MethodSummary {
  Method method = Method::established;
  int nsim = 0;
  int failures = 0;
  double theta_true = 0;
  double mean_estimate = kNaN;
  double bias = kNaN;
  double mcse_bias = kNaN;
  double emp_sd = kNaN;
  FlavorSummary model, bootstrap, jackknife;
  double mean_iterations = kNaN;
  int nonconverged = 0;
};

using PerformanceSummary = std::vector<MethodSummary>;

/// Rejections use the flags stored per trial; coverage uses 95% Wald
/// intervals around each estimate with the respective SE.
PerformanceSummary summarize(const std::vector<TrialResult>& results, double theta_true);

struct GridSpec {
  /// Each value also sets the truncation bounds to mean +- 2 sd (kept as in
  /// the base law for sd = 0).
  std::vector<double> sym_sd;
  enum class Axis { target_sd, decline_share } axis = Axis::target_sd;
  std::vector<double> axis_values;
  /// SD(Y2*) held fixed along a decline-share axis.
  double fixed_target_sd = 14.0;
  /// Decline share held fixed along a target-SD axis; by default the share
  /// implied by the base parameters at fixed_target_sd.
  std::optional<double> fixed_share;
  long long oracle_n = 1'000'000;
  CalibrationOptions calibration;
};

struct GridCell {
  double sym_sd = 0;
  double axis_value = 0;
  bool ok = false;
  std::string reason;
  ScenarioParams params;
  double theta_true = kNaN;
  PerformanceSummary summary;
};

/// Each cell is calibrated, run with the g-estimators and the benchmark on
/// the counterfactual score (point estimates only unless `options` asks for
/// resampling), and summarized against its own oracle value.
std::vector<GridCell> run_grid(const GridSpec& spec, const ScenarioParams& base, const StudyOptions& options);

/// 100 * (SD_method - SD_comparator) / SD_comparator.
double relative_sd_difference(const PerformanceSummary& s, Method method, Method comparator);

// CSV outputs. Headers are fixed; empty inputs give header-only files.
void write_trials_csv(std::ostream& out, const std::vector<TrialResult>& results, double theta_true);
std::vector<TrialResult> read_trials_csv(std::istream& in);
void write_summary_csv(std::ostream& out, const PerformanceSummary& summary);
void write_heatmap_csv(std::ostream& out, const GridSpec& spec, const std::vector<GridCell>& cells);

/// Writes trials.csv and summary.csv (and heatmap.csv for grids) into `dir`.
void emit_results(const std::string& dir, const std::vector<TrialResult>& results, const PerformanceSummary& summary,
                  double theta_true);
void emit_grid(const std::string& dir, const GridSpec& spec, const std::vector<GridCell>& cells);

}  // namespace gdemed
