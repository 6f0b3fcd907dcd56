#pragma once

// Trial data-generating model: correlated baseline severity and decline,
// beta-regression progression on a Richards link, initiation of symptomatic
// medication and its additive effect on observed scores.

#include <array>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gdemed/stochastics.hpp"

namespace gdemed {

/// Underlying progression is simulated every quarter year from 0 to 2.
inline constexpr int kFineSteps = 8;
inline constexpr double kFineStep = 0.25;
/// Post-baseline visits 0.5, 1, 1.5, 2 sit at these fine-grid indices.
inline constexpr std::array<int, 4> kVisitFineIndex{2, 4, 6, 8};
inline constexpr std::array<double, 4> kVisitTimes{0.5, 1.0, 1.5, 2.0};
/// Initiation is possible at the first three post-baseline visits.
inline constexpr int kIeVisits = 3;
inline constexpr double kLinkEps = 1e-9;

enum class IeMechanism { sigmoid, threshold };

/// Whether the visit at which medication starts already shows its effect.
enum class EffectOnset { at_initiation, after_initiation };

/// Truncated-normal law of the per-patient symptomatic effect (score change).
struct SymEffectLaw {
  double mean = -2.6;
  double sd = 2.0;
  double lo = -6.6;
  double hi = 1.4;
};

struct ScenarioParams {
  int n = 154;
  double p_treat = 0.5;
  /// Multiplicative factor on the decline rate in the active arm (1 = null).
  double e_dm = 0.5;
  Eigen::Vector2d baseline_mean{27.0, 0.23};
  Eigen::Matrix2d baseline_cov = (Eigen::Matrix2d() << 49.0, 0.69, 0.69, 0.072).finished();
  Interval baseline_bounds{10.0, 50.0};
  double richards_beta = 2.4;
  double tau = 174.15;
  double scale_max = 85.0;
  IeMechanism ie_mechanism = IeMechanism::sigmoid;
  double ie_center = 29.0;
  double ie_slope = 1.0;
  double ie_threshold = 40.5;
  EffectOnset effect_onset = EffectOnset::after_initiation;
  SymEffectLaw sym_effect;
  bool outcome_rounding = true;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
};

struct PatientTrajectory {
  int treat = 0;
  double y0 = 0;  // observed baseline score
  double alpha = 0;
  double e_sym = 0;
  std::array<double, kFineSteps + 1> y_star{};  // underlying score on the fine grid
  std::array<double, 4> y_obs{};                // observed scores at 0.5, 1, 1.5, 2
  std::array<int, kIeVisits> sym_init{};        // one-hot initiation at 0.5, 1, 1.5

  [[nodiscard]] int initiation_visit() const;  // 0..2, or -1 if never
};

/// One patient's analysis record.
struct PatientRecord {
  int treat = 0;
  double y0 = 0;
  std::array<double, 4> y{};     // 0.5, 1, 1.5, 2
  std::array<int, kIeVisits> sym{};  // initiation at 0.5, 1, 1.5
  /// Counterfactual two-year score; oracle/benchmark use only, NaN when absent.
  double y2_star = std::numeric_limits<double>::quiet_NaN();
};

struct TrialData {
  std::vector<PatientRecord> patients;
  bool has_y2_star = false;

  [[nodiscard]] std::size_t size() const { return patients.size(); }
};

/// g(x) = log(x^beta / (1 - x^beta)).
double richards_link(double x, double beta);
/// h(eta) = (1 + exp(-eta))^(-1/beta).
double richards_inverse(double eta, double beta);

/// Mean of the next underlying score given the previous one (no noise).
double progress_mean(double y_prev_star, double alpha, int treat, const ScenarioParams& params, double delta_years);

/// One beta-regression step of the underlying score.
double progress_step(double y_prev_star, double alpha, int treat, const ScenarioParams& params, double delta_years,
                     Stream& stream);

PatientTrajectory simulate_patient(const ScenarioParams& params, Stream& stream);

/// Patient i draws from key.child(i).
TrialData simulate_trial(const ScenarioParams& params, const StreamKey& key);

struct OracleResult {
  double theta = 0;
  double se = 0;
  long long n = 0;
};

/// Treatment coefficient of OLS Y2* ~ Z + Y0 over a very large simulated trial.
OracleResult true_value_oracle(const ScenarioParams& params, long long n_oracle, const StreamKey& key,
                               int threads = 1);

struct CalibrationResult {
  double decline_var = 0;
  double tau = 0;
  double achieved_sd = 0;
};

struct CalibrationOptions {
  int n_patients = 100'000;
  double rel_tol = 0.01;
  double tau_lo = 1.0;
  double tau_hi = 1e8;
  std::uint64_t seed = 20240601;
};

/// Calibrates the decline-rate variance (when `decline_share` is given) and
/// then tau so that the placebo SD of Y2* matches `target_sd_y2`.
///
/// The decline share is the fraction of the non-baseline variance of Y2*
/// (target^2 minus the variance carried by baseline severity alone) that the
/// noise-free progression attributes to decline-rate heterogeneity; the rest
/// is left to beta noise. The baseline/decline correlation of the template is
/// kept. Without a share, the template's decline variance is kept.
CalibrationResult calibrate(double target_sd_y2, std::optional<double> decline_share, const ScenarioParams& tmpl,
                            const CalibrationOptions& options = {});

/// The template with the calibrated decline variance (correlation kept) and tau.
ScenarioParams apply_calibration(const ScenarioParams& tmpl, const CalibrationResult& cal);

/// Share of the template's non-baseline Y2* variance due to decline heterogeneity.
double implied_decline_share(const ScenarioParams& tmpl, double target_sd_y2, const CalibrationOptions& options = {});

// Dataset CSV: patient_id,treat,y0,y05,y1,y15,y2,sym05,sym1,sym15[,y2_star]
void write_dataset_csv(std::ostream& out, const TrialData& trial, bool include_y2_star);
TrialData read_dataset_csv(std::istream& in);

}  // namespace gdemed
