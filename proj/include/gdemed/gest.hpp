#pragma once

// G-estimation of the controlled direct effect of treatment on the two-year
// score with symptomatic medication fixed at "never started": the sequential
// (established) de-mediation and three averaging variants.

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gdemed/dgm.hpp"

namespace gdemed {

enum class Method { established, mod1, mod2, mod3, mmrm, benchmark };

std::string_view to_string(Method m);
/// Accepts the names produced by to_string. Throws std::invalid_argument.
Method parse_method(std::string_view name);
bool is_gest(Method m);

enum class Weighting { inverse_se, inverse_variance };

/// Estimator failure on a particular data set (e.g. treatment column aliased).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GestOptions {
  Weighting weighting = Weighting::inverse_se;
  /// Also restrict modification 1's Sym1.5 -> Y2 fit to patients without an
  /// earlier initiation.
  bool mod1_restrict_sym15 = false;
  double mod3_tol = 1e-4;
  int mod3_max_iter = 25;
  /// White-box hook: de-mediate with this effect instead of fitted ones.
  std::optional<double> planted_effect;
};

inline constexpr double kUnfitted = std::numeric_limits<double>::infinity();

/// Per-timepoint mediator effects (index 0 -> 0.5, 1 -> 1, 2 -> 1.5). A
/// timepoint without initiations keeps coef 0 and se = kUnfitted.
struct DemediationTrace {
  std::array<double, 3> coef_sym{0.0, 0.0, 0.0};
  std::array<double, 3> se_sym{kUnfitted, kUnfitted, kUnfitted};
  double beta_sym = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool converged = true;
  double last_change = std::numeric_limits<double>::quiet_NaN();
};

struct EstimateResult {
  Method method = Method::established;
  double theta_hat = 0;  // active minus placebo, score points
  double model_se = 0;
  DemediationTrace trace;
};

/// sum(coef/se) / sum(1/se); with Weighting::inverse_variance uses 1/se^2.
/// Entries with se == kUnfitted are skipped; throws if none remain.
double weighted_average(std::span<const double> coefs, std::span<const double> ses,
                        Weighting weighting = Weighting::inverse_se);

EstimateResult estimate_established(const TrialData& trial, const GestOptions& options = {});
EstimateResult estimate_mod1(const TrialData& trial, const GestOptions& options = {});
EstimateResult estimate_mod2(const TrialData& trial, const GestOptions& options = {});
EstimateResult estimate_mod3(const TrialData& trial, const GestOptions& options = {});

/// OLS of the counterfactual Y2* on treatment and baseline. Needs y2_star;
/// not available from real data.
EstimateResult estimate_benchmark(const TrialData& trial);

/// Evaluates several g-estimators on one data set, sharing the propensity fits.
/// Results equal the individual estimate_* calls. Methods outside the
/// g-estimation family (and benchmark) are rejected.
std::vector<EstimateResult> estimate_gest(const TrialData& trial, std::span<const Method> methods,
                                          const GestOptions& options = {});

}  // namespace gdemed
