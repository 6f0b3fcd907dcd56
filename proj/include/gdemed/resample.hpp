#pragma once

// Patient-level bootstrap and jackknife standard errors and the one-sided
// Wald decision used for type I error and power.

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gdemed/dgm.hpp"
#include "gdemed/gest.hpp"
#include "gdemed/mmrm.hpp"

namespace gdemed {

using Estimator = std::function<double(const TrialData&)>;

struct AnalysisOptions {
  GestOptions gest;
  MaskRule mask = MaskRule::after_initiation;
  MmrmOptions mmrm;
};

/// Point estimate and model-based SE of each requested method on one data
/// set. G-estimation methods share their propensity fits. Throws the
/// estimator's error (EstimationError, EstimabilityError, SingularDesign).
std::vector<EstimateResult> estimate_methods(const TrialData& trial, std::span<const Method> methods,
                                             const AnalysisOptions& options = {});

/// True for errors that mean "this estimator cannot be fitted on these data".
bool is_fit_failure(const std::exception_ptr& e);

/// Whole-patient resample with replacement.
TrialData resample_patients(const TrialData& trial, Stream& stream);

/// Thrown when a resampling estimator cannot be evaluated often enough.
class ResampleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BootstrapResult {
  double se = 0;
  Interval ci_basic;
  std::vector<double> replicates;
  int failures = 0;
};

/// Replicate a uses the resample drawn from key.child(a); failing replicates
/// are skipped until B successes are collected or 10*B have failed.
BootstrapResult bootstrap(const TrialData& trial, const Estimator& estimator, double theta_hat, int B,
                          const StreamKey& key, std::string_view name = "estimator");
BootstrapResult bootstrap(const TrialData& trial, Method method, int B, const StreamKey& key,
                          const AnalysisOptions& options = {});

/// Same replicates as one bootstrap() call per method, computed jointly.
std::vector<BootstrapResult> bootstrap_methods(const TrialData& trial, std::span<const Method> methods,
                                               std::span<const double> theta_hat, int B, const StreamKey& key,
                                               const AnalysisOptions& options = {});

/// Leave-one-patient-out standard error. Any failing fit is an error.
double jackknife(const TrialData& trial, const Estimator& estimator, std::string_view name = "estimator");
double jackknife(const TrialData& trial, Method method, const AnalysisOptions& options = {});
std::vector<double> jackknife_methods(const TrialData& trial, std::span<const Method> methods,
                                      const AnalysisOptions& options = {});

inline constexpr double kZ975 = 1.959963984540054;

/// Benefit is a negative contrast: rejects iff theta_hat / se < -z_{1-alpha}.
bool wald_test(double theta_hat, double se, double alpha_one_sided = 0.025);

/// One-sided p-value of the same test.
double wald_p_value(double theta_hat, double se);

/// Rejects iff the upper end of the basic interval lies below zero.
bool basic_ci_test(const Interval& ci_basic);

/// Sample SD with n-1 divisor.
double sample_sd(std::span<const double> values);

/// Type 7 empirical quantile.
double empirical_quantile(std::vector<double> values, double prob);

}  // namespace gdemed
