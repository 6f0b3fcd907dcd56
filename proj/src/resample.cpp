#include "gdemed/resample.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gdemed/normal.hpp"
#include "gdemed/regress.hpp"

namespace gdemed {

std::vector<EstimateResult> estimate_methods(const TrialData& trial, std::span<const Method> methods,
                                             const AnalysisOptions& options) {
  std::vector<Method> gest;
  for (Method m : methods)
    if (m != Method::mmrm) gest.push_back(m);
  std::vector<EstimateResult> gest_results;
  if (!gest.empty()) gest_results = estimate_gest(trial, gest, options.gest);
  std::vector<EstimateResult> out;
  out.reserve(methods.size());
  std::size_t next = 0;
  for (Method m : methods) {
    if (m == Method::mmrm) {
      const MmrmFit fit = fit_mmrm(set_post_ie_missing(trial, options.mask), options.mmrm);
      const Contrast c = mmrm_contrast_t2(fit);
      EstimateResult r;
      r.method = Method::mmrm;
      r.theta_hat = c.theta_hat;
      r.model_se = c.se;
      r.trace.iterations = fit.iterations;
      r.trace.converged = fit.converged;
      out.push_back(r);
    } else {
      out.push_back(gest_results[next++]);
    }
  }
  return out;
}

TrialData resample_patients(const TrialData& trial, Stream& stream) {
  TrialData out;
  out.has_y2_star = trial.has_y2_star;
  const auto n = trial.size();
  out.patients.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto pick = static_cast<std::size_t>((static_cast<unsigned __int128>(stream()) * n) >> 64);
    out.patients.push_back(trial.patients[pick]);
  }
  return out;
}

double sample_sd(std::span<const double> values) {
  const auto n = static_cast<double>(values.size());
  if (values.size() < 2) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (n - 1));
}

double empirical_quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw std::invalid_argument("empirical_quantile: no values");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

bool is_fit_failure(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const EstimationError&) {
    return true;
  } catch (const EstimabilityError&) {
    return true;
  } catch (const SingularDesign&) {
    return true;
  } catch (const std::invalid_argument&) {
    return true;
  } catch (...) {
    return false;
  }
}

namespace {

BootstrapResult finish(std::vector<double> replicates, double theta_hat, int failures) {
  BootstrapResult r;
  r.se = sample_sd(replicates);
  const double q_lo = empirical_quantile(replicates, 0.025);
  const double q_hi = empirical_quantile(replicates, 0.975);
  r.ci_basic = {2 * theta_hat - q_hi, 2 * theta_hat - q_lo};
  r.replicates = std::move(replicates);
  r.failures = failures;
  return r;
}

// Resampled MMRM fits start from the covariance of the full-data fit.
void warm_start(const TrialData& trial, std::span<const Method> methods, AnalysisOptions& opts) {
  if (opts.mmrm.start || std::find(methods.begin(), methods.end(), Method::mmrm) == methods.end()) return;
  try {
    opts.mmrm.start = fit_mmrm(set_post_ie_missing(trial, opts.mask), opts.mmrm).sigma;
  } catch (const EstimabilityError&) {
  }
}

void check_b(int B) {
  if (B < 2) throw std::invalid_argument("bootstrap: B must be at least 2");
}

}  // namespace

BootstrapResult bootstrap(const TrialData& trial, const Estimator& estimator, double theta_hat, int B,
                          const StreamKey& key, std::string_view name) {
  check_b(B);
  std::vector<double> reps;
  reps.reserve(static_cast<std::size_t>(B));
  int failures = 0;
  for (std::uint64_t a = 0; static_cast<int>(reps.size()) < B; ++a) {
    Stream stream(key.child(a));
    const TrialData boot = resample_patients(trial, stream);
    try {
      reps.push_back(estimator(boot));
    } catch (...) {
      if (!is_fit_failure(std::current_exception())) throw;
      if (++failures > 10 * B)
        throw ResampleError("bootstrap: " + std::string(name) + " failed on more than " + std::to_string(10 * B) +
                            " resamples");
    }
  }
  return finish(std::move(reps), theta_hat, failures);
}

BootstrapResult bootstrap(const TrialData& trial, Method method, int B, const StreamKey& key,
                          const AnalysisOptions& options) {
  const Method ms[] = {method};
  const double theta = estimate_methods(trial, ms, options)[0].theta_hat;
  const double thetas[] = {theta};
  return std::move(bootstrap_methods(trial, ms, thetas, B, key, options)[0]);
}

std::vector<BootstrapResult> bootstrap_methods(const TrialData& trial, std::span<const Method> methods,
                                               std::span<const double> theta_hat, int B, const StreamKey& key,
                                               const AnalysisOptions& options) {
  check_b(B);
  if (theta_hat.size() != methods.size()) throw std::invalid_argument("bootstrap: one estimate per method required");
  const std::size_t k = methods.size();
  std::vector<std::vector<double>> reps(k);
  std::vector<int> failures(k, 0);
  for (auto& r : reps) r.reserve(static_cast<std::size_t>(B));
  AnalysisOptions opts = options;
  warm_start(trial, methods, opts);

  std::vector<Method> pending;
  std::vector<std::size_t> slot;
  for (std::uint64_t a = 0;; ++a) {
    pending.clear();
    slot.clear();
    for (std::size_t j = 0; j < k; ++j)
      if (static_cast<int>(reps[j].size()) < B) {
        pending.push_back(methods[j]);
        slot.push_back(j);
      }
    if (pending.empty()) break;
    Stream stream(key.child(a));
    const TrialData boot = resample_patients(trial, stream);

    auto record_failure = [&](std::size_t j) {
      if (++failures[j] > 10 * B)
        throw ResampleError("bootstrap: " + std::string(to_string(methods[j])) + " failed on more than " +
                            std::to_string(10 * B) + " resamples");
    };
    // Joint evaluation first; on failure, fall back to one method at a time so
    // that one failing estimator does not discard the others.
    try {
      const auto res = estimate_methods(boot, pending, opts);
      for (std::size_t i = 0; i < pending.size(); ++i) reps[slot[i]].push_back(res[i].theta_hat);
    } catch (...) {
      if (!is_fit_failure(std::current_exception())) throw;
      for (std::size_t i = 0; i < pending.size(); ++i) {
        const Method one[] = {pending[i]};
        try {
          reps[slot[i]].push_back(estimate_methods(boot, one, opts)[0].theta_hat);
        } catch (...) {
          if (!is_fit_failure(std::current_exception())) throw;
          record_failure(slot[i]);
        }
      }
    }
  }
  std::vector<BootstrapResult> out;
  out.reserve(k);
  for (std::size_t j = 0; j < k; ++j) out.push_back(finish(std::move(reps[j]), theta_hat[j], failures[j]));
  return out;
}

namespace {

TrialData leave_out(const TrialData& trial, std::size_t i) {
  TrialData out;
  out.has_y2_star = trial.has_y2_star;
  out.patients.reserve(trial.size() - 1);
  for (std::size_t j = 0; j < trial.size(); ++j)
    if (j != i) out.patients.push_back(trial.patients[j]);
  return out;
}

double jackknife_se(std::span<const double> loo) {
  const auto n = static_cast<double>(loo.size());
  const double mean = std::accumulate(loo.begin(), loo.end(), 0.0) / n;
  double ss = 0;
  for (double v : loo) ss += (v - mean) * (v - mean);
  return std::sqrt((n - 1) / n * ss);
}

}  // namespace

double jackknife(const TrialData& trial, const Estimator& estimator, std::string_view name) {
  if (trial.size() < 2) throw std::invalid_argument("jackknife: at least two patients required");
  std::vector<double> loo(trial.size());
  for (std::size_t i = 0; i < trial.size(); ++i) {
    try {
      loo[i] = estimator(leave_out(trial, i));
    } catch (const std::exception& e) {
      throw ResampleError("jackknife: " + std::string(name) + " failed without patient " + std::to_string(i) + ": " +
                          e.what());
    }
  }
  return jackknife_se(loo);
}

double jackknife(const TrialData& trial, Method method, const AnalysisOptions& options) {
  const Method ms[] = {method};
  return jackknife_methods(trial, ms, options)[0];
}

std::vector<double> jackknife_methods(const TrialData& trial, std::span<const Method> methods,
                                      const AnalysisOptions& options) {
  if (trial.size() < 2) throw std::invalid_argument("jackknife: at least two patients required");
  const std::size_t k = methods.size();
  std::vector<std::vector<double>> loo(k, std::vector<double>(trial.size()));
  AnalysisOptions opts = options;
  warm_start(trial, methods, opts);
  for (std::size_t i = 0; i < trial.size(); ++i) {
    std::vector<EstimateResult> res;
    try {
      res = estimate_methods(leave_out(trial, i), methods, opts);
    } catch (const std::exception& e) {
      throw ResampleError("jackknife: fit failed without patient " + std::to_string(i) + ": " + e.what());
    }
    for (std::size_t j = 0; j < k; ++j) loo[j][i] = res[j].theta_hat;
  }
  std::vector<double> out;
  out.reserve(k);
  for (const auto& v : loo) out.push_back(jackknife_se(v));
  return out;
}

bool wald_test(double theta_hat, double se, double alpha_one_sided) {
  if (!(se > 0)) throw std::invalid_argument("wald_test: se must be positive");
  const double z = alpha_one_sided == 0.025 ? kZ975 : -normal::quantile(alpha_one_sided);
  return theta_hat / se < -z;
}

double wald_p_value(double theta_hat, double se) {
  if (!(se > 0)) throw std::invalid_argument("wald_p_value: se must be positive");
  return normal::cdf(theta_hat / se);
}

bool basic_ci_test(const Interval& ci_basic) { return ci_basic.hi < 0; }

}  // namespace gdemed
