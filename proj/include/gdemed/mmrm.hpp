#pragma once

// Mixed model for repeated measures on post-baseline scores with values at
// and after initiation of symptomatic medication set missing. Saturated
// arm-by-visit means, one unstructured 4x4 covariance, REML.

#include <array>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "gdemed/dgm.hpp"

namespace gdemed {

enum class MaskRule { at_initiation, after_initiation };

struct LongRecord {
  int patient = 0;
  int arm = 0;
  int visit = 0;  // 0..3 for t = 0.5, 1, 1.5, 2
  std::optional<double> y;
};

using LongData = std::vector<LongRecord>;

/// Long records for every patient and visit; scores strictly after the
/// initiation visit (or from it on) are absent. Baseline is never part of the data.
LongData set_post_ie_missing(const TrialData& trial, MaskRule rule = MaskRule::after_initiation);

struct MmrmFit {
  /// Cell-means coding: placebo means at the four visits, then
  /// active-minus-placebo differences at the four visits.
  Eigen::Matrix<double, 8, 1> fixed_effects = Eigen::Matrix<double, 8, 1>::Zero();
  Eigen::Matrix<double, 8, 8> fixed_cov = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix4d sigma = Eigen::Matrix4d::Identity();
  bool converged = false;
  double reml_loglik = 0;
  double grad_norm = 0;
  int iterations = 0;
};

class EstimabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MmrmOptions {
  int max_iter = 200;
  double rel_tol = 1e-9;
  /// Starting covariance; defaults to the pairwise moment estimate.
  std::optional<Eigen::Matrix4d> start;
};

MmrmFit fit_mmrm(const LongData& data, const MmrmOptions& options = {});

/// REML log-likelihood of `data` at a given covariance, with the fixed
/// effects profiled out by GLS. Throws EstimabilityError on empty cells.
double mmrm_reml_loglik(const LongData& data, const Eigen::Matrix4d& sigma);

struct Contrast {
  double theta_hat = 0;
  double se = 0;
};

/// Active minus placebo mean at t = 2 with its GLS standard error.
Contrast mmrm_contrast_t2(const MmrmFit& fit);

}  // namespace gdemed
