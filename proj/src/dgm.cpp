#include "gdemed/dgm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "gdemed/csv.hpp"

namespace gdemed {

void ScenarioParams::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("scenario: " + what); };
  if (n < 0) fail("n must be non-negative");
  if (!(p_treat > 0.0 && p_treat < 1.0)) fail("p_treat must lie in (0,1)");
  if (!(e_dm > 0.0 && e_dm <= 1.0)) fail("e_dm must lie in (0,1]");
  if (!(richards_beta > 0.0)) fail("richards_beta must be positive");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (!(scale_max > 0.0)) fail("scale_max must be positive");
  if (!(baseline_bounds.lo > 0.0 && baseline_bounds.hi < scale_max && baseline_bounds.lo < baseline_bounds.hi))
    fail("baseline_bounds must lie strictly inside (0, scale_max)");
  Eigen::LLT<Eigen::Matrix2d> llt(baseline_cov);
  if (llt.info() != Eigen::Success || std::abs(baseline_cov(0, 1) - baseline_cov(1, 0)) > 1e-12)
    fail("baseline_cov must be symmetric positive definite");
  if (!(sym_effect.sd >= 0.0) || !(sym_effect.lo < sym_effect.hi)) fail("sym_effect law is invalid");
  if (!(ie_slope > 0.0)) fail("ie_slope must be positive");
}

int PatientTrajectory::initiation_visit() const {
  for (int k = 0; k < kIeVisits; ++k)
    if (sym_init[k]) return k;
  return -1;
}

double richards_link(double x, double beta) {
  if (!(x > 0.0 && x < 1.0)) throw std::domain_error("richards_link: x must lie in (0,1)");
  const double xb = std::pow(x, beta);
  return std::log(xb) - std::log1p(-xb);
}

double richards_inverse(double eta, double beta) { return std::pow(1.0 + std::exp(-eta), -1.0 / beta); }

double progress_mean(double y_prev_star, double alpha, int treat, const ScenarioParams& params, double delta_years) {
  const double x = std::clamp(y_prev_star / params.scale_max, kLinkEps, 1.0 - kLinkEps);
  const double drift = alpha * delta_years * (treat ? params.e_dm : 1.0);
  const double m = richards_inverse(richards_link(x, params.richards_beta) + drift, params.richards_beta);
  return params.scale_max * std::clamp(m, kLinkEps, 1.0 - kLinkEps);
}

double progress_step(double y_prev_star, double alpha, int treat, const ScenarioParams& params, double delta_years,
                     Stream& stream) {
  if (!(delta_years > 0.0)) throw std::domain_error("progress_step: delta_years must be positive");
  const double m = progress_mean(y_prev_star, alpha, treat, params, delta_years) / params.scale_max;
  return params.scale_max * sample_beta_mean_tau(m, params.tau, stream);
}

namespace {

double observe(double value, const ScenarioParams& params) {
  const double clamped = std::clamp(value, 0.0, params.scale_max);
  return params.outcome_rounding ? std::round(clamped) : clamped;
}

// Treatment, baseline and the underlying chain; shared with the oracle.
void simulate_underlying(const ScenarioParams& params, Stream& stream, PatientTrajectory& p) {
  p.treat = stream.bernoulli(params.p_treat) ? 1 : 0;
  const TruncatedBivariateNormalSpec spec{params.baseline_mean, params.baseline_cov, params.baseline_bounds};
  const auto [y0, alpha] = sample_truncated_bivariate_normal(spec, stream);
  p.alpha = alpha;
  p.y_star[0] = y0;
  p.y0 = observe(y0, params);
  for (int k = 1; k <= kFineSteps; ++k)
    p.y_star[k] = progress_step(p.y_star[k - 1], alpha, p.treat, params, kFineStep, stream);
}

}  // namespace

PatientTrajectory simulate_patient(const ScenarioParams& params, Stream& stream) {
  PatientTrajectory p;
  simulate_underlying(params, stream, p);

  int initiated_at = -1;
  for (int k = 0; k < kIeVisits; ++k) {
    const double ystar = p.y_star[kVisitFineIndex[k]];
    bool start = false;
    if (params.ie_mechanism == IeMechanism::sigmoid) {
      const double prob = 1.0 / (1.0 + std::exp(-params.ie_slope * (ystar - params.ie_center)));
      start = stream.bernoulli(prob);
    } else {
      // Nobody has initiated yet, so the observed value is the underlying one.
      start = observe(ystar, params) > params.ie_threshold;
    }
    if (start) {
      initiated_at = k;
      p.sym_init[k] = 1;
      break;
    }
  }

  const auto& law = params.sym_effect;
  p.e_sym = sample_truncated_normal(law.mean, law.sd, law.lo, law.hi, stream);

  for (int v = 0; v < 4; ++v) {
    bool exposed = false;
    if (initiated_at >= 0)
      exposed = params.effect_onset == EffectOnset::at_initiation ? v >= initiated_at : v > initiated_at;
    const double ystar = p.y_star[kVisitFineIndex[v]];
    p.y_obs[v] = observe(exposed ? ystar + p.e_sym : ystar, params);
  }
  return p;
}

TrialData simulate_trial(const ScenarioParams& params, const StreamKey& key) {
  params.validate();
  TrialData trial;
  trial.has_y2_star = true;
  trial.patients.reserve(static_cast<std::size_t>(params.n));
  for (int i = 0; i < params.n; ++i) {
    Stream stream(key.child(static_cast<std::uint64_t>(i)));
    const PatientTrajectory p = simulate_patient(params, stream);
    PatientRecord rec;
    rec.treat = p.treat;
    rec.y0 = p.y0;
    rec.y = p.y_obs;
    rec.sym = p.sym_init;
    rec.y2_star = observe(p.y_star[kFineSteps], params);
    trial.patients.push_back(rec);
  }
  return trial;
}

namespace {

// Sufficient statistics of OLS y ~ 1 + z + y0, accumulated in long double.
struct OlsMoments {
  Eigen::Matrix<long double, 3, 3> xtx = Eigen::Matrix<long double, 3, 3>::Zero();
  Eigen::Matrix<long double, 3, 1> xty = Eigen::Matrix<long double, 3, 1>::Zero();
  long double yty = 0;
  long long n = 0;

  void add(double z, double y0, double y) {
    const Eigen::Matrix<long double, 3, 1> x(1.0L, z, y0);
    xtx.noalias() += x * x.transpose();
    xty.noalias() += x * static_cast<long double>(y);
    yty += static_cast<long double>(y) * y;
    ++n;
  }
  OlsMoments& operator+=(const OlsMoments& o) {
    xtx += o.xtx;
    xty += o.xty;
    yty += o.yty;
    n += o.n;
    return *this;
  }
};

}  // namespace

OracleResult true_value_oracle(const ScenarioParams& params, long long n_oracle, const StreamKey& key, int threads) {
  params.validate();
  if (n_oracle < 10'000) throw std::invalid_argument("oracle: n_oracle must be at least 10^4");
  constexpr long long kBlock = 100'000;
  const long long n_blocks = (n_oracle + kBlock - 1) / kBlock;
  std::vector<OlsMoments> partial(static_cast<std::size_t>(n_blocks));

  auto run_block = [&](long long b) {
    OlsMoments m;
    const long long begin = b * kBlock;
    const long long end = std::min(n_oracle, begin + kBlock);
    PatientTrajectory p;
    for (long long i = begin; i < end; ++i) {
      Stream stream(key.child(static_cast<std::uint64_t>(i)));
      simulate_underlying(params, stream, p);
      m.add(p.treat, p.y_star[0], p.y_star[kFineSteps]);
    }
    partial[static_cast<std::size_t>(b)] = m;
  };

  threads = std::max(1, threads);
  std::vector<std::thread> pool;
  std::atomic<long long> next{0};
  auto worker = [&] {
    for (long long b = next++; b < n_blocks; b = next++) run_block(b);
  };
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  OlsMoments total;
  for (const auto& m : partial) total += m;  // fixed order keeps the sum reproducible
  const Eigen::Matrix3d xtx = total.xtx.cast<double>();
  const Eigen::Vector3d xty = total.xty.cast<double>();
  const Eigen::Matrix3d inv = xtx.inverse();
  const Eigen::Vector3d b = inv * xty;
  const long double rss = total.yty - 2.0L * (b.cast<long double>().dot(total.xty)) +
                          (b.cast<long double>().transpose() * total.xtx * b.cast<long double>())(0, 0);
  const double sigma2 = static_cast<double>(rss) / static_cast<double>(total.n - 3);
  return {b[1], std::sqrt(sigma2 * inv(1, 1)), total.n};
}

namespace {

struct CalibrationSample {
  std::vector<double> y0;  // truncated baseline draws
  std::vector<double> z2;  // standard normal driving the decline rate
};

CalibrationSample draw_calibration_sample(const ScenarioParams& tmpl, const CalibrationOptions& opt) {
  CalibrationSample s;
  s.y0.reserve(static_cast<std::size_t>(opt.n_patients));
  s.z2.reserve(static_cast<std::size_t>(opt.n_patients));
  Stream stream(StreamKey(opt.seed, {0xCA11B}));
  const double sd0 = std::sqrt(tmpl.baseline_cov(0, 0));
  while (static_cast<int>(s.y0.size()) < opt.n_patients) {
    const double z1 = stream.normal();
    const double z2 = stream.normal();
    const double y0 = tmpl.baseline_mean[0] + sd0 * z1;
    if (!tmpl.baseline_bounds.contains(y0)) continue;
    s.y0.push_back(y0);
    s.z2.push_back(z2);
  }
  return s;
}

double correlation(const ScenarioParams& p) {
  return p.baseline_cov(0, 1) / std::sqrt(p.baseline_cov(0, 0) * p.baseline_cov(1, 1));
}

void set_decline_var(ScenarioParams& p, double var, double rho) {
  p.baseline_cov(1, 1) = var;
  p.baseline_cov(0, 1) = p.baseline_cov(1, 0) = rho * std::sqrt(p.baseline_cov(0, 0) * var);
}

// Decline rate implied by the bivariate normal given the baseline draw.
double alpha_given(const ScenarioParams& p, double y0, double z2) {
  const double s00 = p.baseline_cov(0, 0);
  const double cond_mean = p.baseline_mean[1] + p.baseline_cov(0, 1) / s00 * (y0 - p.baseline_mean[0]);
  const double cond_var = std::max(0.0, p.baseline_cov(1, 1) - p.baseline_cov(0, 1) * p.baseline_cov(0, 1) / s00);
  return cond_mean + std::sqrt(cond_var) * z2;
}

double variance(const std::vector<double>& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

// Placebo Y2* on the noise-free (mean) path.
double noise_free_var(const ScenarioParams& p, const CalibrationSample& s) {
  std::vector<double> y2(s.y0.size());
  for (std::size_t i = 0; i < s.y0.size(); ++i) {
    const double alpha = alpha_given(p, s.y0[i], s.z2[i]);
    double y = s.y0[i];
    for (int k = 0; k < kFineSteps; ++k) y = progress_mean(y, alpha, 0, p, kFineStep);
    y2[i] = y;
  }
  return variance(y2);
}

double placebo_sd_y2(const ScenarioParams& p, const CalibrationSample& s, std::uint64_t seed) {
  std::vector<double> y2(s.y0.size());
  Stream stream(StreamKey(seed, {0xCA11C}));
  for (std::size_t i = 0; i < s.y0.size(); ++i) {
    const double alpha = alpha_given(p, s.y0[i], s.z2[i]);
    double y = s.y0[i];
    for (int k = 0; k < kFineSteps; ++k) y = progress_step(y, alpha, 0, p, kFineStep, stream);
    y2[i] = y;
  }
  return std::sqrt(variance(y2));
}

double baseline_only_var(const ScenarioParams& tmpl, const CalibrationSample& s) {
  ScenarioParams p = tmpl;
  p.baseline_cov(1, 1) = 0.0;
  p.baseline_cov(0, 1) = p.baseline_cov(1, 0) = 0.0;
  return noise_free_var(p, s);
}

}  // namespace

double implied_decline_share(const ScenarioParams& tmpl, double target_sd_y2, const CalibrationOptions& options) {
  const CalibrationSample s = draw_calibration_sample(tmpl, options);
  const double v_base = baseline_only_var(tmpl, s);
  const double v_extra = target_sd_y2 * target_sd_y2 - v_base;
  if (!(v_extra > 0)) throw std::invalid_argument("calibrate: target SD below the baseline-only SD");
  return (noise_free_var(tmpl, s) - v_base) / v_extra;
}

ScenarioParams apply_calibration(const ScenarioParams& tmpl, const CalibrationResult& cal) {
  ScenarioParams p = tmpl;
  set_decline_var(p, cal.decline_var, correlation(tmpl));
  p.tau = cal.tau;
  return p;
}

CalibrationResult calibrate(double target_sd_y2, std::optional<double> decline_share, const ScenarioParams& tmpl,
                            const CalibrationOptions& options) {
  if (!(target_sd_y2 > 0)) throw std::invalid_argument("calibrate: target SD must be positive");
  ScenarioParams p = tmpl;
  const CalibrationSample s = draw_calibration_sample(tmpl, options);

  if (decline_share) {
    const double share = *decline_share;
    if (!(share > 0.0 && share < 1.0)) throw std::invalid_argument("calibrate: decline share must lie in (0,1)");
    const double rho = correlation(tmpl);
    const double v_base = baseline_only_var(tmpl, s);
    const double v_extra = target_sd_y2 * target_sd_y2 - v_base;
    if (!(v_extra > 0))
      throw std::runtime_error("calibrate: target SD " + std::to_string(target_sd_y2) +
                               " is below the SD carried by baseline severity alone (" +
                               std::to_string(std::sqrt(v_base)) + ")");
    const double goal = v_base + share * v_extra;
    double lo = 0.0, hi = 1e-3;
    auto excess = [&](double var) {
      set_decline_var(p, std::max(var, 1e-14), rho);
      return noise_free_var(p, s) - goal;
    };
    while (excess(hi) < 0) {
      hi *= 2;
      if (hi > 1e3) throw std::runtime_error("calibrate: decline variance needed for the share is unreachable");
    }
    for (int it = 0; it < 60 && hi - lo > 1e-10 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (excess(mid) < 0 ? lo : hi) = mid;
    }
    set_decline_var(p, std::max(0.5 * (lo + hi), 1e-14), rho);
  }

  // SD of Y2* falls as tau grows; bisect on log(tau).
  auto sd_at = [&](double tau) {
    p.tau = tau;
    return placebo_sd_y2(p, s, options.seed);
  };
  double lo = std::log(options.tau_lo), hi = std::log(options.tau_hi);
  const double sd_lo = sd_at(options.tau_lo), sd_hi = sd_at(options.tau_hi);
  if (!(sd_lo >= target_sd_y2 && sd_hi <= target_sd_y2)) {
    std::ostringstream msg;
    msg << "calibrate: target SD " << target_sd_y2 << " not bracketed; achievable range [" << sd_hi << ", " << sd_lo
        << "] over tau in [" << options.tau_lo << ", " << options.tau_hi << "]";
    throw std::runtime_error(msg.str());
  }
  double achieved = 0, tau = 0;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    tau = std::exp(mid);
    achieved = sd_at(tau);
    if (std::abs(achieved - target_sd_y2) < 0.25 * options.rel_tol * target_sd_y2 || hi - lo < 1e-6) break;
    (achieved > target_sd_y2 ? lo : hi) = mid;
  }
  if (std::abs(achieved - target_sd_y2) > options.rel_tol * target_sd_y2)
    throw std::runtime_error("calibrate: bisection stalled at SD " + std::to_string(achieved));
  return {p.baseline_cov(1, 1), tau, achieved};
}

void write_dataset_csv(std::ostream& out, const TrialData& trial, bool include_y2_star) {
  out << "patient_id,treat,y0,y05,y1,y15,y2,sym05,sym1,sym15";
  if (include_y2_star) out << ",y2_star";
  out << '\n';
  for (std::size_t i = 0; i < trial.patients.size(); ++i) {
    const auto& p = trial.patients[i];
    out << (i + 1) << ',' << p.treat << ',' << csv::format_number(p.y0);
    for (double y : p.y) out << ',' << csv::format_number(y);
    for (int s : p.sym) out << ',' << s;
    if (include_y2_star) out << ',' << csv::format_number(p.y2_star);
    out << '\n';
  }
}

TrialData read_dataset_csv(std::istream& in) {
  static const std::vector<std::string> required{"patient_id", "treat", "y0",    "y05",  "y1",
                                                 "y15",        "y2",    "sym05", "sym1", "sym15"};
  csv::Table table = csv::read(in);
  std::map<std::string, std::size_t> col;
  for (std::size_t j = 0; j < table.header.size(); ++j) col[table.header[j]] = j;
  std::vector<std::string> missing;
  for (const auto& name : required)
    if (!col.count(name)) missing.push_back(name);
  if (!missing.empty()) {
    std::string msg = "dataset schema: missing column(s)";
    for (const auto& m : missing) msg += " " + m;
    throw std::invalid_argument(msg);
  }
  TrialData trial;
  trial.has_y2_star = col.count("y2_star") > 0;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    auto num = [&](const std::string& name) { return csv::parse_number(row.at(col[name]), name, r + 2); };
    auto flag = [&](const std::string& name) {
      const double v = num(name);
      if (v != 0.0 && v != 1.0)
        throw std::invalid_argument("dataset schema: column " + name + " line " + std::to_string(r + 2) +
                                    " must be 0 or 1");
      return static_cast<int>(v);
    };
    PatientRecord p;
    p.treat = flag("treat");
    p.y0 = num("y0");
    p.y = {num("y05"), num("y1"), num("y15"), num("y2")};
    p.sym = {flag("sym05"), flag("sym1"), flag("sym15")};
    if (p.sym[0] + p.sym[1] + p.sym[2] > 1)
      throw std::invalid_argument("dataset schema: line " + std::to_string(r + 2) +
                                  " has more than one initiation flag set");
    if (trial.has_y2_star) p.y2_star = num("y2_star");
    trial.patients.push_back(p);
  }
  return trial;
}

}  // namespace gdemed
