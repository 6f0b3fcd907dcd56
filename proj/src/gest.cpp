#include "gdemed/gest.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>

#include "gdemed/regress.hpp"

namespace gdemed {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::established: return "established";
    case Method::mod1: return "mod1";
    case Method::mod2: return "mod2";
    case Method::mod3: return "mod3";
    case Method::mmrm: return "mmrm";
    case Method::benchmark: return "benchmark";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::established, Method::mod1, Method::mod2, Method::mod3, Method::mmrm, Method::benchmark})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

bool is_gest(Method m) {
  return m == Method::established || m == Method::mod1 || m == Method::mod2 || m == Method::mod3;
}

double weighted_average(std::span<const double> coefs, std::span<const double> ses, Weighting weighting) {
  if (coefs.size() != ses.size() || coefs.empty())
    throw std::invalid_argument("weighted_average: need equal, non-zero lengths");
  double num = 0, den = 0;
  for (std::size_t k = 0; k < coefs.size(); ++k) {
    if (ses[k] == kUnfitted) continue;
    if (!(ses[k] > 0)) throw std::invalid_argument("weighted_average: standard errors must be positive");
    const double w = weighting == Weighting::inverse_se ? 1.0 / ses[k] : 1.0 / (ses[k] * ses[k]);
    num += w * coefs[k];
    den += w;
  }
  if (den == 0) throw std::invalid_argument("weighted_average: no fitted entries");
  return num / den;
}

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Columns {
  Index n = 0;
  VectorXd one, z, y0;
  std::array<VectorXd, 4> y;  // 0.5, 1, 1.5, 2
  std::array<VectorXd, 3> s;  // initiation at 0.5, 1, 1.5
  VectorXd exposed_any;       // s[0] + s[1] + s[2]
};

Columns make_columns(const TrialData& trial) {
  Columns c;
  c.n = static_cast<Index>(trial.size());
  c.one = VectorXd::Ones(c.n);
  c.z.resize(c.n);
  c.y0.resize(c.n);
  for (auto& v : c.y) v.resize(c.n);
  for (auto& v : c.s) v.resize(c.n);
  for (Index i = 0; i < c.n; ++i) {
    const auto& p = trial.patients[static_cast<std::size_t>(i)];
    if (p.sym[0] + p.sym[1] + p.sym[2] > 1)
      throw std::invalid_argument("gest: patient " + std::to_string(i + 1) + " has more than one initiation");
    c.z[i] = p.treat;
    c.y0[i] = p.y0;
    for (int v = 0; v < 4; ++v) c.y[v][i] = p.y[v];
    for (int k = 0; k < 3; ++k) c.s[k][i] = p.sym[k];
  }
  c.exposed_any = c.s[0] + c.s[1] + c.s[2];
  return c;
}

enum class Role { required, target, optional };

struct Term {
  const VectorXd* col;
  Role role;
  const char* name;
};

VectorXd gather(const VectorXd& v, const std::vector<Index>& rows) {
  if (rows.empty()) return v;
  VectorXd out(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Index>(i)] = v[rows[i]];
  return out;
}

// Least-squares stage on a list of terms, optionally restricted to a row
// subset. Optional terms that vanish on the rows or are aliased with earlier
// terms are dropped, mirroring how R's lm reports them as NA.
class StageDesign {
 public:
  StageDesign(std::vector<Term> terms, std::vector<Index> rows) : rows_(std::move(rows)) {
    std::vector<Term> kept;
    for (const auto& t : terms) {
      if (t.role == Role::optional && gather(*t.col, rows_).cwiseAbs().maxCoeff() == 0.0) continue;
      kept.push_back(t);
    }
    for (;;) {
      const Index nrow = rows_.empty() ? kept.front().col->size() : static_cast<Index>(rows_.size());
      x_.resize(nrow, static_cast<Index>(kept.size()));
      for (std::size_t j = 0; j < kept.size(); ++j) x_.col(static_cast<Index>(j)) = gather(*kept[j].col, rows_);
      if (nrow <= x_.cols()) throw EstimationError("gest: too few patients for a stage model");
      try {
        solver_.compute(x_);
        break;
      } catch (const SingularDesign& e) {
        const auto j = static_cast<std::size_t>(e.column());
        if (kept[j].role != Role::optional)
          throw EstimationError(std::string("gest: column '") + kept[j].name + "' is aliased in a stage model");
        kept.erase(kept.begin() + static_cast<std::ptrdiff_t>(j));
      }
    }
    for (std::size_t j = 0; j < kept.size(); ++j)
      if (kept[j].role == Role::target) target_ = static_cast<Index>(j);
  }

  [[nodiscard]] std::pair<double, double> target(const VectorXd& response) const {
    return solver_.coef_se(x_, gather(response, rows_), target_);
  }
  [[nodiscard]] std::pair<double, double> coef(const VectorXd& response, Index j) const {
    return solver_.coef_se(x_, gather(response, rows_), j);
  }

 private:
  std::vector<Index> rows_;
  MatrixXd x_;
  OlsSolver<double> solver_;
  Index target_ = -1;
};

VectorXd propensity(const Columns& c, const VectorXd& target, std::initializer_list<const VectorXd*> covariates) {
  std::vector<const VectorXd*> cols{&c.one};
  for (const VectorXd* cov : covariates)
    if (cov->cwiseAbs().maxCoeff() != 0.0) cols.push_back(cov);
  for (;;) {
    MatrixXd x(c.n, static_cast<Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) x.col(static_cast<Index>(j)) = *cols[j];
    try {
      OlsSolver<double> check(x);
    } catch (const SingularDesign& e) {
      if (e.column() == 0) throw EstimationError("gest: propensity design is degenerate");
      cols.erase(cols.begin() + e.column());
      continue;
    }
    const auto fit = probit_fit(x, target);
    return predict_probit(fit, x);
  }
}

bool degenerate(const VectorXd& s, const std::vector<Index>& rows) {
  const double total = rows.empty() ? s.sum() : gather(s, rows).sum();
  const double count = rows.empty() ? static_cast<double>(s.size()) : static_cast<double>(rows.size());
  return total == 0.0 || total == count;
}

struct StageResult {
  bool active = false;
  double coef = 0;
  double se = kUnfitted;
};

// Shared per-data-set state: propensity scores and stage designs are
// independent of the de-mediated response, so they are built once.
class Analysis {
 public:
  Analysis(const Analysis&) = delete;
  Analysis& operator=(const Analysis&) = delete;

  Analysis(const TrialData& trial, const GestOptions& options) : c_(make_columns(trial)), opt_(options) {
    if (c_.n < 4) throw EstimationError("gest: too few patients");
    final_.emplace(std::vector<Term>{{&c_.one, Role::required, "(Intercept)"},
                                     {&c_.z, Role::required, "treat"},
                                     {&c_.y0, Role::optional, "y0"}},
                   std::vector<Index>{});
  }

  [[nodiscard]] const Columns& cols() const { return c_; }
  [[nodiscard]] const GestOptions& options() const { return opt_; }

  // Established stage k (0 -> Sym0.5, 1 -> Sym1, 2 -> Sym1.5).
  const std::optional<StageDesign>& established(int k) {
    auto& slot = est_[k];
    if (slot.built) return slot.design;
    slot.built = true;
    if (degenerate(c_.s[k], {})) return slot.design;
    if (k == 2) {
      slot.p = propensity(c_, c_.s[2], {&c_.s[1], &c_.s[0], &c_.y[2]});
      slot.design.emplace(std::vector<Term>{{&c_.one, Role::required, "(Intercept)"},
                                            {&c_.z, Role::required, "treat"},
                                            {&c_.y[2], Role::optional, "y15"},
                                            {&c_.s[2], Role::target, "sym15"},
                                            {&c_.s[1], Role::optional, "sym1"},
                                            {&c_.s[0], Role::optional, "sym05"},
                                            {&slot.p, Role::optional, "p_sym"}},
                          std::vector<Index>{});
    } else if (k == 1) {
      slot.p = propensity_sym1();
      slot.design.emplace(std::vector<Term>{{&c_.one, Role::required, "(Intercept)"},
                                            {&c_.z, Role::required, "treat"},
                                            {&c_.y[1], Role::optional, "y1"},
                                            {&c_.s[1], Role::target, "sym1"},
                                            {&c_.s[0], Role::optional, "sym05"},
                                            {&slot.p, Role::optional, "p_sym"}},
                          std::vector<Index>{});
    } else {
      slot.p = propensity(c_, c_.s[0], {&c_.y[0]});
      slot.design.emplace(std::vector<Term>{{&c_.one, Role::required, "(Intercept)"},
                                            {&c_.z, Role::required, "treat"},
                                            {&c_.y[0], Role::optional, "y05"},
                                            {&c_.s[0], Role::target, "sym05"},
                                            {&slot.p, Role::optional, "p_sym"}},
                          std::vector<Index>{});
    }
    return slot.design;
  }

  StageResult fit_established(int k, const VectorXd& response) {
    const auto& d = established(k);
    if (!d) return {};
    const auto [coef, se] = d->target(response);
    return {true, coef, se};
  }

  // Modification 1 proximal fits: Sym0.5 -> Y1, Sym1 -> Y1.5, Sym1.5 -> Y2.
  StageResult fit_proximal(int k) {
    if (k == 0) return fit_established(0, c_.y[1]);
    if (k == 1) {
      std::vector<Index> rows;
      for (Index i = 0; i < c_.n; ++i)
        if (c_.s[0][i] == 0.0) rows.push_back(i);
      if (degenerate(c_.s[1], rows) || degenerate(c_.s[1], {})) return {};
      if (!est_[1].built) established(1);
      const StageDesign d(std::vector<Term>{{&c_.one, Role::required, "(Intercept)"},
                                            {&c_.z, Role::required, "treat"},
                                            {&c_.y[1], Role::optional, "y1"},
                                            {&c_.s[1], Role::target, "sym1"},
                                            {&c_.s[0], Role::optional, "sym05"},
                                            {&est_[1].p, Role::optional, "p_sym"}},
                          rows);
      const auto [coef, se] = d.target(c_.y[2]);
      return {true, coef, se};
    }
    std::vector<Index> rows;
    if (opt_.mod1_restrict_sym15) {
      for (Index i = 0; i < c_.n; ++i)
        if (c_.s[0][i] == 0.0 && c_.s[1][i] == 0.0) rows.push_back(i);
    }
    if (degenerate(c_.s[2], rows) || degenerate(c_.s[2], {})) return {};
    mod1_p15_ = propensity(c_, c_.s[2], {&c_.y[2], &c_.s[1]});
    const StageDesign d(std::vector<Term>{{&c_.one, Role::required, "(Intercept)"},
                                          {&c_.z, Role::required, "treat"},
                                          {&c_.y[2], Role::optional, "y15"},
                                          {&c_.s[2], Role::target, "sym15"},
                                          {&c_.s[1], Role::optional, "sym1"},
                                          {&mod1_p15_, Role::optional, "p_sym"}},
                        rows);
    const auto [coef, se] = d.target(c_.y[3]);
    return {true, coef, se};
  }

  std::pair<double, double> final_fit(const VectorXd& response) const { return final_->coef(response, 1); }

  [[nodiscard]] double demediation_effect(const StageResult& r) const {
    if (opt_.planted_effect) return *opt_.planted_effect;
    return r.active ? r.coef : 0.0;
  }

 private:
  VectorXd propensity_sym1() { return propensity(c_, c_.s[1], {&c_.s[0], &c_.y[1]}); }

  struct Slot {
    bool built = false;
    VectorXd p;
    std::optional<StageDesign> design;
  };

  Columns c_;
  GestOptions opt_;
  std::array<Slot, 3> est_;
  std::optional<StageDesign> final_;
  VectorXd mod1_p15_;
};

void record(DemediationTrace& trace, int k, const StageResult& r) {
  trace.coef_sym[k] = r.active ? r.coef : 0.0;
  trace.se_sym[k] = r.active ? r.se : kUnfitted;
}

EstimateResult finish(Method m, const Analysis& a, const VectorXd& response, DemediationTrace trace) {
  const auto [theta, se] = a.final_fit(response);
  return {m, theta, se, trace};
}

// Steps (i)-(ii) of the sequential approach; returns R0.5 and fills the trace.
VectorXd sequential_pass(Analysis& a, DemediationTrace& trace) {
  const Columns& c = a.cols();
  VectorXd r = c.y[3];
  for (int k = 2; k >= 0; --k) {
    const StageResult s = a.fit_established(k, r);
    record(trace, k, s);
    if (s.active || a.options().planted_effect) r -= a.demediation_effect(s) * c.s[k];
  }
  return r;
}

double averaged_effect(const Analysis& a, const DemediationTrace& trace) {
  if (a.options().planted_effect) return *a.options().planted_effect;
  if (std::all_of(trace.se_sym.begin(), trace.se_sym.end(), [](double s) { return s == kUnfitted; })) return 0.0;
  return weighted_average(trace.coef_sym, trace.se_sym, a.options().weighting);
}

EstimateResult run_established(Analysis& a) {
  DemediationTrace trace;
  const VectorXd r = sequential_pass(a, trace);
  return finish(Method::established, a, r, trace);
}

EstimateResult run_mod1(Analysis& a) {
  DemediationTrace trace;
  for (int k = 0; k < 3; ++k) record(trace, k, a.fit_proximal(k));
  trace.beta_sym = averaged_effect(a, trace);
  const Columns& c = a.cols();
  const VectorXd r = c.y[3] - trace.beta_sym * c.exposed_any;
  return finish(Method::mod1, a, r, trace);
}

EstimateResult run_mod2(Analysis& a, const DemediationTrace* sequential_trace) {
  DemediationTrace trace;
  if (sequential_trace)
    trace = *sequential_trace;
  else
    sequential_pass(a, trace);
  trace.beta_sym = averaged_effect(a, trace);
  const Columns& c = a.cols();
  const VectorXd r = c.y[3] - trace.beta_sym * c.exposed_any;
  return finish(Method::mod2, a, r, trace);
}

EstimateResult run_mod3(Analysis& a, const EstimateResult* established) {
  const GestOptions& opt = a.options();
  const Columns& c = a.cols();
  EstimateResult prev_est = established ? *established : run_established(a);
  DemediationTrace prev = prev_est.trace;
  double theta_prev = prev_est.theta_hat;
  double theta = theta_prev, se = prev_est.model_se;

  DemediationTrace trace = prev;
  trace.converged = false;
  int j = 1;
  while (j < opt.mod3_max_iter) {
    ++j;
    DemediationTrace cur = prev;
    VectorXd r = c.y[3];
    double last_avg = 0.0;
    for (int k = 2; k >= 0; --k) {
      const StageResult s = a.fit_established(k, r);
      record(cur, k, s);
      // Current coefficient at k, previous-iteration coefficients elsewhere.
      std::array<double, 3> coefs = prev.coef_sym;
      std::array<double, 3> ses = prev.se_sym;
      coefs[k] = cur.coef_sym[k];
      ses[k] = cur.se_sym[k];
      double avg = 0.0;
      if (opt.planted_effect)
        avg = *opt.planted_effect;
      else if (std::any_of(ses.begin(), ses.end(), [](double v) { return v != kUnfitted; }))
        avg = weighted_average(coefs, ses, opt.weighting);
      last_avg = avg;
      r -= avg * c.s[k];
    }
    std::tie(theta, se) = a.final_fit(r);
    const double change = std::abs(theta - theta_prev);
    trace = cur;
    trace.converged = false;
    trace.beta_sym = last_avg;
    trace.iterations = j;
    trace.last_change = change;
    prev = cur;
    theta_prev = theta;
    if (change < opt.mod3_tol) {
      trace.converged = true;
      break;
    }
  }
  if (j == 1) trace.iterations = 1;
  return {Method::mod3, theta, se, trace};
}

}  // namespace

std::vector<EstimateResult> estimate_gest(const TrialData& trial, std::span<const Method> methods,
                                          const GestOptions& options) {
  Analysis a(trial, options);
  std::optional<EstimateResult> established;
  auto need_established = [&]() -> const EstimateResult& {
    if (!established) established = run_established(a);
    return *established;
  };
  std::vector<EstimateResult> out;
  out.reserve(methods.size());
  for (Method m : methods) {
    switch (m) {
      case Method::established: out.push_back(need_established()); break;
      case Method::mod1: out.push_back(run_mod1(a)); break;
      case Method::mod2: out.push_back(run_mod2(a, &need_established().trace)); break;
      case Method::mod3: out.push_back(run_mod3(a, &need_established())); break;
      case Method::benchmark: out.push_back(estimate_benchmark(trial)); break;
      default: throw std::invalid_argument("estimate_gest: not a g-estimation method: " + std::string(to_string(m)));
    }
  }
  return out;
}

EstimateResult estimate_established(const TrialData& trial, const GestOptions& options) {
  Analysis a(trial, options);
  return run_established(a);
}

EstimateResult estimate_mod1(const TrialData& trial, const GestOptions& options) {
  Analysis a(trial, options);
  return run_mod1(a);
}

EstimateResult estimate_mod2(const TrialData& trial, const GestOptions& options) {
  Analysis a(trial, options);
  return run_mod2(a, nullptr);
}

EstimateResult estimate_mod3(const TrialData& trial, const GestOptions& options) {
  Analysis a(trial, options);
  return run_mod3(a, nullptr);
}

EstimateResult estimate_benchmark(const TrialData& trial) {
  if (!trial.has_y2_star) throw std::invalid_argument("benchmark: data set carries no y2_star");
  const auto n = static_cast<Index>(trial.size());
  if (n < 4) throw EstimationError("benchmark: too few patients");
  MatrixXd x(n, 3);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    const auto& p = trial.patients[static_cast<std::size_t>(i)];
    x.row(i) << 1.0, p.treat, p.y0;
    y[i] = p.y2_star;
  }
  try {
    const auto fit = ols(x, y);
    return {Method::benchmark, fit.coefs[1], fit.ses[1], {}};
  } catch (const SingularDesign& e) {
    throw EstimationError(std::string("benchmark: ") + e.what());
  }
}

}  // namespace gdemed
