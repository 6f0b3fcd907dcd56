#include <cmath>
#include <vector>

#include "doctest.h"
#include "gdemed/gest.hpp"
#include "gdemed/stochastics.hpp"
#include "oracles.hpp"

using namespace gdemed;

namespace {

struct Synthetic {
  int n = 1000;
  double init_prob = 0.08;  // per visit, among patients not yet started
  double effect = -3.0;     // added to every score after the initiation visit
  double noise = 2.0;
  double slope = 4.0;
  double drug = 1.5;  // slope reduction on the active arm
  std::uint64_t seed = 1;
};

// Scores drift upward from a random baseline; medication starts at random,
// independently of the scores, and shifts all later scores by `effect`.
// y2_star carries the unaffected two-year score.
TrialData synthetic(const Synthetic& s) {
  Stream rng(StreamKey(s.seed, {77}));
  TrialData t;
  t.has_y2_star = true;
  for (int i = 0; i < s.n; ++i) {
    PatientRecord p;
    p.treat = i % 2;
    p.y0 = 27 + 7 * rng.normal();
    int start = -1;
    for (int k = 0; k < 3 && start < 0; ++k)
      if (rng.uniform() < s.init_prob) start = k;
    if (start >= 0) p.sym[start] = 1;
    double cf = p.y0;
    for (int v = 0; v < 4; ++v) {
      cf += 0.5 * (s.slope - s.drug * p.treat) + s.noise * rng.normal();
      p.y[v] = cf + (start >= 0 && v > start ? s.effect : 0.0);
    }
    p.y2_star = cf;
    t.patients.push_back(p);
  }
  return t;
}

oracle::Ols final_ols(const TrialData& t, bool counterfactual) {
  oracle::Mat x;
  oracle::Vec y;
  for (const auto& p : t.patients) {
    x.push_back({1.0, double(p.treat), p.y0});
    y.push_back(counterfactual ? p.y2_star : p.y[3]);
  }
  return oracle::ols(x, y);
}

std::vector<EstimateResult> all_four(const TrialData& t, const GestOptions& o = {}) {
  return {estimate_established(t, o), estimate_mod1(t, o), estimate_mod2(t, o), estimate_mod3(t, o)};
}

}  // namespace

TEST_CASE("weighted average") {
  const std::vector<double> c{-2.0, -3.0}, equal{0.7, 0.7}, unequal{1.0, 2.0};
  CHECK(weighted_average(c, equal) == doctest::Approx(-2.5));
  CHECK(weighted_average(c, unequal) == doctest::Approx(-7.0 / 3.0));
  CHECK(weighted_average(c, unequal, Weighting::inverse_variance) == doctest::Approx((-2.0 - 0.75) / 1.25));
  const std::vector<double> one{4.2}, se1{0.3};
  CHECK(weighted_average(one, se1) == 4.2);
  const std::vector<double> three{1.0, 100.0, 3.0}, ses{1.0, kUnfitted, 1.0};
  CHECK(weighted_average(three, ses) == doctest::Approx(2.0));
  const std::vector<double> none{kUnfitted, kUnfitted}, bad{1.0, 0.0};
  CHECK_THROWS_AS(weighted_average(c, none), std::invalid_argument);
  CHECK_THROWS_AS(weighted_average(c, bad), std::invalid_argument);
}

TEST_CASE("method names round trip") {
  for (Method m : {Method::established, Method::mod1, Method::mod2, Method::mod3, Method::mmrm, Method::benchmark})
    CHECK(parse_method(to_string(m)) == m);
  CHECK_THROWS_AS(parse_method("mod4"), std::invalid_argument);
  CHECK(is_gest(Method::mod2));
  CHECK_FALSE(is_gest(Method::mmrm));
  CHECK_FALSE(is_gest(Method::benchmark));
}

TEST_CASE("without initiations every method is the baseline-adjusted regression") {
  Synthetic s;
  s.init_prob = 0;
  const TrialData t = synthetic(s);
  const auto ref = final_ols(t, false);
  for (const auto& r : all_four(t)) {
    CAPTURE(to_string(r.method));
    CHECK(r.theta_hat == doctest::Approx(ref.coef[1]).epsilon(1e-10));
    CHECK(r.model_se == doctest::Approx(ref.se[1]).epsilon(1e-10));
    CHECK(r.theta_hat == all_four(t)[0].theta_hat);
    CHECK(r.model_se == all_four(t)[0].model_se);
    for (double se : r.trace.se_sym) CHECK(se == kUnfitted);
  }
  const auto m3 = estimate_mod3(t);
  CHECK(m3.trace.converged);
  CHECK(m3.trace.iterations == 2);
}

TEST_CASE("planted effect removes the mediated part exactly") {
  const TrialData t = synthetic({});
  const auto ref = final_ols(t, true);
  GestOptions o;
  o.planted_effect = -3.0;
  // With every later score shifted, y2 - c * exposed is the unaffected score.
  for (const auto& r : all_four(t, o)) {
    CAPTURE(to_string(r.method));
    CHECK(r.theta_hat == doctest::Approx(ref.coef[1]).epsilon(1e-10));
    CHECK(r.model_se == doctest::Approx(ref.se[1]).epsilon(1e-10));
  }
  CHECK(estimate_mod2(t, o).theta_hat == doctest::Approx(estimate_established(t, o).theta_hat).epsilon(1e-12));
  const auto bench = estimate_benchmark(t);
  CHECK(bench.theta_hat == doctest::Approx(ref.coef[1]).epsilon(1e-10));
}

TEST_CASE("fitted effects recover an independent medication effect") {
  Synthetic s;
  s.n = 4000;
  s.seed = 2;
  const TrialData t = synthetic(s);
  const auto ref = final_ols(t, true);
  const auto est = estimate_established(t);
  for (int k = 0; k < 3; ++k) {
    CAPTURE(k);
    CHECK(std::abs(est.trace.coef_sym[k] - s.effect) < 4 * est.trace.se_sym[k]);
    CHECK(est.trace.se_sym[k] > 0);
  }
  for (const auto& r : all_four(t)) {
    CAPTURE(to_string(r.method));
    CHECK(std::abs(r.theta_hat - ref.coef[1]) < 0.5 * r.model_se);
  }
}

TEST_CASE("modification 1 finds the step change with little noise") {
  Synthetic s;
  s.noise = 0.002;
  s.drug = 0.0;
  s.init_prob = 0.15;
  s.effect = 2.5;
  s.seed = 3;
  const TrialData t = synthetic(s);
  const auto r = estimate_mod1(t);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(r.trace.coef_sym[k] - s.effect) < 1e-2);
  CHECK(std::abs(r.trace.beta_sym - s.effect) < 1e-2);
}

TEST_CASE("location shift leaves the estimates unchanged") {
  const TrialData t = synthetic({.seed = 4});
  TrialData shifted = t;
  for (auto& p : shifted.patients) {
    p.y0 += 12.5;
    for (auto& y : p.y) y += 12.5;
  }
  const auto a = all_four(t), b = all_four(shifted);
  for (std::size_t m = 0; m < a.size(); ++m) {
    CAPTURE(to_string(a[m].method));
    CHECK(std::abs(a[m].theta_hat - b[m].theta_hat) < 1e-8);
    CHECK(std::abs(a[m].model_se - b[m].model_se) < 1e-8);
  }
}

TEST_CASE("swapping the arms negates the estimate") {
  const TrialData t = synthetic({.seed = 5});
  TrialData swapped = t;
  for (auto& p : swapped.patients) p.treat = 1 - p.treat;
  const auto a = all_four(t), b = all_four(swapped);
  for (std::size_t m = 0; m < a.size(); ++m) {
    CAPTURE(to_string(a[m].method));
    CHECK(b[m].theta_hat == doctest::Approx(-a[m].theta_hat).epsilon(1e-9));
    CHECK(b[m].model_se == doctest::Approx(a[m].model_se).epsilon(1e-9));
  }
}

TEST_CASE("modification 3 iteration control") {
  const TrialData t = synthetic({.seed = 6});
  GestOptions o;
  o.mod3_tol = INFINITY;
  CHECK(estimate_mod3(t, o).trace.iterations == 2);
  CHECK(estimate_mod3(t, o).trace.converged);

  o.mod3_tol = 0;
  const auto capped = estimate_mod3(t, o);
  CHECK(capped.trace.iterations == 25);
  CHECK_FALSE(capped.trace.converged);

  o.mod3_max_iter = 200;
  const auto deep = estimate_mod3(t, o);
  CHECK(deep.trace.last_change < 1e-10);
  o.mod3_max_iter = 201;
  CHECK(std::abs(estimate_mod3(t, o).theta_hat - deep.theta_hat) < 1e-10);

  const auto def = estimate_mod3(t);
  CHECK(def.trace.converged);
  CHECK(def.trace.last_change < 1e-4);
  CHECK(std::abs(def.theta_hat - deep.theta_hat) < 1e-3);
}

TEST_CASE("joint evaluation equals the individual estimators") {
  const TrialData t = synthetic({.seed = 7});
  const std::vector<Method> ms{Method::mod3, Method::established, Method::mod1, Method::mod2};
  const auto joint = estimate_gest(t, ms);
  REQUIRE(joint.size() == 4);
  const auto single = all_four(t);
  auto find = [&](Method m) {
    for (const auto& r : single)
      if (r.method == m) return r;
    FAIL("missing");
    return EstimateResult{};
  };
  for (const auto& r : joint) {
    const auto s = find(r.method);
    CHECK(r.theta_hat == s.theta_hat);
    CHECK(r.model_se == s.model_se);
    CHECK(r.trace.iterations == s.trace.iterations);
  }
  const std::vector<Method> with_mmrm{Method::mmrm};
  CHECK_THROWS_AS(estimate_gest(t, with_mmrm), std::invalid_argument);
}

TEST_CASE("estimator errors") {
  TrialData t = synthetic({.n = 200, .seed = 8});
  t.has_y2_star = false;
  CHECK_THROWS(estimate_benchmark(t));

  TrialData twice = synthetic({.n = 200, .seed = 8});
  twice.patients[3].sym = {1, 1, 0};
  CHECK_THROWS_AS(estimate_established(twice), std::invalid_argument);

  TrialData one_arm = synthetic({.n = 200, .seed = 8});
  for (auto& p : one_arm.patients) p.treat = 1;
  CHECK_THROWS_AS(estimate_established(one_arm), EstimationError);
  CHECK_THROWS_AS(estimate_mod3(one_arm), EstimationError);
}
