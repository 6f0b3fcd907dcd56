#include "gdemed/mmrm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

namespace gdemed {

LongData set_post_ie_missing(const TrialData& trial, MaskRule rule) {
  LongData out;
  out.reserve(trial.size() * 4);
  for (std::size_t i = 0; i < trial.size(); ++i) {
    const auto& p = trial.patients[i];
    int first_masked = 4;
    for (int k = 0; k < kIeVisits; ++k)
      if (p.sym[k]) {
        first_masked = rule == MaskRule::at_initiation ? k : k + 1;
        break;
      }
    for (int v = 0; v < 4; ++v) {
      LongRecord r{static_cast<int>(i), p.treat, v, std::nullopt};
      if (v < first_masked) r.y = p.y[v];
      out.push_back(r);
    }
  }
  return out;
}

namespace {

using Mat8 = Eigen::Matrix<double, 8, 8>;
using Vec8 = Eigen::Matrix<double, 8, 1>;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Patients sharing an arm and an observation pattern share V and X, so the
// likelihood only needs per-group sums of y and y y'.
struct Group {
  int arm = 0;
  std::vector<int> visits;
  double n = 0;
  VectorXd sum_y;
  MatrixXd sum_yy;
  MatrixXd x;  // k x 8 design in cell-means coding
};

struct Problem {
  std::vector<Group> groups;
  double n_obs = 0;
};

Problem build_problem(const LongData& data) {
  std::map<int, std::pair<int, std::array<std::optional<double>, 4>>> by_patient;
  for (const auto& r : data) {
    if (r.visit < 0 || r.visit > 3) throw std::invalid_argument("mmrm: visit index out of range");
    auto& entry = by_patient[r.patient];
    entry.first = r.arm;
    entry.second[static_cast<std::size_t>(r.visit)] = r.y;
  }
  std::map<std::pair<int, int>, Group> groups;
  std::array<std::array<int, 4>, 2> cell_counts{};
  Problem prob;
  for (const auto& [id, entry] : by_patient) {
    const auto& [arm, ys] = entry;
    int mask = 0;
    for (int v = 0; v < 4; ++v)
      if (ys[static_cast<std::size_t>(v)]) mask |= 1 << v;
    if (mask == 0) continue;
    auto& g = groups[{arm, mask}];
    if (g.visits.empty()) {
      g.arm = arm;
      for (int v = 0; v < 4; ++v)
        if (mask & (1 << v)) g.visits.push_back(v);
      const auto k = static_cast<Eigen::Index>(g.visits.size());
      g.sum_y = VectorXd::Zero(k);
      g.sum_yy = MatrixXd::Zero(k, k);
      g.x = MatrixXd::Zero(k, 8);
      for (Eigen::Index a = 0; a < k; ++a) {
        g.x(a, g.visits[static_cast<std::size_t>(a)]) = 1.0;
        if (arm) g.x(a, 4 + g.visits[static_cast<std::size_t>(a)]) = 1.0;
      }
    }
    VectorXd y(static_cast<Eigen::Index>(g.visits.size()));
    for (std::size_t a = 0; a < g.visits.size(); ++a) y[static_cast<Eigen::Index>(a)] = *ys[g.visits[a]];
    g.n += 1;
    g.sum_y += y;
    g.sum_yy.noalias() += y * y.transpose();
    for (int v : g.visits) ++cell_counts[arm ? 1 : 0][static_cast<std::size_t>(v)];
    prob.n_obs += static_cast<double>(g.visits.size());
  }
  for (int a = 0; a < 2; ++a)
    for (int v = 0; v < 4; ++v)
      if (cell_counts[a][v] == 0)
        throw EstimabilityError("mmrm: no observed value for arm " + std::to_string(a) + " at visit " +
                                std::to_string(v));
  for (auto& [key, g] : groups) prob.groups.push_back(std::move(g));
  return prob;
}

struct Evaluation {
  double loglik = -INFINITY;
  Eigen::Matrix4d grad = Eigen::Matrix4d::Zero();  // d loglik / d sigma (symmetric form)
  Vec8 beta = Vec8::Zero();
  Mat8 a_inv = Mat8::Zero();
  bool ok = false;
};

Evaluation evaluate(const Problem& prob, const Eigen::Matrix4d& sigma, bool with_grad) {
  Evaluation ev;
  struct Cache {
    MatrixXd w;
    double logdet;
  };
  std::vector<Cache> cache;
  cache.reserve(prob.groups.size());
  Mat8 a = Mat8::Zero();
  Vec8 b = Vec8::Zero();
  double logdet_v = 0;
  for (const auto& g : prob.groups) {
    const auto k = static_cast<Eigen::Index>(g.visits.size());
    MatrixXd v(k, k);
    for (Eigen::Index r = 0; r < k; ++r)
      for (Eigen::Index c = 0; c < k; ++c) v(r, c) = sigma(g.visits[static_cast<std::size_t>(r)], g.visits[static_cast<std::size_t>(c)]);
    Eigen::LLT<MatrixXd> llt(v);
    if (llt.info() != Eigen::Success) return ev;
    Cache cc;
    cc.w = llt.solve(MatrixXd::Identity(k, k));
    cc.logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    logdet_v += g.n * cc.logdet;
    const MatrixXd xtw = g.x.transpose() * cc.w;
    a.noalias() += g.n * xtw * g.x;
    b.noalias() += xtw * g.sum_y;
    cache.push_back(std::move(cc));
  }
  Eigen::LLT<Mat8> llt_a(a);
  if (llt_a.info() != Eigen::Success) throw EstimabilityError("mmrm: fixed-effect information is singular");
  ev.a_inv = llt_a.solve(Mat8::Identity());
  ev.beta = ev.a_inv * b;
  const double logdet_a = 2.0 * llt_a.matrixL().toDenseMatrix().diagonal().array().log().sum();

  double quad = 0;
  for (std::size_t gi = 0; gi < prob.groups.size(); ++gi) {
    const auto& g = prob.groups[gi];
    const auto& w = cache[gi].w;
    const VectorXd mu = g.x * ev.beta;
    const MatrixXd m = g.sum_yy - mu * g.sum_y.transpose() - g.sum_y * mu.transpose() + g.n * mu * mu.transpose();
    quad += (w * m).trace();
    if (with_grad) {
      const MatrixXd wx = w * g.x;
      const MatrixXd gg = 0.5 * (-g.n * w + w * m * w + g.n * wx * ev.a_inv * wx.transpose());
      const auto k = g.visits.size();
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t c = 0; c < k; ++c)
          ev.grad(g.visits[r], g.visits[c]) += gg(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }
  }
  ev.loglik = -0.5 * (logdet_v + logdet_a + quad + (prob.n_obs - 8.0) * std::log(2.0 * std::numbers::pi));
  ev.ok = std::isfinite(ev.loglik);
  return ev;
}

// Parameters: log-diagonal and strict lower triangle of the Cholesky factor.
using Params = Eigen::Matrix<double, 10, 1>;

Eigen::Matrix4d factor_from(const Params& th) {
  Eigen::Matrix4d l = Eigen::Matrix4d::Zero();
  int idx = 0;
  for (int j = 0; j < 4; ++j)
    for (int i = j; i < 4; ++i) l(i, j) = (i == j) ? std::exp(th[idx++]) : th[idx++];
  return l;
}

Params params_from(const Eigen::Matrix4d& sigma) {
  const Eigen::Matrix4d l = sigma.llt().matrixL();
  Params th;
  int idx = 0;
  for (int j = 0; j < 4; ++j)
    for (int i = j; i < 4; ++i) th[idx++] = (i == j) ? std::log(l(i, j)) : l(i, j);
  return th;
}

Params chain_rule(const Eigen::Matrix4d& grad_sigma, const Eigen::Matrix4d& l) {
  const Eigen::Matrix4d gl = 2.0 * grad_sigma * l;
  Params g;
  int idx = 0;
  for (int j = 0; j < 4; ++j)
    for (int i = j; i < 4; ++i) g[idx++] = (i == j) ? gl(i, j) * l(i, j) : gl(i, j);
  return g;
}

Eigen::Matrix4d starting_sigma(const Problem& prob) {
  // Arm-by-visit means from the available data, then pairwise covariances.
  std::array<std::array<double, 4>, 2> sum{}, cnt{};
  for (const auto& g : prob.groups)
    for (std::size_t a = 0; a < g.visits.size(); ++a) {
      sum[g.arm][g.visits[a]] += g.sum_y[static_cast<Eigen::Index>(a)];
      cnt[g.arm][g.visits[a]] += g.n;
    }
  Eigen::Matrix4d s = Eigen::Matrix4d::Zero(), n = Eigen::Matrix4d::Zero();
  for (const auto& g : prob.groups) {
    const auto k = g.visits.size();
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < k; ++c) {
        const int vr = g.visits[r], vc = g.visits[c];
        const double mr = sum[g.arm][vr] / cnt[g.arm][vr];
        const double mc = sum[g.arm][vc] / cnt[g.arm][vc];
        const auto ri = static_cast<Eigen::Index>(r), ci = static_cast<Eigen::Index>(c);
        s(vr, vc) += g.sum_yy(ri, ci) - mr * g.sum_y[ci] - mc * g.sum_y[ri] + g.n * mr * mc;
        n(vr, vc) += g.n;
      }
  }
  Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) cov(r, c) = n(r, c) > 1 ? s(r, c) / (n(r, c) - 1) : (r == c ? 1.0 : 0.0);
  for (int r = 0; r < 4; ++r) cov(r, r) = std::max(cov(r, r), 1e-6);
  if (cov.llt().info() == Eigen::Success && cov.ldlt().vectorD().minCoeff() > 1e-8 * cov.diagonal().maxCoeff())
    return cov;
  return Eigen::Matrix4d(cov.diagonal().asDiagonal());
}

}  // namespace

double mmrm_reml_loglik(const LongData& data, const Eigen::Matrix4d& sigma) {
  const Problem prob = build_problem(data);
  return evaluate(prob, sigma, false).loglik;
}

MmrmFit fit_mmrm(const LongData& data, const MmrmOptions& options) {
  const Problem prob = build_problem(data);
  Eigen::Matrix4d sigma0 = starting_sigma(prob);
  if (options.start && options.start->llt().info() == Eigen::Success) sigma0 = *options.start;
  Params th = params_from(sigma0);
  Eigen::Matrix4d l = factor_from(th);
  Evaluation ev = evaluate(prob, l * l.transpose(), true);
  if (!ev.ok) throw std::runtime_error("mmrm: REML criterion undefined at the starting covariance");
  Params grad = chain_rule(ev.grad, l);

  // BFGS on the negative REML criterion with Armijo backtracking.
  Eigen::Matrix<double, 10, 10> h_inv = Eigen::Matrix<double, 10, 10>::Identity() * 1e-2;
  MmrmFit fit;
  for (int iter = 1; iter <= options.max_iter; ++iter) {
    fit.iterations = iter;
    Params dir = h_inv * grad;  // ascent direction for the log-likelihood
    if (dir.dot(grad) <= 0) {
      h_inv.setIdentity();
      h_inv *= 1e-2;
      dir = h_inv * grad;
    }
    double step = 1.0;
    Params th_new;
    Evaluation ev_new;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      th_new = th + step * dir;
      const Eigen::Matrix4d l_new = factor_from(th_new);
      ev_new = evaluate(prob, l_new * l_new.transpose(), true);
      if (ev_new.ok && ev_new.loglik >= ev.loglik + 1e-4 * step * dir.dot(grad)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const Eigen::Matrix4d l_new = factor_from(th_new);
    const Params grad_new = chain_rule(ev_new.grad, l_new);
    const double change = std::abs(ev_new.loglik - ev.loglik);

    // Update for minimizing -loglik: s = dx, y = -(g_new - g).
    const Params s = th_new - th;
    const Params y = grad - grad_new;
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      if (iter == 1) h_inv = Eigen::Matrix<double, 10, 10>::Identity() * (sy / y.squaredNorm());
      const double rho = 1.0 / sy;
      const auto eye = Eigen::Matrix<double, 10, 10>::Identity();
      h_inv = (eye - rho * s * y.transpose()) * h_inv * (eye - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    th = th_new;
    ev = ev_new;
    grad = grad_new;
    l = l_new;
    const double scale = std::max(1.0, std::abs(ev.loglik));
    if (change < options.rel_tol * scale && grad.cwiseAbs().maxCoeff() < 1e-6 * scale) break;
    if (grad.cwiseAbs().maxCoeff() < 1e-10 * scale) break;
  }
  const double scale = std::max(1.0, std::abs(ev.loglik));
  fit.sigma = l * l.transpose();
  fit.fixed_effects = ev.beta;
  fit.fixed_cov = ev.a_inv;
  fit.reml_loglik = ev.loglik;
  fit.grad_norm = grad.cwiseAbs().maxCoeff() / scale;
  fit.converged = fit.grad_norm < 1e-6;
  return fit;
}

Contrast mmrm_contrast_t2(const MmrmFit& fit) {
  return {fit.fixed_effects[7], std::sqrt(fit.fixed_cov(7, 7))};
}

}  // namespace gdemed
