#pragma once

// Small-dimension regression kernels: least squares with classical standard
// errors and probit maximum likelihood. Templated on the scalar type.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "gdemed/normal.hpp"

namespace gdemed {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Thrown when a design column is (numerically) a linear combination of the
/// columns before it.
class SingularDesign : public std::runtime_error {
 public:
  explicit SingularDesign(Eigen::Index column)
      : std::runtime_error("singular design: column " + std::to_string(column) +
                           " is linearly dependent on earlier columns"),
        column_(column) {}
  [[nodiscard]] Eigen::Index column() const { return column_; }

 private:
  Eigen::Index column_;
};

template <typename Scalar>
struct LinearFit {
  VectorX<Scalar> coefs;
  VectorX<Scalar> ses;
  Scalar sigma2 = 0;
  Eigen::Index df = 0;
  MatrixX<Scalar> xtx_inv;
};

/// Householder QR of a fixed design, reusable across responses.
template <typename Scalar>
class OlsSolver {
 public:
  OlsSolver() = default;

  template <typename Derived>
  explicit OlsSolver(const Eigen::MatrixBase<Derived>& design) {
    compute(design);
  }

  template <typename Derived>
  OlsSolver& compute(const Eigen::MatrixBase<Derived>& design) {
    const Eigen::Index n = design.rows();
    const Eigen::Index p = design.cols();
    if (n <= p) throw std::invalid_argument("ols: need more rows than columns");
    qr_.compute(design);
    const auto& r = qr_.matrixQR();
    // Frobenius norm as the scale of the design.
    const Scalar tol = Scalar(1e-10) * design.norm();
    for (Eigen::Index j = 0; j < p; ++j)
      if (!(std::abs(r(j, j)) > tol)) throw SingularDesign(j);
    const auto rtri = r.topLeftCorner(p, p).template triangularView<Eigen::Upper>();
    MatrixX<Scalar> rinv = rtri.solve(MatrixX<Scalar>::Identity(p, p));
    xtx_inv_ = rinv * rinv.transpose();
    rows_ = n;
    return *this;
  }

  [[nodiscard]] Eigen::Index rows() const { return rows_; }
  [[nodiscard]] Eigen::Index cols() const { return xtx_inv_.cols(); }
  [[nodiscard]] const MatrixX<Scalar>& xtx_inv() const { return xtx_inv_; }

  template <typename Derived>
  [[nodiscard]] VectorX<Scalar> coefficients(const Eigen::MatrixBase<Derived>& y) const {
    return qr_.solve(y);
  }

  /// Full fit against a response; `design` must be the matrix given to compute().
  template <typename DerivedX, typename DerivedY>
  [[nodiscard]] LinearFit<Scalar> fit(const Eigen::MatrixBase<DerivedX>& design,
                                      const Eigen::MatrixBase<DerivedY>& y) const {
    LinearFit<Scalar> out;
    out.coefs = qr_.solve(y);
    out.df = rows_ - cols();
    const Scalar rss = (y - design * out.coefs).squaredNorm();
    out.sigma2 = rss / Scalar(out.df);
    out.xtx_inv = xtx_inv_;
    out.ses = (out.sigma2 * xtx_inv_.diagonal().array()).sqrt().matrix();
    return out;
  }

  /// Coefficient j and its classical standard error, without forming the full fit.
  template <typename DerivedX, typename DerivedY>
  [[nodiscard]] std::pair<Scalar, Scalar> coef_se(const Eigen::MatrixBase<DerivedX>& design,
                                                  const Eigen::MatrixBase<DerivedY>& y, Eigen::Index j) const {
    const VectorX<Scalar> b = qr_.solve(y);
    const Scalar rss = (y - design * b).squaredNorm();
    const Scalar sigma2 = rss / Scalar(rows_ - cols());
    return {b[j], std::sqrt(sigma2 * xtx_inv_(j, j))};
  }

 private:
  Eigen::HouseholderQR<MatrixX<Scalar>> qr_;
  MatrixX<Scalar> xtx_inv_;
  Eigen::Index rows_ = 0;
};

/// Ordinary least squares with classical (homoskedastic) standard errors.
/// Callers supply the intercept column explicitly.
template <typename DerivedX, typename DerivedY>
LinearFit<typename DerivedX::Scalar> ols(const Eigen::MatrixBase<DerivedX>& design,
                                         const Eigen::MatrixBase<DerivedY>& y) {
  using Scalar = typename DerivedX::Scalar;
  if (design.rows() != y.rows()) throw std::invalid_argument("ols: design/response row mismatch");
  return OlsSolver<Scalar>(design).fit(design, y);
}

template <typename Scalar>
struct ProbitFit {
  VectorX<Scalar> coefs;
  bool converged = false;
  bool separation = false;
  int iterations = 0;
  Scalar loglik = -std::numeric_limits<Scalar>::infinity();
};

namespace detail {

// Linear predictors are clamped so both tails stay representable.
inline constexpr double kEtaLimit = 37.0;

// Log-likelihood; `tail` receives P(Y = y_i) per row.
template <typename Scalar>
Scalar probit_loglik(const VectorX<Scalar>& eta, const VectorX<Scalar>& y, VectorX<Scalar>& tail) {
  Scalar ll = 0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double e = std::clamp(static_cast<double>(eta[i]), -kEtaLimit, kEtaLimit);
    const double pr = y[i] > Scalar(0.5) ? normal::cdf(e) : normal::ccdf(e);
    tail[i] = Scalar(pr);
    ll += std::log(pr);
  }
  return ll;
}

}  // namespace detail

/// Probit maximum likelihood by Newton iteration with step halving.
/// At most `max_iter` iterations; stops when the relative log-likelihood
/// change drops below `rel_tol`. Fitted probabilities numerically at 0 or 1
/// mark (quasi-)separation and leave the fit flagged as not converged.
template <typename DerivedX, typename DerivedY>
ProbitFit<typename DerivedX::Scalar> probit_fit(const Eigen::MatrixBase<DerivedX>& design,
                                                const Eigen::MatrixBase<DerivedY>& y, int max_iter = 100,
                                                double rel_tol = 1e-10) {
  using Scalar = typename DerivedX::Scalar;
  const Eigen::Index n = design.rows();
  const Eigen::Index p = design.cols();
  if (y.rows() != n) throw std::invalid_argument("probit: design/response row mismatch");
  if (n <= p) throw std::invalid_argument("probit: need more rows than columns");
  const Scalar ones = y.sum();
  if (ones <= Scalar(0) || ones >= Scalar(n)) throw std::invalid_argument("probit: response has a single class");

  const VectorX<Scalar> yv = y;
  ProbitFit<Scalar> fit;
  fit.coefs = VectorX<Scalar>::Zero(p);
  VectorX<Scalar> eta = VectorX<Scalar>::Zero(n);
  VectorX<Scalar> tail(n), trial_tail(n);
  Scalar ll = detail::probit_loglik<Scalar>(eta, yv, tail);

  VectorX<Scalar> grad(n), curv(n);
  for (int iter = 1; iter <= max_iter; ++iter) {
    fit.iterations = iter;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = std::clamp(static_cast<double>(eta[i]), -detail::kEtaLimit, detail::kEtaLimit);
      const double dens = normal::pdf(e);
      if (yv[i] > Scalar(0.5)) {
        const double lambda = dens / static_cast<double>(tail[i]);
        grad[i] = Scalar(lambda);
        curv[i] = Scalar(lambda * (e + lambda));
      } else {
        const double mu = dens / static_cast<double>(tail[i]);
        grad[i] = Scalar(-mu);
        curv[i] = Scalar(mu * (mu - e));
      }
    }
    const VectorX<Scalar> score = design.transpose() * grad;
    const MatrixX<Scalar> info = design.transpose() * curv.asDiagonal() * design;
    Eigen::LDLT<MatrixX<Scalar>> ldlt(info);
    VectorX<Scalar> step = ldlt.solve(score);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) break;

    Scalar step_size = 1;
    VectorX<Scalar> trial_coefs;
    Scalar trial_ll = ll;
    for (int halving = 0; halving < 40; ++halving) {
      trial_coefs = fit.coefs + step_size * step;
      eta = design * trial_coefs;
      trial_ll = detail::probit_loglik<Scalar>(eta, yv, trial_tail);
      if (trial_ll >= ll - Scalar(1e-12) * std::abs(ll)) break;
      step_size /= 2;
    }
    const Scalar change = std::abs(trial_ll - ll);
    fit.coefs = trial_coefs;
    ll = trial_ll;
    tail.swap(trial_tail);
    if (change < Scalar(rel_tol) * (std::abs(ll) + Scalar(rel_tol))) {
      fit.converged = true;
      break;
    }
  }
  eta = design * fit.coefs;
  fit.loglik = detail::probit_loglik<Scalar>(eta, yv, tail);
  fit.separation = (eta.array().abs() > Scalar(8)).any();
  if (fit.separation) fit.converged = false;
  return fit;
}

/// Fitted probabilities Phi(design * coefs).
template <typename Scalar, typename DerivedX>
VectorX<Scalar> predict_probit(const ProbitFit<Scalar>& fit, const Eigen::MatrixBase<DerivedX>& design) {
  if (design.cols() != fit.coefs.size()) throw std::invalid_argument("predict_probit: column count mismatch");
  const VectorX<Scalar> eta = design * fit.coefs;
  return eta.unaryExpr([](Scalar e) { return Scalar(normal::cdf(static_cast<double>(e))); });
}

}  // namespace gdemed
