#include "gdemed/stochastics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gdemed/normal.hpp"

namespace gdemed {

namespace {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53U;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57U;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9U;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85U;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

}  // namespace

std::uint64_t hash_key(const StreamKey& key) {
  std::uint64_t h = splitmix64(key.master_seed ^ 0x6A09E667F3BCC909ULL);
  for (std::uint64_t p : key.path) h = splitmix64(h ^ splitmix64(p + 0x3C6EF372FE94F82BULL));
  return h;
}

Stream::Stream(const StreamKey& key) {
  const std::uint64_t h = hash_key(key);
  key_ = {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
}

void Stream::refill() {
  block_ = philox4x32_10({static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32), 0U, 0U},
                         key_);
  ++counter_;
  next_ = 0;
}

Stream::result_type Stream::operator()() {
  if (next_ >= 4) refill();
  const std::uint64_t lo = block_[next_];
  const std::uint64_t hi = block_[next_ + 1];
  next_ += 2;
  return (hi << 32) | lo;
}

double Stream::normal() {
  for (;;) {
    const double u = 2.0 * uniform() - 1.0;
    const double v = 2.0 * uniform() - 1.0;
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
  }
}

double Stream::gamma(double shape) {
  if (!(shape > 0.0)) throw std::domain_error("gamma: shape must be positive");
  if (shape < 1.0) {
    const double g = gamma(shape + 1.0);
    return g * std::pow(uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::pair<double, double> sample_truncated_bivariate_normal(const TruncatedBivariateNormalSpec& spec, Stream& stream,
                                                            long max_attempts) {
  Eigen::LLT<Eigen::Matrix2d> llt(spec.cov);
  if (llt.info() != Eigen::Success || !spec.cov.isApprox(spec.cov.transpose()))
    throw std::domain_error("truncated bivariate normal: covariance is not symmetric positive definite");
  const Eigen::Matrix2d L = llt.matrixL();
  for (long attempt = 0; attempt < max_attempts; ++attempt) {
    const Eigen::Vector2d z(stream.normal(), stream.normal());
    const Eigen::Vector2d draw = spec.mean + L * z;
    if (spec.first_coord_bounds.contains(draw[0])) return {draw[0], draw[1]};
  }
  throw std::runtime_error("truncated bivariate normal: rejection budget of " + std::to_string(max_attempts) +
                           " draws exhausted; bounds carry too little mass");
}

double sample_beta_mean_tau(double mean, double tau, Stream& stream) {
  if (!(mean > 0.0 && mean < 1.0)) throw std::domain_error("beta: mean must lie in (0,1)");
  if (!(tau > 0.0)) throw std::domain_error("beta: tau must be positive");
  const double a = stream.gamma(mean * tau);
  const double b = stream.gamma((1.0 - mean) * tau);
  const double x = a / (a + b);
  // Keep the draw strictly inside (0,1) so the link stays finite.
  return std::clamp(x, 1e-300, std::nextafter(1.0, 0.0));
}

double sample_truncated_normal(double mean, double sd, double lo, double hi, Stream& stream) {
  if (!(lo < hi)) throw std::domain_error("truncated normal: requires lo < hi");
  if (!(sd >= 0.0)) throw std::domain_error("truncated normal: sd must be non-negative");
  if (sd == 0.0) return std::clamp(mean, lo, hi);
  double a = (lo - mean) / sd;
  double b = (hi - mean) / sd;
  // Work in the lower tail where the CDF keeps its relative precision.
  const bool flip = a > 0.0;
  if (flip) {
    std::swap(a, b);
    a = -a;
    b = -b;
  }
  const double pa = normal::cdf(a);
  const double pb = normal::cdf(b);
  if (!(pb > pa)) throw std::runtime_error("truncated normal: interval carries no representable mass");
  const double u = pa + stream.uniform() * (pb - pa);
  double z = normal::quantile(u);
  z = std::clamp(z, a, b);
  if (flip) z = -z;
  return std::clamp(mean + sd * z, lo, hi);
}

}  // namespace gdemed
