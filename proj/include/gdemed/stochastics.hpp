#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace gdemed {

/// Identifies one reproducible random stream: a master seed plus a path such
/// as {scenario, trial, patient, purpose}.
struct StreamKey {
  std::uint64_t master_seed = 0;
  std::vector<std::uint64_t> path;

  StreamKey() = default;
  StreamKey(std::uint64_t seed, std::initializer_list<std::uint64_t> p) : master_seed(seed), path(p) {}
  StreamKey(std::uint64_t seed, std::vector<std::uint64_t> p) : master_seed(seed), path(std::move(p)) {}

  /// Key for a sub-stream one level below this one.
  [[nodiscard]] StreamKey child(std::uint64_t index) const {
    StreamKey k = *this;
    k.path.push_back(index);
    return k;
  }

  friend bool operator==(const StreamKey&, const StreamKey&) = default;
};

/// Counter-based generator (Philox4x32-10) keyed by a hash of a StreamKey.
/// Satisfies UniformRandomBitGenerator.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(const StreamKey& key);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  /// Standard normal (Marsaglia polar method, no cached second variate).
  double normal();

  /// Gamma(shape, 1) via Marsaglia-Tsang.
  double gamma(double shape);

  bool bernoulli(double p) { return uniform() < p; }

 private:
  void refill();

  std::array<std::uint32_t, 2> key_{};
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int next_ = 4;
};

[[nodiscard]] inline Stream derive_stream(const StreamKey& key) { return Stream(key); }

/// 64-bit digest of (master_seed, path). Exposed for tests.
[[nodiscard]] std::uint64_t hash_key(const StreamKey& key);

struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  [[nodiscard]] bool contains(double x) const { return x >= lo && x <= hi; }
};

struct TruncatedBivariateNormalSpec {
  Eigen::Vector2d mean{0.0, 0.0};
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
  Interval first_coord_bounds;
};

/// Joint Gaussian draw, redrawn until the first coordinate lies in bounds.
/// Throws std::runtime_error once `max_attempts` draws have been rejected.
std::pair<double, double> sample_truncated_bivariate_normal(const TruncatedBivariateNormalSpec& spec, Stream& stream,
                                                            long max_attempts = 1'000'000);

/// Beta(mean*tau, (1-mean)*tau) draw.
double sample_beta_mean_tau(double mean, double tau, Stream& stream);

/// N(mean, sd^2) conditioned on [lo, hi] via inverse CDF. sd == 0 clamps the mean.
double sample_truncated_normal(double mean, double sd, double lo, double hi, Stream& stream);

}  // namespace gdemed
