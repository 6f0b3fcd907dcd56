#pragma once

#include <cmath>

namespace gdemed::normal {

inline constexpr double kInvSqrt2Pi = 0.398942280401432677939946059934;
inline constexpr double kSqrt1_2 = 0.707106781186547524400844362105;

inline double pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

inline double cdf(double x) { return 0.5 * std::erfc(-x * kSqrt1_2); }

/// Upper tail 1 - Phi(x), accurate for large positive x.
inline double ccdf(double x) { return 0.5 * std::erfc(x * kSqrt1_2); }

/// Inverse standard normal CDF (Wichura AS241, ~1e-16 relative accuracy).
double quantile(double p);

}  // namespace gdemed::normal
