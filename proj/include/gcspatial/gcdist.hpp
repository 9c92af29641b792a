#pragma once

// Gamma-count distribution: the number of renewal events in (0, t] when the
// waiting times are i.i.d. Gamma(alpha, rate gamma).
//
//   P(Y = y) = G(y alpha, gamma t) - G((y + 1) alpha, gamma t)
//
// where G is the regularized lower incomplete gamma function and G(0, x) = 1.
// alpha < 1 gives over-dispersion, alpha > 1 under-dispersion and alpha = 1
// is Poisson(gamma t).

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace gcspatial {

struct GcParams {
  double alpha = 1.0;
  double gamma_rate = 1.0;
  double exposure = 1.0;

  /// Throws std::domain_error unless all three fields are finite and > 0.
  void validate() const;

  double waiting_time_mean() const { return alpha / gamma_rate; }
  double waiting_time_variance() const { return alpha / (gamma_rate * gamma_rate); }
};

/// Logs of both regularized incomplete gamma tails, P(a, x) and Q(a, x).
struct IncompleteGammaLogs {
  double log_lower;
  double log_upper;
};

/// log P(a, x) and log Q(a, x). Uses the power series for x < a + 1 and the
/// Lentz continued fraction otherwise; the prefactor x^a e^-x / Gamma(a + 1)
/// is evaluated in Stirling form for large a to avoid cancellation.
IncompleteGammaLogs incomplete_gamma_logs(double a, double x);

/// Regularized lower incomplete gamma P(a, x), with P(0, x) = 1.
double reg_lower_gamma(double a, double x);
double log_reg_lower_gamma(double a, double x);
double log_reg_upper_gamma(double a, double x);

/// Probability mass; values below 1e-300 are reported as exactly 0.
double gc_pmf(const GcParams& params, std::int64_t y);

/// Log probability mass, computed as a log-space difference of incomplete
/// gamma tails. Returns -infinity only when the difference is not
/// representable.
double gc_log_pmf(const GcParams& params, std::int64_t y);

/// Log-likelihood and its first two derivatives with respect to the linear
/// predictor eta, under the link gamma = alpha * exp(eta) * exposure.
struct GcLinkDerivatives {
  double log_pmf = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  /// Set when the pmf underflowed and the derivatives are meaningless.
  bool flat = false;
};

GcLinkDerivatives gc_log_pmf_grad(double alpha, std::int64_t y, double eta,
                                  double exposure = 1.0);

inline constexpr double kDefaultMeanTailTol = 1e-10;
inline constexpr std::int64_t kMeanSeriesCap = 1'000'000;

/// E(Y) = sum_{k>=1} G(k alpha, gamma t). Terms are summed until they fall
/// below tail_tol / 100. Throws ConvergenceError when the cap is reached.
double gc_mean(const GcParams& params, double tail_tol = kDefaultMeanTailTol);

/// One renewal draw: counts gamma waiting-time partial sums in (0, t].
std::int64_t gc_draw(const GcParams& params, std::mt19937_64& engine);

/// n independent draws; deterministic given the seed.
std::vector<std::int64_t> gc_sample(const GcParams& params, std::uint64_t seed,
                                    std::size_t n);

/// Poisson log pmf, used for the explicit Poisson family.
double poisson_log_pmf(double mean, std::int64_t y);

}  // namespace gcspatial
