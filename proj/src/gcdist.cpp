#include "gcspatial/gcdist.hpp"

#include <boost/random/gamma_distribution.hpp>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "gcspatial/error.hpp"

namespace gcspatial {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kTiny = 1e-300;
constexpr int kMaxIncGammaIter = 200'000;

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) {
    throw std::domain_error(std::string("incomplete gamma: non-finite ") + name);
  }
}

// lgamma(a + 1) - [(a + 1/2) log a - a + log(2 pi)/2], valid for a >= 10.
double stirling_remainder(double a) {
  const double s = 1.0 / a;
  const double s2 = s * s;
  return s * (1.0 / 12.0 -
              s2 * (1.0 / 360.0 -
                    s2 * (1.0 / 1260.0 -
                          s2 * (1.0 / 1680.0 - s2 * (1.0 / 1188.0 - s2 * 691.0 / 360360.0)))));
}

// log of x^a e^-x / Gamma(a + 1).
double log_power_prefactor(double a, double x) {
  if (a < 10.0) {
    return a * std::log(x) - x - std::lgamma(a + 1.0);
  }
  const double u = (x - a) / a;
  return a * (std::log1p(u) - u) - 0.5 * std::log(2.0 * std::numbers::pi * a) -
         stirling_remainder(a);
}

// log(1 - exp(v)) for v <= 0.
double log1mexp(double v) {
  if (v >= 0.0) return kNegInf;
  if (v > -std::numbers::ln2) return std::log(-std::expm1(v));
  return std::log1p(-std::exp(v));
}

// Q(a, x) for a < 1, x < 2 without the 1 - P cancellation:
// Q = 1 - x^a/Gamma(a+1) - x^a/Gamma(a+1) * a * sum_{n>=1} (-x)^n / (n! (a+n)).
double small_shape_upper(double a, double x) {
  const double log_lead = a * std::log(x) - std::lgamma(a + 1.0);
  const double lead = std::exp(log_lead);
  double term = 1.0;
  double sum = 0.0;
  for (int n = 1; n < kMaxIncGammaIter; ++n) {
    term *= -x / n;
    const double contrib = term / (a + n);
    sum += contrib;
    if (std::abs(contrib) < std::abs(sum) * kEps * 0.5) break;
  }
  return -std::expm1(log_lead) - lead * a * sum;
}

}  // namespace

void GcParams::validate() const {
  if (!(std::isfinite(alpha) && alpha > 0.0)) {
    throw std::domain_error("GcParams: alpha must be finite and > 0");
  }
  if (!(std::isfinite(gamma_rate) && gamma_rate > 0.0)) {
    throw std::domain_error("GcParams: gamma_rate must be finite and > 0");
  }
  if (!(std::isfinite(exposure) && exposure > 0.0)) {
    throw std::domain_error("GcParams: exposure must be finite and > 0");
  }
}

IncompleteGammaLogs incomplete_gamma_logs(double a, double x) {
  require_finite(a, "shape");
  require_finite(x, "argument");
  if (a < 0.0 || x < 0.0) {
    throw std::domain_error("incomplete gamma: negative argument");
  }
  if (a == 0.0) return {0.0, kNegInf};
  if (x == 0.0) return {kNegInf, 0.0};

  const double log_pref = log_power_prefactor(a, x);

  if (x < a + 1.0) {
    double term = 1.0;
    double sum = 1.0;
    int n = 1;
    for (; n < kMaxIncGammaIter; ++n) {
      term *= x / (a + n);
      sum += term;
      if (term < sum * kEps * 0.5) break;
    }
    if (n == kMaxIncGammaIter) {
      throw ConvergenceError("incomplete gamma series did not converge");
    }
    const double log_p = log_pref + std::log(sum);
    double log_q;
    if (log_p > -std::numbers::ln2 && a < 1.0 && x < 2.0) {
      log_q = std::log(small_shape_upper(a, x));
    } else {
      log_q = log1mexp(log_p);
    }
    return {log_p, log_q};
  }

  // Modified Lentz evaluation of the continued fraction for Q.
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  int i = 1;
  for (; i < kMaxIncGammaIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  if (i == kMaxIncGammaIter) {
    throw ConvergenceError("incomplete gamma continued fraction did not converge");
  }
  const double log_q = std::log(a) + log_pref + std::log(h);
  return {log1mexp(log_q), log_q};
}

double reg_lower_gamma(double a, double x) {
  return std::exp(incomplete_gamma_logs(a, x).log_lower);
}

double log_reg_lower_gamma(double a, double x) {
  return incomplete_gamma_logs(a, x).log_lower;
}

double log_reg_upper_gamma(double a, double x) {
  return incomplete_gamma_logs(a, x).log_upper;
}

namespace {

// log(G(a, x) - G(b, x)) for a < b, choosing whichever tail keeps the
// subtraction away from 1.
double log_tail_difference(const IncompleteGammaLogs& lo, const IncompleteGammaLogs& hi) {
  if (lo.log_lower < -std::numbers::ln2) {
    return lo.log_lower + log1mexp(hi.log_lower - lo.log_lower);
  }
  if (hi.log_upper == kNegInf) return kNegInf;
  return hi.log_upper + log1mexp(lo.log_upper - hi.log_upper);
}

void require_count(std::int64_t y) {
  if (y < 0) throw std::domain_error("gamma-count: negative count");
}

}  // namespace

double gc_log_pmf(const GcParams& params, std::int64_t y) {
  params.validate();
  require_count(y);
  const double x = params.gamma_rate * params.exposure;
  const double yd = static_cast<double>(y);
  const auto lo = incomplete_gamma_logs(yd * params.alpha, x);
  const auto hi = incomplete_gamma_logs((yd + 1.0) * params.alpha, x);
  return log_tail_difference(lo, hi);
}

double gc_pmf(const GcParams& params, std::int64_t y) {
  const double p = std::exp(gc_log_pmf(params, y));
  return p < 1e-300 ? 0.0 : p;
}

GcLinkDerivatives gc_log_pmf_grad(double alpha, std::int64_t y, double eta, double exposure) {
  require_count(y);
  GcLinkDerivatives out;
  const double gamma = alpha * std::exp(eta) * exposure;
  if (!(std::isfinite(gamma) && gamma > 0.0 && alpha > 0.0)) {
    out.log_pmf = kNegInf;
    out.flat = true;
    return out;
  }
  const double yd = static_cast<double>(y);
  const double a = yd * alpha;
  const double b = (yd + 1.0) * alpha;
  const auto lo = incomplete_gamma_logs(a, gamma);
  const auto hi = incomplete_gamma_logs(b, gamma);
  const double log_f = log_tail_difference(lo, hi);
  out.log_pmf = log_f;
  if (!std::isfinite(log_f)) {
    out.flat = true;
    return out;
  }
  const double log_gamma = std::log(gamma);
  // Gamma densities at gamma with shapes a and b, relative to f.
  const double ra =
      y == 0 ? 0.0 : std::exp((a - 1.0) * log_gamma - gamma - std::lgamma(a) - log_f);
  const double rb = std::exp((b - 1.0) * log_gamma - gamma - std::lgamma(b) - log_f);
  const double d1 = gamma * (ra - rb);
  const double curvature =
      (y == 0 ? 0.0 : ra * ((a - 1.0) - gamma) * gamma) - rb * ((b - 1.0) - gamma) * gamma;
  out.d1 = d1;
  out.d2 = d1 + curvature - d1 * d1;
  if (!(std::isfinite(out.d1) && std::isfinite(out.d2))) out.flat = true;
  return out;
}

double gc_mean(const GcParams& params, double tail_tol) {
  params.validate();
  if (!(tail_tol > 0.0 && tail_tol <= 1e-4)) {
    throw std::domain_error("gc_mean: tail_tol must lie in (0, 1e-4]");
  }
  const double x = params.gamma_rate * params.exposure;
  double sum = 0.0;
  for (std::int64_t k = 1; k <= kMeanSeriesCap; ++k) {
    const double term = reg_lower_gamma(static_cast<double>(k) * params.alpha, x);
    sum += term;
    if (term < tail_tol * 1e-2) return sum;
  }
  throw ConvergenceError("gc_mean: series truncation cap reached");
}

std::int64_t gc_draw(const GcParams& params, std::mt19937_64& engine) {
  boost::random::gamma_distribution<double> waiting(params.alpha, 1.0 / params.gamma_rate);
  double arrival = 0.0;
  std::int64_t count = 0;
  while (true) {
    arrival += waiting(engine);
    if (arrival > params.exposure) return count;
    ++count;
  }
}

std::vector<std::int64_t> gc_sample(const GcParams& params, std::uint64_t seed, std::size_t n) {
  params.validate();
  if (n == 0) throw std::domain_error("gc_sample: n must be >= 1");
  std::mt19937_64 engine(seed);
  std::vector<std::int64_t> out(n);
  for (auto& v : out) v = gc_draw(params, engine);
  return out;
}

double poisson_log_pmf(double mean, std::int64_t y) {
  require_count(y);
  if (mean == 0.0) return y == 0 ? 0.0 : kNegInf;
  const double yd = static_cast<double>(y);
  return yd * std::log(mean) - mean - std::lgamma(yd + 1.0);
}

}  // namespace gcspatial
