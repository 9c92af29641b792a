#include "gcspatial/hpd.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace gcspatial {

namespace {

double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double std_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double floor_sd(double sd, double mean) {
  return std::max(sd, 1e-12 * (1.0 + std::abs(mean)));
}

}  // namespace

double GaussianMixture::mean() const {
  double m = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) m += weights[k] * means[k];
  return m;
}

double GaussianMixture::variance() const {
  const double m = mean();
  double second = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    second += weights[k] * (sds[k] * sds[k] + means[k] * means[k]);
  }
  return std::max(0.0, second - m * m);
}

double GaussianMixture::cdf(double x) const {
  double p = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    p += weights[k] * std_normal_cdf((x - means[k]) / floor_sd(sds[k], means[k]));
  }
  return p;
}

double GaussianMixture::pdf(double x) const {
  double d = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double s = floor_sd(sds[k], means[k]);
    d += weights[k] * std_normal_pdf((x - means[k]) / s) / s;
  }
  return d;
}

double GaussianMixture::quantile(double p) const {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double s = floor_sd(sds[k], means[k]);
    lo = std::min(lo, means[k] - 40.0 * s);
    hi = std::max(hi, means[k] + 40.0 * s);
  }
  if (p <= 0.0) return lo;
  if (p >= 1.0) return hi;
  double x = std::clamp(mean(), lo, hi);
  for (int iter = 0; iter < 200; ++iter) {
    const double f = cdf(x) - p;
    if (f > 0.0) {
      hi = x;
    } else {
      lo = x;
    }
    const double d = pdf(x);
    double next = d > 0.0 ? x - f / d : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-14 * (1.0 + std::abs(x)) || hi - lo <= 1e-14 * (1.0 + std::abs(x))) {
      return next;
    }
    x = next;
  }
  return x;
}

Interval hpd_interval(const GaussianMixture& mixture, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::domain_error("hpd_interval: level must be in (0,1)");
  const auto k = mixture.weights.size();
  if (k == 0 || mixture.means.size() != k || mixture.sds.size() != k) {
    throw std::invalid_argument("hpd_interval: malformed mixture");
  }
  std::size_t active = 0;
  std::size_t last = 0;
  for (std::size_t j = 0; j < k; ++j) {
    if (mixture.weights[j] > 0.0) {
      ++active;
      last = j;
    }
  }
  if (active == 1) {
    const double z = boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * level);
    const double half = z * mixture.sds[last];
    return {mixture.means[last] - half, mixture.means[last] + half};
  }

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t j = 0; j < k; ++j) {
    if (mixture.weights[j] <= 0.0) continue;
    const double s = floor_sd(mixture.sds[j], mixture.means[j]);
    lo = std::min(lo, mixture.means[j] - 8.0 * s);
    hi = std::max(hi, mixture.means[j] + 8.0 * s);
  }
  const int npts = kHpdLatticePoints;
  const double h = (hi - lo) / (npts - 1);
  std::vector<double> xs(npts);
  std::vector<double> cdf(npts);
  for (int i = 0; i < npts; ++i) {
    xs[i] = lo + h * i;
    cdf[i] = mixture.cdf(xs[i]);
  }
  // Lattice search with the upper end interpolated inside its cell, so the
  // width estimates are smooth enough to locate the right basin.
  int best_i = 0;
  double best_width = std::numeric_limits<double>::infinity();
  int j = 1;
  for (int i = 0; i < npts; ++i) {
    j = std::max(j, i + 1);
    while (j < npts && cdf[j] - cdf[i] < level) ++j;
    if (j == npts) break;
    const double target = cdf[i] + level;
    const double span = cdf[j] - cdf[j - 1];
    const double t = span > 0.0 ? (target - cdf[j - 1]) / span : 1.0;
    const double w = xs[j - 1] + t * h - xs[i];
    if (w < best_width) {
      best_width = w;
      best_i = i;
    }
  }

  // Continuous refinement: width(a) = F^-1(F(a) + level) - a near the lattice optimum.
  const auto width = [&](double a) {
    const double target = mixture.cdf(a) + level;
    if (target >= 1.0) return std::numeric_limits<double>::infinity();
    return mixture.quantile(target) - a;
  };
  double a = xs[std::max(0, best_i - 2)];
  double b = xs[std::min(npts - 1, best_i + 2)];
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = width(c);
  double fd = width(d);
  for (int iter = 0; iter < 80 && (b - a) > 1e-12 * (1.0 + std::abs(a)); ++iter) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = width(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = width(d);
    }
  }
  const double start = 0.5 * (a + b);
  const double refined = width(start);
  if (std::isfinite(refined)) return {start, start + refined};
  const double fallback = width(xs[best_i]);
  return {xs[best_i], xs[best_i] + fallback};
}

}  // namespace gcspatial
