#pragma once

#include <vector>

namespace gcspatial {

/// Finite mixture of univariate normals; used for grid-mixed posterior
/// marginals.
struct GaussianMixture {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> sds;

  double mean() const;
  double variance() const;
  double cdf(double x) const;
  double pdf(double x) const;
  /// Smallest x with cdf(x) >= p.
  double quantile(double p) const;
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;

  bool contains(double x) const { return lower <= x && x <= upper; }
  double width() const { return upper - lower; }
};

inline constexpr int kHpdLatticePoints = 2048;

/// Shortest interval holding at least `level` mass. Located on a 2048-point
/// lattice spanning every component's mean +- 8 sd, then refined with a
/// continuous search around the best lattice interval. Restricted to single
/// intervals, so multimodal marginals get the shortest covering interval.
Interval hpd_interval(const GaussianMixture& mixture, double level);

}  // namespace gcspatial
