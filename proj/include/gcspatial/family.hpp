#pragma once

#include <string>
#include <string_view>

namespace gcspatial {

/// Observation families. NegativeBinomial and GeneralizedPoisson are
/// reserved schema values; fitting them raises InputError.
enum class Family { GammaCount, Poisson, Gaussian, NegativeBinomial, GeneralizedPoisson };

/// Spatial structure / deconfounding strategy for one fit.
///   None        no spatial term
///   PS          ICAR on the adjacency graph
///   NPS         RW2D on a lattice snapped from centroids
///   RHZ         ICAR restricted to the orthogonal complement of the design
///   SPOCK       ICAR on a knn graph of design-projected centroids
///   SpatialPlus RW2D, with confounded covariates replaced by stage-1 residuals
enum class Method { None, PS, NPS, RHZ, SPOCK, SpatialPlus };

std::string to_string(Family family);
std::string to_string(Method method);
Family parse_family(std::string_view name);
Method parse_method(std::string_view name);

/// Observation log-likelihood and derivatives in the linear predictor.
struct LikelihoodTerms {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  bool flat = false;
};

/// `dispersion` is alpha for GammaCount, the noise precision for Gaussian and
/// ignored for Poisson. eta already contains any offset.
double family_log_lik(Family family, double y, double eta, double dispersion);
LikelihoodTerms family_log_lik_terms(Family family, double y, double eta, double dispersion);

bool family_is_count(Family family);

}  // namespace gcspatial
