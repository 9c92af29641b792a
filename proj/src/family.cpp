#include "gcspatial/family.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>

#include "gcspatial/error.hpp"
#include "gcspatial/gcdist.hpp"

namespace gcspatial {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

void unsupported(Family family) {
  throw InputError("family '" + to_string(family) + "' is reserved but not supported for fitting");
}

}  // namespace

std::string to_string(Family family) {
  switch (family) {
    case Family::GammaCount: return "gammacount";
    case Family::Poisson: return "poisson";
    case Family::Gaussian: return "gaussian";
    case Family::NegativeBinomial: return "nbinomial";
    case Family::GeneralizedPoisson: return "gpoisson";
  }
  return "unknown";
}

std::string to_string(Method method) {
  switch (method) {
    case Method::None: return "none";
    case Method::PS: return "PS";
    case Method::NPS: return "NPS";
    case Method::RHZ: return "RHZ";
    case Method::SPOCK: return "SPOCK";
    case Method::SpatialPlus: return "S+";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  const auto s = lower(name);
  if (s == "gammacount" || s == "gc" || s == "gamma-count") return Family::GammaCount;
  if (s == "poisson" || s == "pois") return Family::Poisson;
  if (s == "gaussian" || s == "normal") return Family::Gaussian;
  if (s == "nbinomial" || s == "nb" || s == "negativebinomial") return Family::NegativeBinomial;
  if (s == "gpoisson" || s == "gp" || s == "generalizedpoisson") return Family::GeneralizedPoisson;
  throw InputError("unknown family '" + std::string(name) + "'");
}

Method parse_method(std::string_view name) {
  const auto s = lower(name);
  if (s == "none") return Method::None;
  if (s == "ps") return Method::PS;
  if (s == "nps") return Method::NPS;
  if (s == "rhz") return Method::RHZ;
  if (s == "spock") return Method::SPOCK;
  if (s == "s+" || s == "spatial+" || s == "spatialplus" || s == "spatial_plus") {
    return Method::SpatialPlus;
  }
  throw InputError("unknown method '" + std::string(name) + "'");
}

bool family_is_count(Family family) { return family != Family::Gaussian; }

double family_log_lik(Family family, double y, double eta, double dispersion) {
  switch (family) {
    case Family::GammaCount:
      return gc_log_pmf_grad(dispersion, static_cast<std::int64_t>(y), eta).log_pmf;
    case Family::Poisson: {
      const double mu = std::exp(eta);
      if (!std::isfinite(mu)) return -std::numeric_limits<double>::infinity();
      return poisson_log_pmf(mu, static_cast<std::int64_t>(y));
    }
    case Family::Gaussian: {
      const double r = y - eta;
      return 0.5 * std::log(dispersion / (2.0 * std::numbers::pi)) - 0.5 * dispersion * r * r;
    }
    default: unsupported(family);
  }
  return 0.0;
}

LikelihoodTerms family_log_lik_terms(Family family, double y, double eta, double dispersion) {
  LikelihoodTerms t;
  switch (family) {
    case Family::GammaCount: {
      const auto g = gc_log_pmf_grad(dispersion, static_cast<std::int64_t>(y), eta);
      t.value = g.log_pmf;
      t.d1 = g.d1;
      t.d2 = g.d2;
      t.flat = g.flat;
      return t;
    }
    case Family::Poisson: {
      const double mu = std::exp(eta);
      if (!std::isfinite(mu)) {
        t.value = -std::numeric_limits<double>::infinity();
        t.flat = true;
        return t;
      }
      t.value = poisson_log_pmf(mu, static_cast<std::int64_t>(y));
      t.d1 = y - mu;
      t.d2 = -mu;
      return t;
    }
    case Family::Gaussian: {
      const double r = y - eta;
      t.value = 0.5 * std::log(dispersion / (2.0 * std::numbers::pi)) - 0.5 * dispersion * r * r;
      t.d1 = dispersion * r;
      t.d2 = -dispersion;
      return t;
    }
    default: unsupported(family);
  }
  return t;
}

}  // namespace gcspatial
