#include "gcspatial/parallel.hpp"

#include <cstdlib>
#include <string>

#include "gcspatial/error.hpp"

namespace gcspatial {

int resolve_jobs(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("GCSPATIAL_JOBS"); env != nullptr && *env != '\0') {
    try {
      const int v = std::stoi(env);
      if (v > 0) return v;
    } catch (const std::exception&) {
    }
    throw InputError(std::string("GCSPATIAL_JOBS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

}  // namespace gcspatial
