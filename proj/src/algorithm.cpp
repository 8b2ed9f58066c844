#include "laq/algorithm.hpp"

#include "laq/errors.hpp"

namespace laq {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::gd: return "gd";
    case Algorithm::qgd: return "qgd";
    case Algorithm::lag: return "lag";
    case Algorithm::laq: return "laq";
    case Algorithm::sgd: return "sgd";
    case Algorithm::slaq: return "slaq";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view name) {
  for (Algorithm a : kAllAlgorithms) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown algorithm '" + std::string(name) +
                    "' (expected gd, qgd, lag, laq, sgd or slaq)");
}

}  // namespace laq
