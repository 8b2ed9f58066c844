#pragma once

#include <array>
#include <string>
#include <string_view>

namespace laq {

enum class Algorithm { gd, qgd, lag, laq, sgd, slaq };

inline constexpr std::array<Algorithm, 6> kAllAlgorithms = {
    Algorithm::gd, Algorithm::qgd, Algorithm::lag, Algorithm::laq, Algorithm::sgd, Algorithm::slaq};

/// Uploads carry b-bit innovations.
constexpr bool is_quantized(Algorithm a) {
  return a == Algorithm::qgd || a == Algorithm::laq || a == Algorithm::slaq;
}

/// Workers may skip uploads.
constexpr bool is_lazy(Algorithm a) {
  return a == Algorithm::lag || a == Algorithm::laq || a == Algorithm::slaq;
}

/// Workers use minibatch gradients.
constexpr bool is_stochastic(Algorithm a) {
  return a == Algorithm::sgd || a == Algorithm::slaq;
}

std::string to_string(Algorithm a);

/// Throws ConfigError for unknown names.
Algorithm parse_algorithm(std::string_view name);

}  // namespace laq
