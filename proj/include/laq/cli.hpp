#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>

#include "laq/experiment.hpp"

namespace laq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitData = 4;

struct LoadedProblem {
  engine::Problem problem;
  losses::Model model;
  /// Held-out rows for the accuracy column; empty when there is no test split.
  Eigen::MatrixXd test_features;
  Eigen::MatrixXd test_labels;
};

/// Generates or loads the problem described by `spec` for one seed.
/// Throws DataError when dataset files are missing or malformed.
LoadedProblem build_problem(const ProblemSpec& spec, std::uint64_t seed);

/// f* for a logistic problem, read from or written to `<cache>/reference/`.
double cached_reference_value(const engine::Problem& problem, const ProblemSpec& spec,
                              std::uint64_t seed, std::ostream& log);

/// `laq run|verify|dataset ...`; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace laq::cli
