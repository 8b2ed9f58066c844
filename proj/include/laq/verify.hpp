#pragma once
// Seeded property suites behind `laq verify <target>`.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "laq/engine.hpp"

namespace laq::verify {

struct CheckLine {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<std::string> suite_names();

/// Throws ConfigError for unknown targets; "all" runs every suite.
std::vector<CheckLine> run_suite(std::string_view target, std::uint64_t seed);

/// `PASS name detail` / `FAIL name detail`.
std::string format(const CheckLine& line);

// Scenario builders shared with the acceptance harness.

/// Synthetic logistic task with p = 20 (F = 10, C = 2), M = 5, N = 500.
engine::Problem reduction_problem(std::uint64_t seed);
/// Strongly convex quadratic, mu = 1, L = 10, p = 20, M = 5.
engine::Problem rate_problem(std::uint64_t seed);
/// LAQ with xi_d = 1/(16D), alpha = 1/(8L), b = 8, D = 5, t_bar = 20.
engine::RunConfig rate_config(const engine::Problem& problem, Algorithm algorithm,
                              double target_residual);
/// M = 4 workers with L_m = {0.1, 0.1, 1, 10}.
data::SyntheticQuadratic prop1_quadratic(std::uint64_t seed);
engine::RunConfig prop1_config(const engine::Problem& problem);

}  // namespace laq::verify
