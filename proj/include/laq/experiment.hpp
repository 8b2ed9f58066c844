#pragma once
// Experiment descriptions: a flat `key = value` text format with optional
// `[algorithm]` sections, built-in presets, and the layering
//
//   command-line flag  >  experiment file ([algorithm] section > common)  >  default
//
// that turns them into one RunPlan per (algorithm, seed).

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "laq/algorithm.hpp"
#include "laq/data.hpp"
#include "laq/engine.hpp"

namespace laq::cli {

/// Normalized key -> raw value text.
using Settings = std::map<std::string, std::string>;

struct ExperimentFile {
  Settings common;
  std::map<Algorithm, Settings> sections;
};

/// Lowercase, '-' to '_', and the plural "algorithms" folded onto "algorithm".
std::string normalize_key(std::string_view key);

/// Keys accepted at top level, and the subset accepted inside sections.
const std::vector<std::string>& known_keys();
const std::vector<std::string>& section_keys();

/// Throws ConfigError naming `source` and the line for unknown keys,
/// unknown sections, duplicate keys and malformed lines.
ExperimentFile parse_experiment(std::istream& in, const std::string& source);
ExperimentFile load_experiment(const std::filesystem::path& path);

std::vector<std::string> preset_names();
/// Throws ConfigError for unknown names.
ExperimentFile preset(std::string_view name);
/// Text form of a preset, in the experiment-file syntax.
std::string preset_text(std::string_view name);

/// `top` wins over `base`.
ExperimentFile overlay(const ExperimentFile& base, const ExperimentFile& top);

struct ProblemSpec {
  std::string model = "logistic";
  std::string dataset = "mnist";
  std::size_t workers = 10;
  data::PartitionMode partition = data::PartitionMode::uniform;
  Eigen::Index dimension = 20;  // quadratic p
  double mu = 1.0;
  double smoothness = 10.0;
  double lambda = 0.01;
  Eigen::Index samples = 500;  // synthetic logistic training rows
  Eigen::Index features = 10;
  Eigen::Index classes = 2;
  std::filesystem::path cache_dir;

  /// Identifies the generated or loaded problem for a given seed.
  std::string key(std::uint64_t seed) const;
};

struct RunPlan {
  engine::RunConfig config;
  ProblemSpec problem;
  /// alpha = 1/(8L) once L is known.
  bool recipe_alpha = false;
  std::filesystem::path out;
};

/// Throws ConfigError for malformed values or inconsistent settings.
std::vector<RunPlan> resolve(const ExperimentFile& file, const Settings& flags);

}  // namespace laq::cli
