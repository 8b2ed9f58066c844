#include "laq/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include "laq/criterion.hpp"
#include "laq/data.hpp"
#include "laq/dataset_store.hpp"
#include "laq/errors.hpp"

namespace laq::cli {

namespace {

const std::map<std::string, std::string, std::less<>>& presets() {
  static const std::map<std::string, std::string, std::less<>> table = {
      {"paper-gd-suite",
       "model = logistic\n"
       "dataset = mnist\n"
       "workers = 10\n"
       "algorithm = gd, qgd, lag, laq\n"
       "alpha = 0.02\n"
       "bits = 3\n"
       "bigD = 10\n"
       "xi = 0.08\n"
       "max_staleness = 100\n"
       "target_residual = 1e-6\n"
       "iters = 10000\n"},
      {"paper-sgd-suite",
       "model = logistic\n"
       "dataset = mnist\n"
       "workers = 10\n"
       "algorithm = sgd, slaq\n"
       "minibatch = 500\n"
       "alpha = 0.008\n"
       "bits = 3\n"
       "bigD = 10\n"
       "xi = 0.08\n"
       "max_staleness = 100\n"
       "iters = 1000\n"},
  };
  return table;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& text) {
  double value = 0.0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return value;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  std::uint64_t value = 0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

class Layers {
 public:
  explicit Layers(std::vector<const Settings*> layers) : layers_(std::move(layers)) {}

  const std::string* find(const std::string& key) const {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      if (auto hit = (*it)->find(key); hit != (*it)->end()) return &hit->second;
    }
    return nullptr;
  }
  std::string text(const std::string& key, std::string fallback) const {
    const auto* v = find(key);
    return v ? *v : fallback;
  }
  double number(const std::string& key, double fallback) const {
    const auto* v = find(key);
    return v ? parse_double(key, *v) : fallback;
  }
  std::uint64_t count(const std::string& key, std::uint64_t fallback) const {
    const auto* v = find(key);
    return v ? parse_unsigned(key, *v) : fallback;
  }
  bool flag(const std::string& key, bool fallback) const {
    const auto* v = find(key);
    return v ? parse_bool(key, *v) : fallback;
  }

 private:
  std::vector<const Settings*> layers_;
};

Eigen::Index positive_index(const Layers& l, const std::string& key, std::uint64_t fallback) {
  const std::uint64_t v = l.count(key, fallback);
  if (v < 1) throw ConfigError(key + " must be >= 1");
  return static_cast<Eigen::Index>(v);
}

std::vector<double> resolve_xi(const Layers& l) {
  const auto* d_text = l.find("bigd");
  const auto* xi_text = l.find("xi");
  std::optional<std::size_t> depth;
  if (d_text) depth = static_cast<std::size_t>(parse_unsigned("bigD", *d_text));
  if (!xi_text) return criterion::uniform_xi(depth.value_or(10), 0.8);
  if (*xi_text == "recipe") {
    const std::size_t d = depth.value_or(10);
    return criterion::uniform_xi(d, 1.0 / 16.0);
  }
  const auto items = split_list(*xi_text);
  if (items.size() == 1) {
    const double v = parse_double("xi", items[0]);
    return std::vector<double>(depth.value_or(10), v);
  }
  std::vector<double> xi;
  for (const auto& item : items) xi.push_back(parse_double("xi", item));
  if (depth && *depth != xi.size()) {
    throw ConfigError("xi lists " + std::to_string(xi.size()) + " values but bigD = " +
                      std::to_string(*depth));
  }
  return xi;
}

}  // namespace

std::string normalize_key(std::string_view key) {
  std::string out;
  for (char c : key) {
    out += c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (out == "algorithms") out = "algorithm";
  if (out == "seeds") out = "seed";
  return out;
}

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "algorithm", "model",       "dataset",     "workers",  "partition",     "seed",
      "iters",     "alpha",       "bits",        "bigd",     "xi",            "max_staleness",
      "target_residual", "minibatch", "out",     "cache_dir", "p",            "mu",
      "l",         "lambda",      "samples",     "features", "classes",       "lyapunov",
      "descent_check"};
  return keys;
}

const std::vector<std::string>& section_keys() {
  static const std::vector<std::string> keys = {
      "iters", "alpha", "bits", "bigd", "xi", "max_staleness", "target_residual", "minibatch",
      "lyapunov", "descent_check"};
  return keys;
}

ExperimentFile parse_experiment(std::istream& in, const std::string& source) {
  ExperimentFile file;
  Settings* current = &file.common;
  const std::vector<std::string>* allowed = &known_keys();
  std::string line;
  std::size_t number = 0;
  auto fail = [&](const std::string& what) {
    throw ConfigError(source + ":" + std::to_string(number) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string text = trim(line);
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']') fail("unterminated section header");
      const std::string name = trim(std::string_view(text).substr(1, text.size() - 2));
      Algorithm alg{};
      try {
        alg = parse_algorithm(name);
      } catch (const ConfigError&) {
        fail("unknown section [" + name + "]; sections name an algorithm");
      }
      if (file.sections.contains(alg)) fail("section [" + name + "] repeated");
      current = &file.sections[alg];
      allowed = &section_keys();
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = normalize_key(trim(std::string_view(text).substr(0, eq)));
    const std::string value = trim(std::string_view(text).substr(eq + 1));
    if (key.empty()) fail("empty key");
    if (std::find(allowed->begin(), allowed->end(), key) == allowed->end()) {
      fail(allowed == &known_keys() ? "unknown key '" + key + "'"
                                    : "key '" + key + "' is not allowed inside a section");
    }
    if (value.empty()) fail("key '" + key + "' has no value");
    if (!current->emplace(key, value).second) fail("key '" + key + "' repeated");
  }
  return file;
}

ExperimentFile load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open experiment file " + path.string());
  return parse_experiment(in, path.string());
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [name, text] : presets()) names.push_back(name);
  return names;
}

std::string preset_text(std::string_view name) {
  const auto it = presets().find(name);
  if (it == presets().end()) {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
  }
  return it->second;
}

ExperimentFile preset(std::string_view name) {
  std::istringstream in(preset_text(name));
  return parse_experiment(in, "preset " + std::string(name));
}

ExperimentFile overlay(const ExperimentFile& base, const ExperimentFile& top) {
  ExperimentFile out = base;
  for (const auto& [k, v] : top.common) out.common[k] = v;
  for (const auto& [alg, section] : top.sections) {
    for (const auto& [k, v] : section) out.sections[alg][k] = v;
  }
  return out;
}

std::string ProblemSpec::key(std::uint64_t seed) const {
  std::ostringstream out;
  out.precision(17);
  out << model << '_' << dataset << "_lambda" << lambda << "_seed" << seed;
  if (model == "quadratic") {
    out << "_p" << dimension << "_M" << workers << "_mu" << mu << "_L" << smoothness;
  } else if (dataset == "synthetic") {
    out << "_N" << samples << "_F" << features << "_C" << classes;
  }
  return out.str();
}

std::vector<RunPlan> resolve(const ExperimentFile& file, const Settings& flags) {
  const Layers top({&file.common, &flags});

  std::vector<Algorithm> algorithms;
  for (const auto& name : split_list(top.text("algorithm", "laq"))) {
    const Algorithm a = parse_algorithm(name);
    if (std::find(algorithms.begin(), algorithms.end(), a) == algorithms.end()) {
      algorithms.push_back(a);
    }
  }
  if (algorithms.empty()) throw ConfigError("algorithm: no algorithm given");
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(top.text("seed", "1"))) seeds.push_back(parse_unsigned("seed", s));
  if (seeds.empty()) throw ConfigError("seed: no seed given");

  ProblemSpec problem;
  problem.model = top.text("model", "logistic");
  if (problem.model != "quadratic" && problem.model != "logistic" && problem.model != "mlp") {
    throw ConfigError("model: expected quadratic, logistic or mlp, got '" + problem.model + "'");
  }
  problem.dataset = top.text("dataset", problem.model == "quadratic" ? "synthetic" : "mnist");
  if (problem.model == "quadratic" && problem.dataset != "synthetic") {
    throw ConfigError("model quadratic is synthetic; dataset must be 'synthetic'");
  }
  if (problem.dataset != "synthetic") store::required_files(problem.dataset);
  problem.workers = static_cast<std::size_t>(positive_index(top, "workers", 10));
  problem.partition = data::parse_partition_mode(top.text("partition", "uniform"));
  problem.dimension = positive_index(top, "p", 20);
  problem.mu = top.number("mu", 1.0);
  problem.smoothness = top.number("l", 10.0);
  problem.lambda = top.number("lambda", 0.01);
  problem.samples = positive_index(top, "samples", 500);
  problem.features = positive_index(top, "features", 10);
  problem.classes = positive_index(top, "classes", 2);
  problem.cache_dir = top.text("cache_dir", store::default_cache_dir().string());
  if (problem.lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (problem.model == "quadratic" && !(problem.mu > 0.0 && problem.smoothness >= problem.mu)) {
    throw ConfigError("quadratic needs 0 < mu <= L");
  }
  const std::filesystem::path out = top.text("out", "results");

  static const Settings empty;
  std::vector<RunPlan> plans;
  for (const Algorithm alg : algorithms) {
    const auto section = file.sections.find(alg);
    const Layers l({&file.common, section == file.sections.end() ? &empty : &section->second,
                    &flags});
    if (is_stochastic(alg) && problem.model == "quadratic") {
      throw ConfigError(to_string(alg) + " samples minibatches and needs a dataset-backed model");
    }
    for (const std::uint64_t seed : seeds) {
      RunPlan plan;
      plan.problem = problem;
      plan.out = out;
      auto& c = plan.config;
      c.algorithm = alg;
      c.seed = seed;
      const std::string alpha = l.text("alpha", "0.02");
      plan.recipe_alpha = alpha == "recipe";
      c.alpha = plan.recipe_alpha ? 1.0 : parse_double("alpha", alpha);
      c.bits = static_cast<int>(l.count("bits", 3));
      c.xi = resolve_xi(l);
      c.max_staleness = static_cast<int>(l.count("max_staleness", 100));
      c.max_iterations = l.count("iters", 1000);
      if (const auto* t = l.find("target_residual"); t && *t != "none") {
        c.target_residual = parse_double("target_residual", *t);
      }
      c.minibatch = positive_index(l, "minibatch", 500);
      c.track_lyapunov = l.flag("lyapunov", true);
      c.check_descent = l.flag("descent_check", false);
      if (c.target_residual && problem.model == "mlp") {
        throw ConfigError("target_residual needs a convex model; the mlp optimum is unknown");
      }
      engine::validate(c, problem.workers);
      plans.push_back(std::move(plan));
    }
  }
  return plans;
}

}  // namespace laq::cli
