#include "laq/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <random>
#include <sstream>

#include "laq/dataset_store.hpp"
#include "laq/errors.hpp"
#include "laq/metrics.hpp"
#include "laq/verify.hpp"

namespace laq::cli {

namespace {

struct Split {
  data::Dataset train;
  data::Dataset test;
};

data::Dataset take_rows(const data::Dataset& d, const std::vector<std::size_t>& rows) {
  data::Dataset out;
  out.name = d.name;
  out.classes = d.classes;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), d.features.cols());
  out.labels.resize(static_cast<Eigen::Index>(rows.size()), d.labels.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = d.features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.row(static_cast<Eigen::Index>(i)) = d.labels.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

/// Seeded 80/20 split for datasets that ship without a test file.
Split hold_out(const data::Dataset& d, std::uint64_t seed) {
  std::vector<std::size_t> order(static_cast<std::size_t>(d.samples()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t train = std::max<std::size_t>(1, order.size() * 4 / 5);
  return {take_rows(d, {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train)}),
          take_rows(d, {order.begin() + static_cast<std::ptrdiff_t>(train), order.end()})};
}

std::filesystem::path require_file(const std::filesystem::path& cache, const std::string& dataset,
                                   const std::string& name) {
  const auto path = store::dataset_dir(cache, dataset) / name;
  if (std::filesystem::is_regular_file(path)) return path;
  const auto packed = std::filesystem::path(path.string() + ".gz");
  if (std::filesystem::is_regular_file(packed)) {
    store::gunzip_file(packed, path);
    return path;
  }
  throw DataError("dataset " + dataset + ": missing " + path.string() +
                  "; run `laq dataset fetch " + dataset + " --cache-dir " + cache.string() +
                  "` or place the file there");
}

Split load_split(const ProblemSpec& spec, std::uint64_t seed) {
  const auto& cache = spec.cache_dir;
  if (spec.dataset == "synthetic") {
    const Eigen::Index test_rows = std::max<Eigen::Index>(1, spec.samples / 4);
    const auto all = data::synthetic_logistic(spec.samples + test_rows, spec.features,
                                              spec.classes, seed);
    std::vector<std::size_t> train(static_cast<std::size_t>(spec.samples));
    std::vector<std::size_t> test(static_cast<std::size_t>(test_rows));
    for (std::size_t i = 0; i < train.size(); ++i) train[i] = i;
    for (std::size_t i = 0; i < test.size(); ++i) test[i] = train.size() + i;
    return {take_rows(all, train), take_rows(all, test)};
  }
  if (spec.dataset == "mnist") {
    return {data::load_mnist_idx(require_file(cache, "mnist", "train-images-idx3-ubyte"),
                                 require_file(cache, "mnist", "train-labels-idx1-ubyte")),
            data::load_mnist_idx(require_file(cache, "mnist", "t10k-images-idx3-ubyte"),
                                 require_file(cache, "mnist", "t10k-labels-idx1-ubyte"))};
  }
  const Eigen::Index features = spec.dataset == "ijcnn1" ? 22 : 54;
  const auto train_path = require_file(cache, spec.dataset, spec.dataset);
  const auto test_path = store::dataset_dir(cache, spec.dataset) / (spec.dataset + ".t");
  auto train = data::load_libsvm(train_path, features);
  if (std::filesystem::is_regular_file(test_path)) {
    auto test = data::load_libsvm(test_path, features);
    if (test.classes != train.classes) {
      throw DataError(test_path.string() + ": label set differs from the training file");
    }
    return {std::move(train), std::move(test)};
  }
  return hold_out(train, seed);
}

std::string number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct Flag {
  const char* name;
  const char* key;
  const char* help;
};

const std::vector<Flag>& run_flags() {
  static const std::vector<Flag> flags = {
      {"--algorithm", "algorithm", "gd, qgd, lag, laq, sgd, slaq (comma-separated list)"},
      {"--model", "model", "quadratic, logistic or mlp"},
      {"--dataset", "dataset", "mnist, ijcnn1, covtype or synthetic"},
      {"--workers", "workers", "number of workers M"},
      {"--partition", "partition", "uniform or heterogeneous"},
      {"--bits", "bits", "bits per coordinate b"},
      {"--alpha", "alpha", "stepsize, or 'recipe' for 1/(8L)"},
      {"--bigD", "bigd", "history depth D"},
      {"--xi", "xi", "xi_d for every d, a list of D values, or 'recipe' for 1/(16D)"},
      {"--max-staleness", "max_staleness", "clock bound t_bar"},
      {"--iters", "iters", "maximum iterations K"},
      {"--target-residual", "target_residual", "stop once f - f* <= value"},
      {"--minibatch", "minibatch", "minibatch size for sgd/slaq"},
      {"--seed", "seed", "seed, or a comma-separated list"},
      {"--out", "out", "output directory"},
      {"--cache-dir", "cache_dir", "dataset cache directory (default $LAQ_CACHE_DIR or data)"},
      {"--p", "p", "quadratic dimension"},
      {"--mu", "mu", "quadratic strong convexity"},
      {"--L", "l", "quadratic smoothness"},
      {"--lambda", "lambda", "ridge coefficient"},
      {"--samples", "samples", "synthetic training rows"},
      {"--features", "features", "synthetic feature count"},
      {"--classes", "classes", "synthetic class count"},
      {"--lyapunov", "lyapunov", "record the Lyapunov value (true/false)"},
      {"--descent-check", "descent_check", "record the one-step descent check (true/false)"},
  };
  return flags;
}

int cmd_run(const std::string& experiment, const std::string& preset_name, const Settings& flags,
            std::ostream& out, std::ostream& err) {
  ExperimentFile file;
  if (!preset_name.empty()) file = preset(preset_name);
  if (!experiment.empty()) file = overlay(file, load_experiment(experiment));
  const auto plans = resolve(file, flags);

  std::map<std::string, std::shared_ptr<LoadedProblem>> problems;
  std::vector<metrics::SummaryRow> summary;
  const bool many_seeds = std::any_of(plans.begin(), plans.end(), [&](const RunPlan& p) {
    return p.config.seed != plans.front().config.seed;
  });
  for (const auto& plan : plans) {
    const std::string key = plan.problem.key(plan.config.seed) + "_M" +
                            std::to_string(plan.problem.workers) + "_" +
                            data::to_string(plan.problem.partition);
    auto& loaded = problems[key];
    if (!loaded) {
      loaded = std::make_shared<LoadedProblem>(build_problem(plan.problem, plan.config.seed));
      if (plan.problem.model == "logistic") {
        loaded->problem.optimal_value =
            cached_reference_value(loaded->problem, plan.problem, plan.config.seed, err);
      }
    }
    const auto& problem = loaded->problem;
    engine::RunConfig config = plan.config;
    if (plan.recipe_alpha) {
      if (!(problem.smoothness > 0.0)) {
        throw ConfigError("alpha = recipe needs a smoothness constant; the " +
                          plan.problem.model + " model has none");
      }
      config.alpha = 1.0 / (8.0 * problem.smoothness);
    }
    if (config.target_residual && !problem.optimal_value) {
      throw ConfigError("target_residual needs a known optimum");
    }
    if (config.check_descent && is_stochastic(config.algorithm)) {
      throw ConfigError("descent_check needs a full-batch algorithm");
    }
    if (is_lazy(config.algorithm) && problem.smoothness > 0.0) {
      const auto report = engine::validate_recipe(config, problem.smoothness);
      if (!report.pass) {
        err << "warning: " << to_string(config.algorithm)
            << " parameters fall outside the convergence recipe (advisory)\n";
      }
      for (const auto& note : report.notes) err << "  " << note << '\n';
    }

    const auto result = engine::run(config, problem);
    const auto path =
        plan.out / (to_string(config.algorithm) + "_seed" + std::to_string(config.seed) + ".csv");
    metrics::export_csv(result.log, path);

    metrics::SummaryRow row;
    row.algorithm = to_string(config.algorithm);
    if (many_seeds) row.algorithm += "/s" + std::to_string(config.seed);
    row.iterations = result.log.iterations();
    row.communications = result.log.records.back().cumulative_uploads;
    row.bits = result.log.records.back().cumulative_bits;
    if (loaded->test_features.rows() > 0) {
      row.accuracy = losses::accuracy(loaded->model, result.params, loaded->test_features,
                                      loaded->test_labels);
    }
    summary.push_back(row);
    out << "wrote " << path.string() << '\n';
  }
  const std::string table = metrics::format_summary(summary);
  out << table;
  std::filesystem::create_directories(plans.front().out);
  std::ofstream(plans.front().out / "summary.txt", std::ios::binary) << table;
  return kExitOk;
}

int cmd_verify(const std::string& target, std::uint64_t seed, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto lines = verify::run_suite(target, seed);
  bool ok = true;
  for (const auto& line : lines) {
    out << verify::format(line) << '\n';
    ok = ok && line.pass;
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s %zu checks in %.2f s\n", ok ? "PASS" : "FAIL", lines.size(),
                seconds);
  out << buf;
  return ok ? kExitOk : kExitFailure;
}

int cmd_dataset(const std::string& action, const std::string& name, const std::string& cache_flag,
                const std::string& manifest, std::ostream& out) {
  const std::filesystem::path cache =
      cache_flag.empty() ? store::default_cache_dir() : std::filesystem::path(cache_flag);
  if (action == "fetch") {
    store::fetch(cache, name, out);
    return kExitOk;
  }
  const auto report = manifest.empty()
                          ? store::check_dataset(cache, name)
                          : store::check(store::dataset_dir(cache, name), store::load_manifest(manifest));
  for (const auto& line : report.lines) out << line << '\n';
  out << (report.ok ? "ok" : "FAILED") << ' ' << name << '\n';
  return report.ok ? kExitOk : kExitData;
}

}  // namespace

LoadedProblem build_problem(const ProblemSpec& spec, std::uint64_t seed) {
  LoadedProblem loaded;
  if (spec.model == "quadratic") {
    const auto q = data::synthetic_quadratic_split(spec.dimension, spec.workers, spec.mu,
                                                   spec.smoothness, seed);
    loaded.model = q.workers.front();
    loaded.problem = engine::make_problem(q);
    return loaded;
  }
  auto split = load_split(spec, seed);
  if (split.train.samples() < static_cast<Eigen::Index>(spec.workers)) {
    throw DataError("dataset " + spec.dataset + " has fewer samples than workers");
  }
  if (spec.model == "logistic") {
    loaded.model = losses::LogisticModel{split.train.classes, split.train.feature_dim(), spec.lambda};
  } else {
    loaded.model = losses::MlpModel{split.train.feature_dim(), 200, split.train.classes, spec.lambda};
  }
  const auto plan = data::partition(split.train, spec.workers, spec.partition, seed);
  loaded.problem = engine::make_problem(split.train, loaded.model, plan);
  loaded.test_features = std::move(split.test.features);
  loaded.test_labels = std::move(split.test.labels);
  return loaded;
}

double cached_reference_value(const engine::Problem& problem, const ProblemSpec& spec,
                              std::uint64_t seed, std::ostream& log) {
  const auto path = spec.cache_dir / "reference" / (spec.key(seed) + ".txt");
  if (std::ifstream in(path); in) {
    std::string label;
    double value = 0.0;
    if (in >> label >> value && label == "value" && std::isfinite(value)) return value;
    log << "warning: ignoring unreadable reference cache " << path.string() << '\n';
  }
  log << "computing reference optimum for " << spec.key(seed) << '\n';
  const auto ref = engine::reference_optimum(problem);
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << "value " << number(ref.value) << "\ngrad_norm " << number(ref.grad_norm)
      << "\niterations " << ref.iterations << '\n';
  return ref.value;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lazily aggregated quantized gradient simulator", "laq"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run one or more algorithms and write telemetry CSVs");
  std::string experiment;
  std::string preset_name;
  run->add_option("--experiment", experiment, "experiment file (key = value, [algorithm] sections)");
  run->add_option("--preset", preset_name, "paper-gd-suite or paper-sgd-suite");
  std::vector<std::pair<const Flag*, std::string>> values(run_flags().size());
  std::vector<CLI::Option*> options;
  for (std::size_t i = 0; i < run_flags().size(); ++i) {
    values[i].first = &run_flags()[i];
    options.push_back(run->add_option(run_flags()[i].name, values[i].second, run_flags()[i].help));
  }

  auto* verify_cmd = app.add_subcommand("verify", "Run a seeded property suite");
  std::string target;
  std::uint64_t verify_seed = 1;
  verify_cmd->add_option("target", target, "codec, gradients, reductions, prop1, rate or all")
      ->required();
  verify_cmd->add_option("--seed", verify_seed, "suite seed");

  auto* dataset_cmd = app.add_subcommand("dataset", "Fetch or check cached datasets");
  std::string action;
  std::string name;
  std::string cache_dir;
  std::string manifest;
  dataset_cmd->add_option("action", action, "fetch or check")
      ->required()
      ->check(CLI::IsMember({"fetch", "check"}));
  dataset_cmd->add_option("name", name, "dataset name")->required();
  dataset_cmd->add_option("--cache-dir", cache_dir, "dataset cache directory");
  dataset_cmd->add_option("--manifest", manifest, "sha256 manifest to check against");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) {
      Settings flags;
      for (std::size_t i = 0; i < options.size(); ++i) {
        if (options[i]->count() > 0) flags[values[i].first->key] = values[i].second;
      }
      return cmd_run(experiment, preset_name, flags, out, err);
    }
    if (verify_cmd->parsed()) return cmd_verify(target, verify_seed, out);
    return cmd_dataset(action, name, cache_dir, manifest, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace laq::cli
