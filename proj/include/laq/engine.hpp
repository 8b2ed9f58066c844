#pragma once

// In-process parameter-server simulation of GD, QGD, LAG, LAQ, SGD and SLAQ.
//
// Every round the server broadcasts theta^k; each worker computes its local
// gradient, optionally quantizes the innovation against its stored copy and
// decides whether to upload. The server folds the received innovations into
// its running aggregate and steps theta^{k+1} = theta^k - alpha * aggregate.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "laq/algorithm.hpp"
#include "laq/criterion.hpp"
#include "laq/data.hpp"
#include "laq/losses.hpp"
#include "laq/metrics.hpp"

namespace laq::engine {

struct LocalObjective {
  losses::Model model;
  losses::DataShard shard;
};

struct Problem {
  std::vector<LocalObjective> workers;
  /// Starting point; empty means losses::initial_parameters of the first model.
  Eigen::VectorXd initial_params;
  std::optional<double> optimal_value;
  /// Global smoothness L (0 when unknown); used by the descent diagnostics.
  double smoothness = 0.0;
  /// Extra key/value pairs echoed into the telemetry header.
  std::vector<std::pair<std::string, std::string>> description;

  Eigen::Index dimension() const;
};

/// Workers hold shards of `dataset` under a shared model.
Problem make_problem(const data::Dataset& dataset, const losses::Model& model,
                     const data::PartitionPlan& plan);

/// Workers hold the synthetic (A_m, b_m) pairs; f* and L are exact.
Problem make_problem(const data::SyntheticQuadratic& quadratic);

double total_loss(const Problem& problem, const Eigen::VectorXd& params);
Eigen::VectorXd total_gradient(const Problem& problem, const Eigen::VectorXd& params);

struct ReferenceSolution {
  Eigen::VectorXd params;
  double value = 0.0;
  std::uint64_t iterations = 0;
  double grad_norm = 0.0;
};

/// Accelerated gradient descent with adaptive restart at step 1/L_hat, where
/// L_hat sums the per-worker smoothness bounds. Convex models only.
ReferenceSolution reference_optimum(const Problem& problem, std::uint64_t max_iterations = 100000,
                                    double grad_tol = 1e-11);

struct RunConfig {
  Algorithm algorithm = Algorithm::laq;
  double alpha = 0.02;
  int bits = 3;
  std::vector<double> xi = criterion::uniform_xi(10, 0.8);
  int max_staleness = 100;
  std::uint64_t max_iterations = 1000;
  std::optional<double> target_residual;
  Eigen::Index minibatch = 500;
  std::uint64_t seed = 1;
  bool track_lyapunov = false;
  /// Records the one-step descent check per round (full-batch runs, needs L).
  bool check_descent = false;
};

/// Throws ConfigError for invalid settings.
void validate(const RunConfig& config, std::size_t workers);

criterion::SkipConfig skip_config(const RunConfig& config, std::size_t workers);

/// Key/value echo of the configuration, in a fixed order.
std::vector<std::pair<std::string, std::string>> describe(const RunConfig& config);

struct RecipeReport {
  bool pass = false;
  double xi_sum = 0.0;
  double xi_limit = 0.0;     // right side of the xi-sum condition
  double alpha_limit = 0.0;  // right side of the stepsize condition
  std::vector<std::string> notes;
};

/// Advisory check of the stepsize/xi sufficient conditions with rho1 = 1/2,
/// rho2 = 1. Never throws for out-of-range values; reports them instead.
RecipeReport validate_recipe(const RunConfig& config, double smoothness);

/// xi_d = 1/(16 D), alpha = 1/(8 L).
void apply_simple_recipe(RunConfig& config, std::size_t depth, double smoothness);

struct ServerState {
  Eigen::VectorXd params;
  Eigen::VectorXd aggregate;
  std::vector<Eigen::VectorXd> stored;
  std::uint64_t iteration = 0;
};

ServerState initial_server(Eigen::VectorXd params, std::size_t workers);

/// Exact-valued innovation for the algorithms that bypass the codec.
struct ExactInnovation {
  std::uint16_t worker_id = 0;
  std::uint32_t iteration = 0;
  Eigen::VectorXd delta;
};

/// Either an encoded WireMessage or an exact innovation.
using Upload = std::variant<std::vector<std::uint8_t>, ExactInnovation>;

std::uint16_t sender(const Upload& upload);

/// Applies the uploads in ascending worker order, then steps the parameters.
/// Throws WireError on duplicate senders or dimension mismatches.
ServerState server_apply(ServerState server, std::span<const Upload> uploads, double alpha);

struct WorkerContext {
  std::uint16_t id = 0;
  criterion::WorkerState state;
  Eigen::VectorXd last_params;
  std::mt19937_64 rng;
  std::vector<Eigen::Index> batch_order;
  std::size_t batch_cursor = 0;
};

WorkerContext make_worker(std::uint16_t id, Eigen::Index dimension, const RunConfig& config);

struct RoundResult {
  std::optional<Upload> upload;
  /// Q_m(theta^k): the candidate stored copy (the gradient itself for exact algorithms).
  Eigen::VectorXd candidate;
  /// Stored copy before this round.
  Eigen::VectorXd previous;
  double error_sq = 0.0;
  double delta_sq = 0.0;
};

/// Local gradient for this round: full batch, or the next minibatch for the
/// stochastic algorithms (sampling without replacement within an epoch).
Eigen::VectorXd local_gradient(WorkerContext& worker, const LocalObjective& objective,
                               const Eigen::VectorXd& params, const RunConfig& config);

/// Decision and upload for one worker given its gradient at theta^k.
RoundResult worker_round(WorkerContext& worker, std::uint32_t iteration,
                         const Eigen::VectorXd& params, const Eigen::VectorXd& gradient,
                         const RunConfig& config, const criterion::SkipConfig& skip);

struct RunResult {
  Eigen::VectorXd params;
  metrics::TelemetryLog log;
};

/// Called after every server step with the new server state and the workers.
using RunObserver =
    std::function<void(const ServerState& server, const std::vector<WorkerContext>& workers)>;

/// Throws DivergenceError when the loss becomes non-finite or exceeds 1e12.
RunResult run(const RunConfig& config, const Problem& problem, const RunObserver& observer = {});

inline constexpr double kDivergenceLoss = 1e12;

}  // namespace laq::engine
