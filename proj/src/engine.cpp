#include "laq/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <numeric>

#include "laq/codec.hpp"
#include "laq/errors.hpp"

namespace laq::engine {

namespace {

std::string number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

bool close_or_below(double value, double limit) {
  return value <= limit + 1e-12 * std::max(std::abs(limit), 1e-300);
}

struct Evaluation {
  double loss = 0.0;
  Eigen::VectorXd gradient;
  std::vector<Eigen::VectorXd> local;
};

Evaluation evaluate(const Problem& problem, const Eigen::VectorXd& params) {
  Evaluation e;
  e.gradient = Eigen::VectorXd::Zero(params.size());
  e.local.resize(problem.workers.size());
  for (std::size_t m = 0; m < problem.workers.size(); ++m) {
    const auto& w = problem.workers[m];
    e.loss += losses::loss_and_gradient(w.model, params, w.shard, e.local[m]);
    e.gradient += e.local[m];
  }
  return e;
}

}  // namespace

Eigen::Index Problem::dimension() const {
  if (workers.empty()) return 0;
  return losses::parameter_count(workers.front().model);
}

Problem make_problem(const data::Dataset& dataset, const losses::Model& model,
                     const data::PartitionPlan& plan) {
  Problem problem;
  for (auto& shard : data::make_shards(dataset, plan)) {
    problem.workers.push_back({model, std::move(shard)});
  }
  if (std::holds_alternative<losses::LogisticModel>(model)) {
    problem.smoothness = losses::smoothness_constant(model, data::full_shard(dataset));
  }
  problem.description = {{"model", losses::model_name(model)},
                         {"dataset", dataset.name},
                         {"samples", std::to_string(dataset.samples())},
                         {"partition", data::to_string(plan.mode)},
                         {"partition_seed", std::to_string(plan.seed)}};
  return problem;
}

Problem make_problem(const data::SyntheticQuadratic& quadratic) {
  Problem problem;
  if (quadratic.workers.empty()) throw ConfigError("quadratic problem has no workers");
  const Eigen::Index p = quadratic.workers.front().b.size();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p, p);
  for (const auto& w : quadratic.workers) {
    problem.workers.push_back({w, losses::DataShard{}});
    h += w.A;
  }
  problem.optimal_value = quadratic.optimal_value;
  problem.smoothness = losses::largest_eigenvalue(h);
  problem.description = {{"model", "quadratic"}, {"dataset", "synthetic-quadratic"}};
  return problem;
}

double total_loss(const Problem& problem, const Eigen::VectorXd& params) {
  double total = 0.0;
  for (const auto& w : problem.workers) total += losses::loss(w.model, params, w.shard);
  return total;
}

Eigen::VectorXd total_gradient(const Problem& problem, const Eigen::VectorXd& params) {
  return evaluate(problem, params).gradient;
}

ReferenceSolution reference_optimum(const Problem& problem, std::uint64_t max_iterations,
                                    double grad_tol) {
  if (problem.workers.empty()) throw ConfigError("reference_optimum: empty problem");
  double l_hat = 0.0;
  for (const auto& w : problem.workers) l_hat += losses::smoothness_constant(w.model, w.shard);
  if (!(l_hat > 0.0)) throw ConfigError("reference_optimum: zero smoothness bound");
  const double step = 1.0 / l_hat;

  Eigen::VectorXd x = problem.initial_params.size() == problem.dimension()
                          ? problem.initial_params
                          : Eigen::VectorXd::Zero(problem.dimension());
  Eigen::VectorXd y = x;
  Evaluation at_x = evaluate(problem, x);
  double t = 1.0;
  ReferenceSolution out;
  for (std::uint64_t it = 0; it < max_iterations; ++it) {
    out.iterations = it;
    if (at_x.gradient.norm() <= grad_tol) break;
    const Eigen::VectorXd gy = total_gradient(problem, y);
    const Eigen::VectorXd next = y - step * gy;
    // Gradient restart: momentum pointing uphill is dropped. Loss values stop
    // resolving progress near the optimum, the gradient test does not.
    if (y != x && gy.dot(next - x) > 0.0) {
      t = 1.0;
      y = x;
      continue;
    }
    Evaluation at_next = evaluate(problem, next);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / t_next) * (next - x);
    x = next;
    at_x = std::move(at_next);
    t = t_next;
  }
  out.params = x;
  out.value = at_x.loss;
  out.grad_norm = at_x.gradient.norm();
  return out;
}

void validate(const RunConfig& config, std::size_t workers) {
  if (workers < 1) throw ConfigError("run: need at least one worker");
  if (workers > 65536) throw ConfigError("run: at most 65536 workers are addressable");
  if (!(config.alpha > 0.0) || !std::isfinite(config.alpha)) {
    throw ConfigError("alpha must be a positive number");
  }
  if (is_quantized(config.algorithm) &&
      (config.bits < codec::kMinBits || config.bits > codec::kMaxBits)) {
    throw ConfigError("bits must be in [1, 32]");
  }
  if (is_stochastic(config.algorithm) && config.minibatch < 1) {
    throw ConfigError("minibatch must be >= 1");
  }
  if (config.target_residual && !(*config.target_residual > 0.0)) {
    throw ConfigError("target residual must be > 0");
  }
  if (is_lazy(config.algorithm)) {
    try {
      criterion::validate(skip_config(config, workers));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
}

criterion::SkipConfig skip_config(const RunConfig& config, std::size_t workers) {
  criterion::SkipConfig s;
  s.alpha = config.alpha;
  s.num_workers = static_cast<int>(workers);
  s.xi = config.xi;
  s.max_staleness = config.max_staleness;
  return s;
}

std::vector<std::pair<std::string, std::string>> describe(const RunConfig& config) {
  std::string xi;
  for (std::size_t d = 0; d < config.xi.size(); ++d) xi += (d ? ";" : "") + number(config.xi[d]);
  return {{"algorithm", to_string(config.algorithm)},
          {"alpha", number(config.alpha)},
          {"bits", std::to_string(config.bits)},
          {"D", std::to_string(config.xi.size())},
          {"xi", xi},
          {"max_staleness", std::to_string(config.max_staleness)},
          {"max_iterations", std::to_string(config.max_iterations)},
          {"target_residual", config.target_residual ? number(*config.target_residual) : "none"},
          {"minibatch", std::to_string(config.minibatch)},
          {"seed", std::to_string(config.seed)}};
}

RecipeReport validate_recipe(const RunConfig& config, double smoothness) {
  constexpr double rho1 = 0.5;
  constexpr double rho2 = 1.0;
  RecipeReport r;
  r.xi_sum = std::accumulate(config.xi.begin(), config.xi.end(), 0.0);
  const double first = (1.0 - rho1) / (4.0 * (1.0 + rho2));
  const double second = 1.0 / (2.0 * (1.0 + 1.0 / rho2));
  r.xi_limit = std::min(first, second);
  if (!(smoothness > 0.0)) {
    r.notes.push_back("smoothness constant unavailable; stepsize condition not checked");
    r.pass = close_or_below(r.xi_sum, r.xi_limit);
    return r;
  }
  r.alpha_limit = std::min(2.0 / smoothness * (first - r.xi_sum),
                           2.0 / smoothness * (second - r.xi_sum));
  const bool xi_ok = close_or_below(r.xi_sum, r.xi_limit);
  const bool alpha_ok = close_or_below(config.alpha, r.alpha_limit);
  r.pass = xi_ok && alpha_ok;

  const std::size_t depth = config.xi.size();
  if (!r.pass && xi_ok && depth > 0) {
    const double recipe_xi = 1.0 / (16.0 * static_cast<double>(depth));
    const bool uniform = std::all_of(config.xi.begin(), config.xi.end(), [&](double x) {
      return std::abs(x - recipe_xi) <= 1e-12 * recipe_xi;
    });
    if (uniform && close_or_below(config.alpha, 1.0 / (8.0 * smoothness))) {
      r.pass = true;
      r.notes.push_back("accepted as the simple choice xi_d = 1/(16D), alpha <= 1/(8L); the "
                        "stepsize bound evaluates to " + number(r.alpha_limit) +
                        " at this xi sum");
      return r;
    }
  }
  if (!xi_ok) {
    r.notes.push_back("sum of xi = " + number(r.xi_sum) + " exceeds " + number(r.xi_limit));
  }
  if (!alpha_ok && r.alpha_limit <= 0.0) {
    r.notes.push_back("no stepsize satisfies the bound at this xi sum");
  } else if (!alpha_ok) {
    r.notes.push_back("alpha = " + number(config.alpha) + " exceeds " + number(r.alpha_limit));
  }
  return r;
}

void apply_simple_recipe(RunConfig& config, std::size_t depth, double smoothness) {
  if (!(smoothness > 0.0)) throw ConfigError("recipe needs a positive smoothness constant");
  config.xi = criterion::uniform_xi(depth, 1.0 / 16.0);
  config.alpha = 1.0 / (8.0 * smoothness);
}

ServerState initial_server(Eigen::VectorXd params, std::size_t workers) {
  ServerState s;
  s.aggregate = Eigen::VectorXd::Zero(params.size());
  s.stored.assign(workers, Eigen::VectorXd::Zero(params.size()));
  s.params = std::move(params);
  return s;
}

std::uint16_t sender(const Upload& upload) {
  if (const auto* exact = std::get_if<ExactInnovation>(&upload)) return exact->worker_id;
  const auto& bytes = std::get<std::vector<std::uint8_t>>(upload);
  if (bytes.size() < 2) throw WireError("upload too short to carry a worker id");
  return static_cast<std::uint16_t>(bytes[0] | (bytes[1] << 8));
}

ServerState server_apply(ServerState server, std::span<const Upload> uploads, double alpha) {
  std::vector<std::size_t> order(uploads.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sender(uploads[a]) < sender(uploads[b]);
  });
  const Eigen::Index p = server.params.size();
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Upload& upload = uploads[order[i]];
    const std::uint16_t id = sender(upload);
    if (i > 0 && sender(uploads[order[i - 1]]) == id) {
      throw WireError("duplicate upload from worker " + std::to_string(id));
    }
    if (id >= server.stored.size()) {
      throw WireError("upload from unknown worker " + std::to_string(id));
    }
    Eigen::VectorXd delta;
    if (const auto* exact = std::get_if<ExactInnovation>(&upload)) {
      delta = exact->delta;
    } else {
      const auto message = codec::decode_message(std::get<std::vector<std::uint8_t>>(upload));
      if (static_cast<Eigen::Index>(message.dimension) != p) {
        throw WireError("worker " + std::to_string(id) + " sent dimension " +
                        std::to_string(message.dimension) + ", expected " + std::to_string(p));
      }
      delta = codec::decode_innovation(codec::to_innovation(message));
    }
    if (delta.size() != p) {
      throw WireError("worker " + std::to_string(id) + " sent an innovation of length " +
                      std::to_string(delta.size()));
    }
    server.stored[id] += delta;
    server.aggregate += delta;
  }
  server.params -= alpha * server.aggregate;
  ++server.iteration;
  return server;
}

WorkerContext make_worker(std::uint16_t id, Eigen::Index dimension, const RunConfig& config) {
  WorkerContext w;
  w.id = id;
  w.state = criterion::initial_state(dimension, config.xi.size());
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                    static_cast<std::uint32_t>(config.seed >> 32), std::uint32_t{id},
                    std::uint32_t{0x1a9}};
  w.rng.seed(seq);
  return w;
}

Eigen::VectorXd local_gradient(WorkerContext& worker, const LocalObjective& objective,
                               const Eigen::VectorXd& params, const RunConfig& config) {
  const auto& shard = objective.shard;
  const Eigen::Index rows = shard.features.rows();
  if (!is_stochastic(config.algorithm) || rows == 0) {
    return losses::gradient(objective.model, params, shard);
  }
  const Eigen::Index batch = std::min(config.minibatch, rows);
  if (worker.batch_order.empty() ||
      worker.batch_cursor + static_cast<std::size_t>(batch) > static_cast<std::size_t>(rows)) {
    worker.batch_order.resize(static_cast<std::size_t>(rows));
    std::iota(worker.batch_order.begin(), worker.batch_order.end(), Eigen::Index{0});
    for (std::size_t i = worker.batch_order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(worker.batch_order[i - 1], worker.batch_order[pick(worker.rng)]);
    }
    worker.batch_cursor = 0;
  }
  losses::DataShard mini;
  mini.features.resize(batch, shard.features.cols());
  mini.labels.resize(batch, shard.labels.cols());
  for (Eigen::Index r = 0; r < batch; ++r) {
    const Eigen::Index src = worker.batch_order[worker.batch_cursor + static_cast<std::size_t>(r)];
    mini.features.row(r) = shard.features.row(src);
    mini.labels.row(r) = shard.labels.row(src);
  }
  worker.batch_cursor += static_cast<std::size_t>(batch);
  mini.data_scale = shard.data_scale * static_cast<double>(rows) / static_cast<double>(batch);
  mini.reg_share = shard.reg_share;
  return losses::gradient(objective.model, params, mini);
}

RoundResult worker_round(WorkerContext& worker, std::uint32_t iteration,
                         const Eigen::VectorXd& params, const Eigen::VectorXd& gradient,
                         const RunConfig& config, const criterion::SkipConfig& skip) {
  if (iteration > 0) {
    worker.state = criterion::tick(std::move(worker.state), (params - worker.last_params).squaredNorm());
  }
  worker.last_params = params;

  RoundResult r;
  r.previous = worker.state.stored_quantization;
  std::optional<Upload> upload;
  if (is_quantized(config.algorithm)) {
    const auto qi = codec::quantize_innovation(gradient, r.previous, config.bits);
    const auto message = codec::make_message(worker.id, iteration, qi);
    // Decode from the transmitted form so both ends hold identical copies.
    const Eigen::VectorXd delta = codec::decode_innovation(codec::to_innovation(message));
    r.candidate = r.previous + delta;
    r.error_sq = (gradient - r.candidate).squaredNorm();
    upload = codec::encode_message(message);
  } else {
    ExactInnovation exact{worker.id, iteration, gradient - r.previous};
    r.candidate = r.previous + exact.delta;
    r.error_sq = 0.0;
    upload = std::move(exact);
  }
  r.delta_sq = (r.previous - r.candidate).squaredNorm();

  const bool skipped = is_lazy(config.algorithm) && iteration > 0 &&
                       criterion::should_skip(r.delta_sq, worker.state, skip, r.error_sq);
  if (!skipped) {
    worker.state = criterion::on_upload(std::move(worker.state), r.candidate, r.error_sq);
    r.upload = std::move(upload);
  }
  return r;
}

RunResult run(const RunConfig& config, const Problem& problem, const RunObserver& observer) {
  const std::size_t workers = problem.workers.size();
  validate(config, workers);
  const Eigen::Index p = problem.dimension();
  if (p < 1) throw ConfigError("run: model has no parameters");
  if (config.check_descent) {
    if (is_stochastic(config.algorithm)) {
      throw ConfigError("descent check needs full-batch gradients");
    }
    if (!(problem.smoothness > 0.0)) throw ConfigError("descent check needs the smoothness L");
  }
  const auto skip = skip_config(config, workers);
  const std::size_t depth = config.xi.size();

  Eigen::VectorXd theta = problem.initial_params.size() == p
                              ? problem.initial_params
                              : losses::initial_parameters(problem.workers.front().model,
                                                           config.seed);
  ServerState server = initial_server(theta, workers);
  std::vector<WorkerContext> ctx;
  for (std::size_t m = 0; m < workers; ++m) {
    ctx.push_back(make_worker(static_cast<std::uint16_t>(m), p, config));
  }

  RunResult result;
  auto& log = result.log;
  log.config = describe(config);
  log.config.insert(log.config.end(), problem.description.begin(), problem.description.end());
  log.config.emplace_back("workers", std::to_string(workers));
  log.config.emplace_back("dimension", std::to_string(p));
  log.worker_uploads.assign(workers, 0);

  std::deque<double> steps;  // newest first
  std::uint64_t cumulative_uploads = 0;
  std::uint64_t cumulative_bits = 0;
  const std::uint64_t per_upload = metrics::bits_per_upload(config.algorithm,
                                                            static_cast<std::uint64_t>(p),
                                                            config.bits);

  auto guard = [&](double loss, std::uint64_t k) {
    if (!std::isfinite(loss) || loss > kDivergenceLoss) {
      throw DivergenceError(to_string(config.algorithm) + " diverged at iteration " +
                            std::to_string(k) + " (loss " + number(loss) + ")");
    }
  };
  auto record = [&](std::uint64_t k, const Evaluation& e, int uploads) {
    metrics::TelemetryRecord rec;
    rec.iteration = k;
    rec.loss = e.loss;
    if (problem.optimal_value) rec.residual = e.loss - *problem.optimal_value;
    rec.grad_norm = e.gradient.norm();
    rec.uploads = uploads;
    rec.cumulative_uploads = cumulative_uploads;
    rec.cumulative_bits = cumulative_bits;
    if (config.track_lyapunov && rec.residual) {
      const std::vector<double> diffs(steps.begin(), steps.end());
      rec.lyapunov = metrics::lyapunov_from_diffs(*rec.residual, diffs, config.xi, config.alpha);
    }
    for (const auto& w : ctx) rec.clocks.push_back(w.state.clock);
    log.records.push_back(std::move(rec));
  };
  auto reached = [&]() {
    return config.target_residual && log.records.back().residual &&
           *log.records.back().residual <= *config.target_residual;
  };

  Evaluation current = evaluate(problem, server.params);
  guard(current.loss, 0);
  record(0, current, 0);

  for (std::uint64_t k = 0; k < config.max_iterations && !reached(); ++k) {
    std::vector<Upload> uploads;
    std::vector<RoundResult> rounds;
    rounds.reserve(workers);
    for (std::size_t m = 0; m < workers; ++m) {
      const Eigen::VectorXd g = is_stochastic(config.algorithm)
                                    ? local_gradient(ctx[m], problem.workers[m], server.params,
                                                     config)
                                    : current.local[m];
      rounds.push_back(worker_round(ctx[m], static_cast<std::uint32_t>(k), server.params, g,
                                    config, skip));
      if (rounds.back().upload) {
        uploads.push_back(*rounds.back().upload);
        ++log.worker_uploads[m];
      }
    }

    const Eigen::VectorXd before = server.params;
    server = server_apply(std::move(server), uploads, config.alpha);
    const double step_sq = (server.params - before).squaredNorm();
    if (depth > 0) {
      steps.push_front(step_sq);
      if (steps.size() > depth) steps.pop_back();
    }
    if (observer) observer(server, ctx);
    cumulative_uploads += uploads.size();
    cumulative_bits += per_upload * uploads.size();

    Evaluation next = evaluate(problem, server.params);
    guard(next.loss, k + 1);

    if (config.check_descent) {
      Eigen::VectorXd skipped = Eigen::VectorXd::Zero(p);
      Eigen::VectorXd error = Eigen::VectorXd::Zero(p);
      for (std::size_t m = 0; m < workers; ++m) {
        error += current.local[m] - rounds[m].candidate;
        if (!rounds[m].upload) skipped += rounds[m].previous - rounds[m].candidate;
      }
      const double bound = metrics::laq_descent_bound(
          config.alpha, problem.smoothness, current.gradient.squaredNorm(),
          skipped.squaredNorm(), step_sq, error.squaredNorm());
      log.descent_excess.push_back((next.loss - current.loss) - bound);
    }

    record(k + 1, next, static_cast<int>(uploads.size()));
    current = std::move(next);
  }
  result.params = server.params;
  return result;
}

}  // namespace laq::engine
