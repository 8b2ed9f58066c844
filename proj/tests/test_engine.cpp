#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <vector>

#include "laq/codec.hpp"
#include "laq/engine.hpp"
#include "laq/errors.hpp"
#include "laq/metrics.hpp"

using namespace laq;
using namespace laq::engine;

namespace {

Problem quadratic_problem(std::uint64_t seed, std::size_t workers = 4) {
  return make_problem(data::synthetic_quadratic_split(8, workers, 1.0, 10.0, seed));
}

Problem logistic_problem(std::uint64_t seed) {
  const auto d = data::synthetic_logistic(120, 4, 3, seed);
  return make_problem(d, losses::LogisticModel{3, 4, 0.01},
                      data::partition(d, 3, data::PartitionMode::uniform, seed));
}

RunConfig config_for(Algorithm a, double alpha, std::uint64_t iters) {
  RunConfig c;
  c.algorithm = a;
  c.alpha = alpha;
  c.bits = 4;
  c.xi = criterion::uniform_xi(4, 0.8);
  c.max_staleness = 10;
  c.max_iterations = iters;
  return c;
}

std::string csv_of(const metrics::TelemetryLog& log) {
  std::ostringstream out;
  metrics::write_csv(log, out);
  return out.str();
}

ExactInnovation exact(std::uint16_t id, std::initializer_list<double> values) {
  ExactInnovation e;
  e.worker_id = id;
  e.delta.resize(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) e.delta(i++) = v;
  return e;
}

}  // namespace

TEST_SUITE("engine") {
  TEST_CASE("server apply folds innovations in and steps") {
    ServerState s = initial_server(Eigen::Vector2d(1.0, 2.0), 3);
    std::vector<Upload> ups{exact(2, {1.0, 0.0}), exact(0, {0.5, -1.0})};
    s = server_apply(s, ups, 0.1);
    CHECK(s.aggregate.isApprox(Eigen::Vector2d(1.5, -1.0)));
    CHECK(s.params.isApprox(Eigen::Vector2d(1.0 - 0.15, 2.0 + 0.1)));
    CHECK(s.stored[0].isApprox(Eigen::Vector2d(0.5, -1.0)));
    CHECK(s.stored[1].isZero(0.0));
    CHECK(s.iteration == 1);

    // No uploads: the stale aggregate is reused verbatim.
    const Eigen::VectorXd before = s.params;
    s = server_apply(s, {}, 0.1);
    CHECK(s.params.isApprox(before - 0.1 * Eigen::Vector2d(1.5, -1.0)));
    CHECK(s.iteration == 2);
  }

  TEST_CASE("server apply accepts wire uploads") {
    ServerState s = initial_server(Eigen::Vector2d::Zero(), 2);
    const auto msg = codec::make_message(1, 0, codec::QuantizedInnovation{1.0, {3, 0}, 2});
    std::vector<Upload> ups{codec::encode_message(msg)};
    CHECK(sender(ups[0]) == 1);
    s = server_apply(s, ups, 1.0);
    CHECK(s.stored[1].isApprox(Eigen::Vector2d(1.0, -1.0)));
    CHECK(s.params.isApprox(Eigen::Vector2d(-1.0, 1.0)));
  }

  TEST_CASE("server apply rejects duplicates, strangers and wrong sizes") {
    const ServerState s = initial_server(Eigen::Vector2d::Zero(), 2);
    std::vector<Upload> dup{exact(1, {1.0, 1.0}), exact(1, {1.0, 1.0})};
    CHECK_THROWS_AS(server_apply(s, dup, 0.1), WireError);
    std::vector<Upload> stranger{exact(5, {1.0, 1.0})};
    CHECK_THROWS_AS(server_apply(s, stranger, 0.1), WireError);
    std::vector<Upload> wide{exact(0, {1.0, 1.0, 1.0})};
    CHECK_THROWS_AS(server_apply(s, wide, 0.1), WireError);
    const auto msg = codec::make_message(0, 0, codec::QuantizedInnovation{1.0, {3, 0, 1}, 2});
    std::vector<Upload> wire{codec::encode_message(msg)};
    CHECK_THROWS_AS(server_apply(s, wire, 0.1), WireError);
  }

  TEST_CASE("aggregate equals the sum of stored copies after any subset") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0.0, 1.0);
    std::bernoulli_distribution send(0.4);
    ServerState s = initial_server(Eigen::VectorXd::Zero(5), 6);
    for (int round = 0; round < 200; ++round) {
      std::vector<Upload> ups;
      for (std::uint16_t m = 0; m < 6; ++m) {
        if (!send(rng)) continue;
        ExactInnovation e{m, static_cast<std::uint32_t>(round), Eigen::VectorXd(5)};
        for (int i = 0; i < 5; ++i) e.delta(i) = n(rng);
        ups.push_back(e);
      }
      s = server_apply(s, ups, 0.01);
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(5);
      for (const auto& q : s.stored) sum += q;
      REQUIRE((sum - s.aggregate).norm() <= 1e-10 * (1.0 + sum.norm()));
    }
  }

  TEST_CASE("all workers reporting gives the quantized-gradient aggregate") {
    const Problem prob = quadratic_problem(3);
    RunConfig c = config_for(Algorithm::qgd, 0.05, 5);
    c.bits = 6;
    run(c, prob, [&](const ServerState& server, const std::vector<WorkerContext>& workers) {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(prob.dimension());
      for (const auto& w : workers) sum += w.state.stored_quantization;
      CHECK((sum - server.aggregate).norm() <= 1e-12 * (1.0 + sum.norm()));
    });
  }

  TEST_CASE("worker and server copies stay bit-identical") {
    const Problem prob = logistic_problem(4);
    for (Algorithm a : {Algorithm::qgd, Algorithm::laq, Algorithm::lag, Algorithm::slaq}) {
      RunConfig c = config_for(a, 0.5, 60);
      c.minibatch = 10;
      run(c, prob, [&](const ServerState& server, const std::vector<WorkerContext>& workers) {
        for (std::size_t m = 0; m < workers.size(); ++m) {
          REQUIRE(workers[m].state.stored_quantization == server.stored[m]);
        }
      });
    }
  }

  TEST_CASE("stored error is the quantization error of the upload round") {
    const Problem prob = quadratic_problem(5);
    const RunConfig c = config_for(Algorithm::laq, 0.05, 40);
    int checked = 0;
    run(c, prob, [&](const ServerState&, const std::vector<WorkerContext>& workers) {
      for (std::size_t m = 0; m < workers.size(); ++m) {
        const auto& w = workers[m];
        if (w.state.clock != 0) continue;
        const Eigen::VectorXd g =
            losses::gradient(prob.workers[m].model, w.last_params, prob.workers[m].shard);
        CHECK(w.state.stored_error_sq ==
              doctest::Approx((g - w.state.stored_quantization).squaredNorm()).epsilon(1e-12));
        ++checked;
      }
    });
    CHECK(checked > 0);
  }

  TEST_CASE("first round uploads, a repeated gradient is skipped") {
    RunConfig c = config_for(Algorithm::lag, 0.1, 1);
    const auto skip = skip_config(c, 1);
    WorkerContext w = make_worker(0, 3, c);
    const Eigen::Vector3d theta(0.0, 0.0, 0.0);
    const Eigen::Vector3d g(1.0, -2.0, 0.5);

    const RoundResult first = worker_round(w, 0, theta, g, c, skip);
    CHECK(first.upload.has_value());
    CHECK(w.state.clock == 0);
    const Eigen::VectorXd stored = w.state.stored_quantization;

    // Same gradient, same point: zero innovation and clock 1 <= t_bar.
    const RoundResult second = worker_round(w, 1, theta, g, c, skip);
    CHECK_FALSE(second.upload.has_value());
    CHECK(second.delta_sq == 0.0);
    CHECK(w.state.stored_quantization == stored);
    CHECK(w.state.clock == 1);
  }

  TEST_CASE("lag bypasses the codec and is charged 32 bits per coordinate") {
    RunConfig c = config_for(Algorithm::lag, 0.1, 1);
    WorkerContext w = make_worker(0, 3, c);
    const Eigen::Vector3d g(0.1, 0.2, 0.3);
    const RoundResult r = worker_round(w, 0, Eigen::Vector3d::Zero(), g, c, skip_config(c, 1));
    REQUIRE(r.upload.has_value());
    CHECK(std::holds_alternative<ExactInnovation>(*r.upload));
    CHECK(r.error_sq == 0.0);
    CHECK(r.candidate == Eigen::VectorXd(g));

    const Problem prob = quadratic_problem(6);
    const auto out = run(config_for(Algorithm::lag, 0.05, 50), prob);
    const auto& last = out.log.records.back();
    CHECK(last.cumulative_bits == last.cumulative_uploads * 32 * 8);
  }

  TEST_CASE("gd with alpha = 1/L follows the closed-form iterates and never increases the loss") {
    const auto q = data::synthetic_quadratic_split(8, 4, 1.0, 10.0, 7);
    const Problem prob = make_problem(q);
    RunConfig c = config_for(Algorithm::gd, 1.0 / prob.smoothness, 100);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(8, 8);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(8);
    for (const auto& w : q.workers) {
      h += w.A;
      b += w.b;
    }
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(8);
    run(c, prob, [&](const ServerState& server, const std::vector<WorkerContext>&) {
      theta = theta - c.alpha * (h * theta - b);
      REQUIRE((server.params - theta).norm() <= 1e-10 * (1.0 + theta.norm()));
    });
    const auto out = run(c, prob);
    for (std::size_t k = 1; k < out.log.records.size(); ++k) {
      CHECK(out.log.records[k].loss <= out.log.records[k - 1].loss + 1e-12);
    }
  }

  TEST_CASE("single-worker qgd at 32 bits tracks serial gradient descent") {
    const auto q = data::synthetic_quadratic_split(6, 1, 1.0, 10.0, 9);
    const Problem prob = make_problem(q);
    RunConfig c = config_for(Algorithm::qgd, 0.1, 100);
    c.bits = 32;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(6);
    double worst = 0.0;
    run(c, prob, [&](const ServerState& server, const std::vector<WorkerContext>&) {
      theta -= c.alpha * (q.workers[0].A * theta - q.workers[0].b);
      worst = std::max(worst, (server.params - theta).lpNorm<Eigen::Infinity>() /
                                  std::max(1e-12, theta.lpNorm<Eigen::Infinity>()));
    });
    CHECK(worst <= 1e-5);
  }

  TEST_CASE("lag with zero weights and laq at high precision reduce to gd") {
    const Problem prob = logistic_problem(10);
    RunConfig g = config_for(Algorithm::gd, 1.0, 100);
    g.xi.assign(4, 0.0);
    const auto gd = run(g, prob);

    RunConfig l = g;
    l.algorithm = Algorithm::lag;
    const auto lag = run(l, prob);
    CHECK((lag.params - gd.params).norm() <= 1e-9 * gd.params.norm());
    CHECK(lag.log.records.back().cumulative_uploads == 3 * 100);

    RunConfig q = g;
    q.algorithm = Algorithm::laq;
    q.xi.clear();
    q.max_staleness = 0;
    q.bits = 24;
    const auto laq = run(q, prob);
    CHECK((laq.params - gd.params).lpNorm<Eigen::Infinity>() <=
          1e-3 * gd.params.lpNorm<Eigen::Infinity>());
  }

  TEST_CASE("no upload gap exceeds t_bar + 1") {
    const Problem prob = quadratic_problem(11);
    for (int tbar : {4, 7, 15}) {
      RunConfig c = config_for(Algorithm::laq, 0.05, 300);
      c.max_staleness = tbar;
      const auto out = run(c, prob);
      CHECK(metrics::max_upload_gap(out.log) <= static_cast<std::uint64_t>(tbar) + 1);
      for (const auto& r : out.log.records) {
        for (int clock : r.clocks) CHECK(clock <= tbar);
      }
    }
  }

  TEST_CASE("same seed gives byte-identical telemetry") {
    const Problem prob = logistic_problem(12);
    for (Algorithm a : kAllAlgorithms) {
      RunConfig c = config_for(a, 0.5, 40);
      c.minibatch = 7;
      c.seed = 99;
      CHECK(csv_of(run(c, prob).log) == csv_of(run(c, prob).log));
    }
    RunConfig s = config_for(Algorithm::sgd, 0.5, 10);
    s.minibatch = 7;
    s.seed = 1;
    const auto one = run(s, prob).params;
    s.seed = 2;
    CHECK(one != run(s, prob).params);
  }

  TEST_CASE("recipe diagnostics") {
    const double lip = 10.0;
    RunConfig simple;
    apply_simple_recipe(simple, 10, lip);
    CHECK(simple.xi.size() == 10);
    CHECK(simple.xi[0] == doctest::Approx(1.0 / 160.0));
    CHECK(simple.alpha == doctest::Approx(1.0 / 80.0));
    CHECK(validate_recipe(simple, lip).pass);

    RunConfig preset;
    preset.xi = criterion::uniform_xi(10, 0.8);
    preset.alpha = 0.02;
    const auto warn = validate_recipe(preset, lip);
    CHECK_FALSE(warn.pass);
    CHECK(warn.xi_sum == doctest::Approx(0.8));
    CHECK_FALSE(warn.notes.empty());

    RunConfig none;
    none.xi.assign(10, 0.0);
    none.alpha = 1.0 / (8.0 * lip);
    const auto trivial = validate_recipe(none, lip);
    CHECK(trivial.pass);
    CHECK(trivial.xi_limit == doctest::Approx(1.0 / 16.0));
    CHECK(trivial.alpha_limit == doctest::Approx(2.0 / lip / 16.0));

    CHECK_THROWS_AS(apply_simple_recipe(simple, 10, 0.0), ConfigError);
  }

  TEST_CASE("config validation") {
    RunConfig c;
    CHECK_NOTHROW(validate(c, 10));
    CHECK_THROWS_AS(validate(c, 0), ConfigError);
    RunConfig bad = c;
    bad.alpha = -1.0;
    CHECK_THROWS_AS(validate(bad, 1), ConfigError);
    bad = c;
    bad.bits = 33;
    CHECK_THROWS_AS(validate(bad, 1), ConfigError);
    bad = c;
    bad.max_staleness = 5;  // D = 10 exceeds it
    CHECK_THROWS_AS(validate(bad, 1), ConfigError);
    bad = c;
    bad.target_residual = 0.0;
    CHECK_THROWS_AS(validate(bad, 1), ConfigError);
    bad = c;
    bad.algorithm = Algorithm::sgd;
    bad.minibatch = 0;
    CHECK_THROWS_AS(validate(bad, 1), ConfigError);
    bad = c;
    bad.algorithm = Algorithm::gd;
    bad.bits = 0;  // unused without quantization
    CHECK_NOTHROW(validate(bad, 1));
  }

  TEST_CASE("runs stop at the target residual and record every round") {
    const Problem prob = quadratic_problem(13);
    RunConfig c = config_for(Algorithm::gd, 0.05, 10);
    const auto out = run(c, prob);
    CHECK(out.log.records.size() == 11);
    CHECK(out.log.records.front().uploads == 0);
    CHECK(out.log.records[1].uploads == 4);

    c.max_iterations = 100000;
    c.target_residual = 1e-6;
    const auto stopped = run(c, prob);
    CHECK(*stopped.log.records.back().residual <= 1e-6);
    CHECK(*stopped.log.records[stopped.log.records.size() - 2].residual > 1e-6);
  }

  TEST_CASE("an oversized step diverges") {
    const Problem prob = quadratic_problem(14);
    RunConfig c = config_for(Algorithm::gd, 5.0, 1000);
    CHECK_THROWS_AS(run(c, prob), DivergenceError);
  }

  TEST_CASE("reference optimum matches the closed form on a quadratic") {
    const auto q = data::synthetic_quadratic_split(8, 3, 1.0, 10.0, 15);
    const Problem prob = make_problem(q);
    const auto ref = reference_optimum(prob);
    CHECK(ref.grad_norm <= 1e-11);
    CHECK((ref.params - q.optimum).norm() <= 1e-9);
    CHECK(ref.value == doctest::Approx(q.optimal_value).epsilon(1e-12));
  }

  TEST_CASE("descent check stays non-positive for gd at alpha = 1/L") {
    const Problem prob = quadratic_problem(16);
    RunConfig c = config_for(Algorithm::gd, 1.0 / prob.smoothness, 50);
    c.check_descent = true;
    const auto out = run(c, prob);
    REQUIRE(out.log.descent_excess.size() == 50);
    for (double e : out.log.descent_excess) CHECK(e <= 1e-10);
  }
}
