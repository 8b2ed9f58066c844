#include "laq/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "laq/codec.hpp"
#include "laq/errors.hpp"
#include "laq/metrics.hpp"

namespace laq::verify {

namespace {

using Suite = std::function<void(std::uint64_t, std::vector<CheckLine>&)>;

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

double max_coordinate_error(const Eigen::VectorXd& g, const Eigen::VectorXd& c, int bits) {
  const auto qi = codec::quantize_innovation(g, c, bits);
  return (g - (c + codec::decode_innovation(qi))).lpNorm<Eigen::Infinity>();
}

void codec_suite(std::uint64_t seed, std::vector<CheckLine>& out) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_p(1, 256);
  std::uniform_int_distribution<int> pick_b(1, 16);
  std::uniform_real_distribution<double> log_scale(-6.0, 6.0);
  // |c| / R stays within 1e4 of 1: far beyond that, binary64 rounding of c + delta
  // alone exceeds the 2^-40 slack.
  std::uniform_real_distribution<double> log_ratio(-4.0, 4.0);

  int failures = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int p = pick_p(rng);
    const int b = pick_b(rng);
    const double scale = std::pow(10.0, log_scale(rng));
    const Eigen::VectorXd c = random_vector(rng, p, scale);
    const Eigen::VectorXd g = c + random_vector(rng, p, scale * std::pow(10.0, log_ratio(rng)));
    const auto qi = codec::quantize_innovation(g, c, b);
    const double err = (g - (c + codec::decode_innovation(qi))).lpNorm<Eigen::Infinity>();
    const double bound = codec::granularity(b) * qi.radius * (1.0 + std::ldexp(1.0, -40));
    if (err > bound) ++failures;
    if (qi.radius > 0.0) worst = std::max(worst, err / (codec::granularity(b) * qi.radius));
  }
  out.push_back({"codec.error_bound", failures == 0,
                 fmt("trials=10000 failures=%.0f worst_ratio=%.6f", failures, worst)});

  failures = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const int p = pick_p(rng);
    const int b = pick_b(rng);
    const Eigen::VectorXd c = random_vector(rng, p, 1.0);
    const Eigen::VectorXd g = c + random_vector(rng, p, 1.0);
    const auto qi = codec::quantize_innovation(g, c, b);
    const Eigen::VectorXd rec = c + codec::decode_innovation(qi);
    if (codec::quantize_innovation(rec, c, b).codes != qi.codes) ++failures;
  }
  out.push_back({"codec.idempotence", failures == 0, fmt("trials=2000 failures=%.0f", failures)});

  // Grids nest when b divides b', so refinement along divisor chains is exact;
  // for b -> b+1 the grids do not nest and only wide vectors are checked.
  failures = 0;
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int p = std::uniform_int_distribution<int>(1, 64)(rng);
    const Eigen::VectorXd c = random_vector(rng, p, 1.0);
    const Eigen::VectorXd g = c + random_vector(rng, p, 1.0);
    const double radius = (g - c).lpNorm<Eigen::Infinity>();
    for (int b = 1; b <= 8; ++b) {
      const double coarse = max_coordinate_error(g, c, b);
      const double fine = max_coordinate_error(g, c, 2 * b);
      ++checked;
      if (fine > coarse + 1e-14 * radius) ++failures;
    }
  }
  out.push_back({"codec.refinement_nested", failures == 0,
                 fmt("pairs=%.0f failures=%.0f", checked, failures)});
  failures = 0;
  checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int p = std::uniform_int_distribution<int>(64, 256)(rng);
    const Eigen::VectorXd c = random_vector(rng, p, 1.0);
    const Eigen::VectorXd g = c + random_vector(rng, p, 1.0);
    double previous = max_coordinate_error(g, c, 1);
    for (int b = 2; b <= 16; ++b) {
      const double err = max_coordinate_error(g, c, b);
      ++checked;
      if (err > previous * (1.0 + 1e-12)) ++failures;
      previous = err;
    }
  }
  out.push_back({"codec.refinement_wide", failures == 0,
                 fmt("pairs=%.0f failures=%.0f", checked, failures)});

  // Full enumeration when b*p <= 16; otherwise every value at every position
  // over zero, all-ones and random backgrounds.
  long long cases = 0;
  failures = 0;
  auto round_trip = [&](const std::vector<std::uint32_t>& codes, int b) {
    ++cases;
    if (codec::unpack_codes(codec::pack_codes(codes, b), b, codes.size()) != codes) ++failures;
  };
  for (const int b : {1, 2, 3, 4, 8}) {
    const std::uint32_t top = codec::max_code(b);
    for (std::size_t p = 1; p <= 16; ++p) {
      std::vector<std::uint32_t> codes(p, 0u);
      if (b * p <= 16) {
        const std::uint64_t total = std::uint64_t{1} << (b * p);
        for (std::uint64_t word = 0; word < total; ++word) {
          for (std::size_t i = 0; i < p; ++i) codes[i] = (word >> (b * i)) & top;
          round_trip(codes, b);
        }
        continue;
      }
      std::uniform_int_distribution<std::uint32_t> any(0, top);
      for (int background = 0; background < 4; ++background) {
        for (std::size_t i = 0; i < p; ++i) {
          codes[i] = background == 0 ? 0u : background == 1 ? top : any(rng);
        }
        const auto base = codes;
        for (std::size_t i = 0; i < p; ++i) {
          for (std::uint32_t v = 0; v <= top; ++v) {
            codes = base;
            codes[i] = v;
            round_trip(codes, b);
          }
        }
      }
    }
  }
  out.push_back({"codec.pack_roundtrip", failures == 0,
                 fmt("cases=%.0f failures=%.0f", static_cast<double>(cases), failures)});

  failures = 0;
  for (std::uint64_t p = 1; p <= 20000; p += 37) {
    for (int b = 1; b <= 32; ++b) {
      if (codec::payload_bits(p, b) != 32 + static_cast<std::uint64_t>(b) * p) ++failures;
    }
  }
  out.push_back({"codec.payload_bits", failures == 0, fmt("failures=%.0f", failures)});

  failures = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int p = pick_p(rng);
    const int b = std::uniform_int_distribution<int>(1, 32)(rng);
    const Eigen::VectorXd c = random_vector(rng, p, 1.0);
    const Eigen::VectorXd g = c + random_vector(rng, p, 1.0);
    const auto message = codec::make_message(static_cast<std::uint16_t>(trial), 7u * trial,
                                             codec::quantize_innovation(g, c, b));
    const auto bytes = codec::encode_message(message);
    if (bytes.size() != codec::encoded_size(p, b) || codec::decode_message(bytes) != message) {
      ++failures;
    }
  }
  out.push_back({"codec.wire_roundtrip", failures == 0, fmt("trials=500 failures=%.0f", failures)});
}

double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(b.norm(), 1e-12);
  return (a - b).norm() / scale;
}

void gradients_suite(std::uint64_t seed, std::vector<CheckLine>& out) {
  std::mt19937_64 rng(seed);
  auto run_variant = [&](const std::string& name, const losses::Model& model,
                         const losses::DataShard& shard, double scale) {
    double worst = 0.0;
    const Eigen::Index p = losses::parameter_count(model);
    for (int trial = 0; trial < 100; ++trial) {
      const Eigen::VectorXd theta = random_vector(rng, p, scale);
      worst = std::max(worst, relative_error(losses::gradient(model, theta, shard),
                                             losses::finite_diff_gradient(model, theta, shard)));
    }
    out.push_back({"gradients." + name, worst <= 1e-5, fmt("points=100 worst_rel=%.3e", worst)});
  };

  {
    const Eigen::Index p = 8;
    Eigen::MatrixXd m = Eigen::MatrixXd::NullaryExpr(p, p, [&] { return random_vector(rng, 1, 1.0)(0); });
    losses::QuadraticModel q{m * m.transpose(), random_vector(rng, p, 1.0)};
    run_variant("quadratic", q, losses::DataShard{}, 1.0);
  }
  const auto logistic_data = data::synthetic_logistic(40, 6, 3, seed);
  run_variant("logistic", losses::LogisticModel{3, 6, 0.01}, data::full_shard(logistic_data), 1.0);
  const auto mlp_data = data::synthetic_logistic(30, 8, 4, seed + 1);
  run_variant("mlp", losses::MlpModel{8, 6, 4, 0.01}, data::full_shard(mlp_data), 0.5);
}

std::vector<Eigen::VectorXd> trajectory(const engine::RunConfig& config,
                                        const engine::Problem& problem,
                                        metrics::TelemetryLog* log = nullptr) {
  std::vector<Eigen::VectorXd> path;
  auto result = engine::run(config, problem, [&](const engine::ServerState& server, const auto&) {
    path.push_back(server.params);
  });
  if (log) *log = std::move(result.log);
  return path;
}

double max_relative_deviation(const std::vector<Eigen::VectorXd>& a,
                              const std::vector<Eigen::VectorXd>& reference) {
  if (a.size() != reference.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (Eigen::Index i = 0; i < a[k].size(); ++i) {
      const double denom = std::max(std::abs(reference[k](i)), 1e-12);
      worst = std::max(worst, std::abs(a[k](i) - reference[k](i)) / denom);
    }
  }
  return worst;
}

void reductions_suite(std::uint64_t seed, std::vector<CheckLine>& out) {
  {
    const auto problem = reduction_problem(seed);
    engine::RunConfig gd;
    gd.algorithm = Algorithm::gd;
    gd.alpha = 1.0 / problem.smoothness;
    gd.xi = {};
    gd.max_staleness = 0;
    gd.max_iterations = 200;
    engine::RunConfig laq = gd;
    laq.algorithm = Algorithm::laq;
    laq.bits = 24;
    metrics::TelemetryLog log;
    const double dev = max_relative_deviation(trajectory(laq, problem, &log), trajectory(gd, problem));
    const bool all_uploaded = log.records.back().cumulative_uploads == 200 * problem.workers.size();
    out.push_back({"reductions.laq_to_gd", dev <= 1e-3 && all_uploaded,
                   fmt("iterations=200 max_rel_dev=%.3e", dev)});
  }
  {
    data::SyntheticQuadratic q = data::synthetic_quadratic_split(10, 1, 1.0, 10.0, seed);
    const auto problem = engine::make_problem(q);
    engine::RunConfig gd;
    gd.algorithm = Algorithm::gd;
    gd.alpha = 1.0 / problem.smoothness;
    gd.max_iterations = 100;
    engine::RunConfig qgd = gd;
    qgd.algorithm = Algorithm::qgd;
    qgd.bits = 32;
    // Serial GD as the reference: theta <- theta - alpha (A theta - b).
    std::vector<Eigen::VectorXd> serial;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(10);
    for (int k = 0; k < 100; ++k) {
      theta -= gd.alpha * (q.workers[0].A * theta - q.workers[0].b);
      serial.push_back(theta);
    }
    const double dev = max_relative_deviation(trajectory(qgd, problem), serial);
    out.push_back({"reductions.qgd_single_worker", dev <= 1e-5,
                   fmt("iterations=100 max_rel_dev=%.3e", dev)});

    const auto run = engine::run(gd, engine::make_problem(data::synthetic_quadratic_split(
                                         20, 5, 1.0, 10.0, seed)));
    int increases = 0;
    for (std::size_t k = 1; k < run.log.records.size(); ++k) {
      if (run.log.records[k].loss > run.log.records[k - 1].loss) ++increases;
    }
    out.push_back({"reductions.gd_monotone", increases == 0,
                   fmt("iterations=%.0f increases=%.0f", static_cast<double>(run.log.iterations()),
                       increases)});
  }
  {
    const auto problem = rate_problem(seed);
    engine::RunConfig gd;
    gd.algorithm = Algorithm::gd;
    gd.alpha = 1.0 / problem.smoothness;
    gd.xi = {};
    gd.max_staleness = 0;
    gd.max_iterations = 300;
    engine::RunConfig lag = gd;
    lag.algorithm = Algorithm::lag;
    const double dev = max_relative_deviation(trajectory(lag, problem), trajectory(gd, problem));
    out.push_back({"reductions.lag_to_gd", dev <= 1e-9, fmt("iterations=300 max_rel_dev=%.3e", dev)});
  }
}

void prop1_suite(std::uint64_t seed, std::vector<CheckLine>& out) {
  const auto q = prop1_quadratic(seed);
  const auto problem = engine::make_problem(q);
  const auto config = prop1_config(problem);
  const auto result = engine::run(config, problem);
  const auto rows = metrics::prop1_check(result.log, q.smoothness,
                                         engine::skip_config(config, problem.workers.size()));
  bool all = true;
  std::string detail;
  for (const auto& r : rows) {
    all = all && r.pass;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%sw%zu:L=%g,d=%zu,uploads=%llu<=%llu", detail.empty() ? "" : " ",
                  r.worker, q.smoothness[r.worker], r.depth,
                  static_cast<unsigned long long>(r.actual), static_cast<unsigned long long>(r.bound));
    detail += buf;
  }
  out.push_back({"prop1.bound", all, detail});
  const bool ordered = rows[0].actual < rows[3].actual && rows[1].actual < rows[3].actual;
  out.push_back({"prop1.smooth_workers_upload_less", ordered,
                 fmt("L=0.1:%.0f,%.0f L=10:%.0f", static_cast<double>(rows[0].actual),
                     static_cast<double>(rows[1].actual), static_cast<double>(rows[3].actual))});
  const std::uint64_t gap = metrics::max_upload_gap(result.log);
  out.push_back({"prop1.staleness", gap <= static_cast<std::uint64_t>(config.max_staleness) + 1,
                 fmt("max_gap=%.0f limit=%.0f", static_cast<double>(gap), config.max_staleness + 1.0)});
}

void rate_suite(std::uint64_t seed, std::vector<CheckLine>& out) {
  const auto problem = rate_problem(seed);
  {
    const auto result = engine::run(rate_config(problem, Algorithm::laq, 1e-10), problem);
    std::vector<double> residuals;
    for (const auto& r : result.log.records) residuals.push_back(*r.residual);
    const bool reached = residuals.back() <= 1e-10;
    metrics::RateFit fit;
    bool fitted = true;
    try {
      fit = metrics::fit_linear_rate_after_burn_in(residuals, 5);
    } catch (const std::invalid_argument&) {
      fitted = false;
    }
    out.push_back({"rate.linear", reached && fitted && fit.r_squared >= 0.98 && fit.rate < 1.0,
                   fmt("iterations=%.0f sigma=%.6f r2=%.5f", static_cast<double>(residuals.size() - 1),
                       fit.rate, fit.r_squared)});
  }
  {
    auto config = rate_config(problem, Algorithm::laq, 1e-10);
    config.bits = 16;
    const auto result = engine::run(config, problem);
    std::size_t total = 0;
    std::size_t increases = 0;
    const auto& rec = result.log.records;
    for (std::size_t k = config.xi.size() + 1; k < rec.size(); ++k) {
      ++total;
      if (*rec[k].lyapunov > *rec[k - 1].lyapunov) ++increases;
    }
    const double share = total ? 1.0 - static_cast<double>(increases) / total : 1.0;
    out.push_back({"rate.lyapunov_descent", share >= 0.99,
                   fmt("non_increasing_share=%.4f over %.0f steps", share, static_cast<double>(total))});
  }
  {
    const auto laq = engine::run(rate_config(problem, Algorithm::laq, 1e-6), problem).log;
    const auto qgd = engine::run(rate_config(problem, Algorithm::qgd, 1e-6), problem).log;
    const auto gd = engine::run(rate_config(problem, Algorithm::gd, 1e-6), problem).log;
    const double up_ratio = static_cast<double>(laq.records.back().cumulative_uploads) /
                            static_cast<double>(qgd.records.back().cumulative_uploads);
    const double bit_ratio = static_cast<double>(laq.records.back().cumulative_bits) /
                             static_cast<double>(gd.records.back().cumulative_bits);
    out.push_back({"rate.communication_savings", up_ratio <= 0.5 && bit_ratio <= 0.2,
                   fmt("uploads_laq/qgd=%.4f bits_laq/gd=%.4f", up_ratio, bit_ratio)});
  }
}

const std::vector<std::pair<std::string, Suite>>& suites() {
  static const std::vector<std::pair<std::string, Suite>> table = {
      {"codec", codec_suite},
      {"gradients", gradients_suite},
      {"reductions", reductions_suite},
      {"prop1", prop1_suite},
      {"rate", rate_suite},
  };
  return table;
}

}  // namespace

std::vector<std::string> suite_names() {
  std::vector<std::string> names;
  for (const auto& [name, suite] : suites()) names.push_back(name);
  return names;
}

std::vector<CheckLine> run_suite(std::string_view target, std::uint64_t seed) {
  std::vector<CheckLine> lines;
  bool found = false;
  for (const auto& [name, suite] : suites()) {
    if (target == "all" || target == name) {
      suite(seed, lines);
      found = true;
    }
  }
  if (!found) {
    throw ConfigError("unknown verify target '" + std::string(target) +
                      "' (known: codec, gradients, reductions, prop1, rate, all)");
  }
  return lines;
}

std::string format(const CheckLine& line) {
  return std::string(line.pass ? "PASS " : "FAIL ") + line.name + " " + line.detail;
}

engine::Problem reduction_problem(std::uint64_t seed) {
  const auto dataset = data::synthetic_logistic(500, 10, 2, seed);
  const auto plan = data::partition(dataset, 5, data::PartitionMode::uniform, seed);
  return engine::make_problem(dataset, losses::LogisticModel{2, 10, 0.01}, plan);
}

engine::Problem rate_problem(std::uint64_t seed) {
  return engine::make_problem(data::synthetic_quadratic_split(20, 5, 1.0, 10.0, seed));
}

engine::RunConfig rate_config(const engine::Problem& problem, Algorithm algorithm,
                              double target_residual) {
  engine::RunConfig c;
  c.algorithm = algorithm;
  c.bits = 8;
  c.max_staleness = 20;
  engine::apply_simple_recipe(c, 5, problem.smoothness);
  c.max_iterations = 20000;
  c.target_residual = target_residual;
  c.track_lyapunov = true;
  return c;
}

data::SyntheticQuadratic prop1_quadratic(std::uint64_t seed) {
  return data::synthetic_quadratic(20, 4, {0.1, 0.1, 1.0, 10.0}, 0.2, seed);
}

engine::RunConfig prop1_config(const engine::Problem& problem) {
  engine::RunConfig c;
  c.algorithm = Algorithm::laq;
  c.bits = 8;
  c.max_staleness = 100;
  engine::apply_simple_recipe(c, 10, problem.smoothness);
  c.max_iterations = 2000;
  return c;
}

}  // namespace laq::verify
