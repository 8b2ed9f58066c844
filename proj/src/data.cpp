#include "laq/data.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "laq/errors.hpp"

namespace laq::data {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) throw DataError(path.string() + ": truncated IDX header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

Eigen::MatrixXd random_orthogonal(Eigen::Index n, std::mt19937_64& rng) {
  const Eigen::MatrixXd g = gaussian_matrix(n, n, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  // Sign fix makes the draw Haar distributed.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return q;
}

Eigen::MatrixXd symmetric_from_spectrum(const Eigen::MatrixXd& basis,
                                        const Eigen::VectorXd& spectrum) {
  Eigen::MatrixXd a = basis * spectrum.asDiagonal() * basis.transpose();
  return 0.5 * (a + a.transpose());
}

}  // namespace

void validate(const Dataset& dataset) {
  if (dataset.features.rows() != dataset.labels.rows()) {
    throw DataError(dataset.name + ": feature and label row counts differ");
  }
  if (!dataset.features.allFinite()) throw DataError(dataset.name + ": non-finite feature");
  if (dataset.labels.cols() != dataset.classes) {
    throw DataError(dataset.name + ": label width does not match class count");
  }
  for (Eigen::Index n = 0; n < dataset.labels.rows(); ++n) {
    const auto row = dataset.labels.row(n);
    const bool one_hot = (row.array() == 0.0 || row.array() == 1.0).all() && row.sum() == 1.0;
    if (!one_hot) throw DataError(dataset.name + ": label row " + std::to_string(n) +
                                  " is not one-hot");
  }
}

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  if (read_be32(img, 0, images) != 2051) throw DataError(images.string() + ": bad IDX magic");
  if (read_be32(lab, 0, labels) != 2049) throw DataError(labels.string() + ": bad IDX magic");

  const std::size_t count = read_be32(img, 4, images);
  const std::size_t rows = read_be32(img, 8, images);
  const std::size_t cols = read_be32(img, 12, images);
  const std::size_t label_count = read_be32(lab, 4, labels);
  if (count == 0) throw DataError(images.string() + ": IDX file declares zero images");
  if (count != label_count) {
    throw DataError("image count " + std::to_string(count) + " != label count " +
                    std::to_string(label_count));
  }
  const std::size_t pixels = rows * cols;
  if (pixels == 0) throw DataError(images.string() + ": zero-sized images");
  if (img.size() != 16 + count * pixels) {
    throw DataError(images.string() + ": expected " + std::to_string(16 + count * pixels) +
                    " bytes, found " + std::to_string(img.size()));
  }
  if (lab.size() != 8 + count) {
    throw DataError(labels.string() + ": expected " + std::to_string(8 + count) +
                    " bytes, found " + std::to_string(lab.size()));
  }

  Dataset ds;
  ds.name = "mnist";
  ds.classes = 10;
  const auto n = static_cast<Eigen::Index>(count);
  ds.features.resize(n, static_cast<Eigen::Index>(pixels));
  ds.labels = Eigen::MatrixXd::Zero(n, 10);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < pixels; ++j) {
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<double>(img[16 + i * pixels + j]) / 255.0;
    }
    const std::uint8_t label = lab[8 + i];
    if (label > 9) {
      throw DataError(labels.string() + ": label " + std::to_string(label) + " at index " +
                      std::to_string(i) + " is out of range");
    }
    ds.labels(static_cast<Eigen::Index>(i), label) = 1.0;
  }
  return ds;
}

Dataset load_libsvm(const std::filesystem::path& path, Eigen::Index feature_dim,
                    std::vector<std::string>* warnings) {
  if (feature_dim < 1) throw DataError("libsvm: feature dimension must be >= 1");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());

  std::vector<double> raw_labels;
  std::vector<std::vector<std::pair<Eigen::Index, double>>> rows;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream tokens(line);
    std::string label_text;
    if (!(tokens >> label_text)) continue;

    double label = 0.0;
    try {
      std::size_t used = 0;
      label = std::stod(label_text, &used);
      if (used != label_text.size()) fail("malformed label '" + label_text + "'");
    } catch (const std::logic_error&) {
      fail("malformed label '" + label_text + "'");
    }

    std::vector<std::pair<Eigen::Index, double>> entries;
    std::string item;
    while (tokens >> item) {
      const auto colon = item.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == item.size()) {
        fail("malformed feature '" + item + "'");
      }
      long long index = 0;
      double value = 0.0;
      try {
        std::size_t used = 0;
        index = std::stoll(item.substr(0, colon), &used);
        if (used != colon) fail("malformed index in '" + item + "'");
        const std::string value_text = item.substr(colon + 1);
        value = std::stod(value_text, &used);
        if (used != value_text.size()) fail("malformed value in '" + item + "'");
      } catch (const std::logic_error&) {
        fail("malformed feature '" + item + "'");
      }
      if (index < 1) fail("feature index " + std::to_string(index) + " is not 1-based");
      if (index > feature_dim) {
        fail("feature index " + std::to_string(index) + " exceeds dimension " +
             std::to_string(feature_dim));
      }
      if (!std::isfinite(value)) fail("non-finite feature value");
      entries.emplace_back(static_cast<Eigen::Index>(index - 1), value);
    }
    raw_labels.push_back(label);
    rows.push_back(std::move(entries));
  }
  if (rows.empty()) throw DataError(path.string() + ": no samples");

  std::vector<double> distinct = raw_labels;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::map<double, Eigen::Index> class_of;
  Eigen::Index classes = static_cast<Eigen::Index>(distinct.size());
  if (distinct.size() == 1) {
    classes = 2;
    class_of[distinct[0]] = distinct[0] > 0.0 ? 1 : 0;
  } else {
    for (std::size_t c = 0; c < distinct.size(); ++c) {
      class_of[distinct[c]] = static_cast<Eigen::Index>(c);
    }
  }

  Dataset ds;
  ds.name = path.stem().string();
  ds.classes = classes;
  const auto n = static_cast<Eigen::Index>(rows.size());
  ds.features = Eigen::MatrixXd::Zero(n, feature_dim);
  ds.labels = Eigen::MatrixXd::Zero(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<bool> seen(static_cast<std::size_t>(feature_dim), false);
    for (const auto& [index, value] : rows[static_cast<std::size_t>(i)]) {
      if (seen[static_cast<std::size_t>(index)] && warnings) {
        warnings->push_back(path.string() + ": sample " + std::to_string(i + 1) +
                            ": duplicate index " + std::to_string(index + 1) +
                            ", keeping the last value");
      }
      seen[static_cast<std::size_t>(index)] = true;
      ds.features(i, index) = value;
    }
    ds.labels(i, class_of.at(raw_labels[static_cast<std::size_t>(i)])) = 1.0;
  }
  return ds;
}

std::string to_string(PartitionMode mode) {
  return mode == PartitionMode::uniform ? "uniform" : "heterogeneous";
}

PartitionMode parse_partition_mode(const std::string& text) {
  if (text == "uniform") return PartitionMode::uniform;
  if (text == "heterogeneous") return PartitionMode::heterogeneous;
  throw ConfigError("unknown partition mode '" + text + "'");
}

PartitionPlan partition(std::size_t samples, std::size_t workers, PartitionMode mode,
                        std::uint64_t seed) {
  if (workers < 1) throw ConfigError("partition: need at least one worker");
  if (workers > samples) {
    throw ConfigError("partition: " + std::to_string(workers) + " workers but only " +
                      std::to_string(samples) + " samples");
  }
  std::mt19937_64 rng(seed);
  PartitionPlan plan;
  plan.mode = mode;
  plan.seed = seed;
  plan.order.resize(samples);
  std::iota(plan.order.begin(), plan.order.end(), std::size_t{0});
  for (std::size_t i = samples; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(plan.order[i - 1], plan.order[pick(rng)]);
  }

  std::vector<std::size_t> sizes(workers, samples / workers);
  if (mode == PartitionMode::uniform) {
    for (std::size_t m = 0; m < samples % workers; ++m) ++sizes[m];
  } else {
    std::exponential_distribution<double> draw(1.0);
    std::vector<double> weight(workers);
    for (auto& w : weight) w = draw(rng);
    const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
    const std::size_t spare = samples - workers;
    std::vector<double> fraction(workers);
    std::size_t assigned = 0;
    for (std::size_t m = 0; m < workers; ++m) {
      const double share = static_cast<double>(spare) * weight[m] / total;
      const auto whole = static_cast<std::size_t>(std::floor(share));
      sizes[m] = 1 + whole;
      fraction[m] = share - static_cast<double>(whole);
      assigned += whole;
    }
    std::vector<std::size_t> rank(workers);
    std::iota(rank.begin(), rank.end(), std::size_t{0});
    std::stable_sort(rank.begin(), rank.end(),
                     [&](std::size_t a, std::size_t b) { return fraction[a] > fraction[b]; });
    for (std::size_t r = 0; assigned < spare; ++r, ++assigned) ++sizes[rank[r % workers]];
  }

  plan.offsets.assign(workers + 1, 0);
  for (std::size_t m = 0; m < workers; ++m) plan.offsets[m + 1] = plan.offsets[m] + sizes[m];
  return plan;
}

std::vector<losses::DataShard> make_shards(const Dataset& dataset, const PartitionPlan& plan) {
  if (plan.order.size() != static_cast<std::size_t>(dataset.samples())) {
    throw ConfigError("partition plan does not match dataset size");
  }
  std::vector<losses::DataShard> shards;
  shards.reserve(plan.workers());
  for (std::size_t m = 0; m < plan.workers(); ++m) {
    const auto rows = static_cast<Eigen::Index>(plan.shard_size(m));
    Eigen::MatrixXd x(rows, dataset.feature_dim());
    Eigen::MatrixXd y(rows, dataset.labels.cols());
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto src = static_cast<Eigen::Index>(plan.order[plan.offsets[m] + r]);
      x.row(r) = dataset.features.row(src);
      y.row(r) = dataset.labels.row(src);
    }
    shards.push_back(losses::make_shard(std::move(x), std::move(y), dataset.samples()));
  }
  return shards;
}

losses::DataShard full_shard(const Dataset& dataset) {
  return losses::make_shard(dataset.features, dataset.labels, dataset.samples());
}

SyntheticQuadratic synthetic_quadratic(Eigen::Index dimension, std::size_t workers,
                                       const std::vector<double>& smoothness, double mu,
                                       std::uint64_t seed) {
  if (dimension < 1 || workers < 1) throw ConfigError("synthetic_quadratic: empty problem");
  if (smoothness.size() != workers) {
    throw ConfigError("synthetic_quadratic: need one smoothness value per worker");
  }
  if (!(mu > 0.0)) throw ConfigError("synthetic_quadratic: mu must be > 0");
  const double floor_eig = mu / static_cast<double>(workers);
  for (double l : smoothness) {
    if (!(l >= floor_eig)) {
      throw ConfigError("synthetic_quadratic: L_m=" + std::to_string(l) +
                        " is below mu/M=" + std::to_string(floor_eig));
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  SyntheticQuadratic out;
  for (std::size_t m = 0; m < workers; ++m) {
    const Eigen::MatrixXd basis = random_orthogonal(dimension, rng);
    Eigen::VectorXd spectrum(dimension);
    spectrum(0) = smoothness[m];
    for (Eigen::Index i = 1; i < dimension; ++i) {
      spectrum(i) = floor_eig + 0.5 * (smoothness[m] - floor_eig) * unit(rng);
    }
    losses::QuadraticModel q;
    q.A = symmetric_from_spectrum(basis, spectrum);
    q.b.resize(dimension);
    for (Eigen::Index i = 0; i < dimension; ++i) q.b(i) = normal(rng);
    out.workers.push_back(std::move(q));
    out.smoothness.push_back(smoothness[m]);
  }
  solve_optimum(out);
  return out;
}

SyntheticQuadratic synthetic_quadratic_split(Eigen::Index dimension, std::size_t workers,
                                             double mu, double smoothness, std::uint64_t seed) {
  if (dimension < 1 || workers < 1) throw ConfigError("synthetic_quadratic: empty problem");
  if (!(mu > 0.0) || !(smoothness >= mu)) {
    throw ConfigError("synthetic_quadratic: need 0 < mu <= L");
  }
  if (dimension == 1 && mu != smoothness) {
    throw ConfigError("synthetic_quadratic: a 1-dimensional spectrum cannot span [mu, L]");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.5, 1.5);
  std::normal_distribution<double> normal(0.0, 1.0);

  const Eigen::MatrixXd basis = random_orthogonal(dimension, rng);
  Eigen::VectorXd spectrum(dimension);
  for (Eigen::Index i = 0; i < dimension; ++i) {
    spectrum(i) = dimension == 1 ? smoothness
                                 : mu + (smoothness - mu) * static_cast<double>(i) /
                                            static_cast<double>(dimension - 1);
  }
  Eigen::MatrixXd weights(dimension, static_cast<Eigen::Index>(workers));
  for (Eigen::Index i = 0; i < dimension; ++i) {
    for (Eigen::Index m = 0; m < weights.cols(); ++m) weights(i, m) = unit(rng);
    weights.row(i) /= weights.row(i).sum();
  }

  SyntheticQuadratic out;
  for (std::size_t m = 0; m < workers; ++m) {
    const Eigen::VectorXd local = spectrum.cwiseProduct(weights.col(static_cast<Eigen::Index>(m)));
    losses::QuadraticModel q;
    q.A = symmetric_from_spectrum(basis, local);
    q.b.resize(dimension);
    for (Eigen::Index i = 0; i < dimension; ++i) q.b(i) = normal(rng);
    out.workers.push_back(std::move(q));
    out.smoothness.push_back(local.maxCoeff());
  }
  solve_optimum(out);
  return out;
}

void solve_optimum(SyntheticQuadratic& problem) {
  if (problem.workers.empty()) throw ConfigError("solve_optimum: no workers");
  const Eigen::Index p = problem.workers.front().b.size();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  for (const auto& w : problem.workers) {
    h += w.A;
    rhs += w.b;
  }
  problem.optimum = h.ldlt().solve(rhs);
  problem.optimal_value = 0.5 * problem.optimum.dot(h * problem.optimum) - rhs.dot(problem.optimum);
}

Dataset synthetic_logistic(Eigen::Index samples, Eigen::Index features, Eigen::Index classes,
                           std::uint64_t seed) {
  if (samples < 1 || features < 1 || classes < 2) {
    throw ConfigError("synthetic_logistic: need N >= 1, F >= 1, C >= 2");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Dataset ds;
  ds.name = "synthetic";
  ds.classes = classes;
  ds.features = gaussian_matrix(samples, features, rng);
  const Eigen::MatrixXd teacher = gaussian_matrix(classes, features, rng);
  const Eigen::MatrixXd scores = ds.features * teacher.transpose();
  ds.labels = Eigen::MatrixXd::Zero(samples, classes);
  for (Eigen::Index n = 0; n < samples; ++n) {
    Eigen::RowVectorXd prob = (scores.row(n).array() - scores.row(n).maxCoeff()).exp();
    prob /= prob.sum();
    const double u = unit(rng);
    double cumulative = 0.0;
    Eigen::Index label = classes - 1;
    for (Eigen::Index c = 0; c < classes; ++c) {
      cumulative += prob(c);
      if (u < cumulative) {
        label = c;
        break;
      }
    }
    ds.labels(n, label) = 1.0;
  }
  return ds;
}

}  // namespace laq::data
