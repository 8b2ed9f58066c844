#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "laq/losses.hpp"

namespace laq::data {

struct Dataset {
  Eigen::MatrixXd features;  // N x F
  Eigen::MatrixXd labels;    // N x C one-hot
  std::string name;
  Eigen::Index classes = 0;

  Eigen::Index samples() const { return features.rows(); }
  Eigen::Index feature_dim() const { return features.cols(); }
};

/// Throws DataError on NaN/Inf features or labels that are not one-hot.
void validate(const Dataset& dataset);

/// IDX image (magic 2051) and label (magic 2049) files; pixels scaled to [0, 1].
Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Dense LIBSVM reader. Label values are mapped to classes in sorted order;
/// two or fewer distinct labels give C = 2. Repeated indices on one line keep
/// the last value and add a warning to `warnings` when given.
Dataset load_libsvm(const std::filesystem::path& path, Eigen::Index feature_dim,
                    std::vector<std::string>* warnings = nullptr);

enum class PartitionMode { uniform, heterogeneous };

std::string to_string(PartitionMode mode);
PartitionMode parse_partition_mode(const std::string& text);

struct PartitionPlan {
  std::vector<std::size_t> order;    // permutation of [0, N)
  std::vector<std::size_t> offsets;  // M + 1 entries; shard m = order[offsets[m], offsets[m+1])
  PartitionMode mode = PartitionMode::uniform;
  std::uint64_t seed = 0;

  std::size_t workers() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t shard_size(std::size_t m) const { return offsets[m + 1] - offsets[m]; }
  bool operator==(const PartitionPlan&) const = default;
};

PartitionPlan partition(std::size_t samples, std::size_t workers, PartitionMode mode,
                        std::uint64_t seed);
inline PartitionPlan partition(const Dataset& dataset, std::size_t workers, PartitionMode mode,
                               std::uint64_t seed) {
  return partition(static_cast<std::size_t>(dataset.samples()), workers, mode, seed);
}

/// Shards normalized against the full dataset size.
std::vector<losses::DataShard> make_shards(const Dataset& dataset, const PartitionPlan& plan);

losses::DataShard full_shard(const Dataset& dataset);

struct SyntheticQuadratic {
  std::vector<losses::QuadraticModel> workers;
  Eigen::VectorXd optimum;
  double optimal_value = 0.0;
  std::vector<double> smoothness;  // exact lambda_max(A_m)
};

/// Per-worker A_m = U_m diag(s_m) U_m' with a seeded orthogonal U_m and
/// lambda_max(A_m) = L_m exactly; every eigenvalue is >= mu/M so the sum has
/// lambda_min >= mu.
SyntheticQuadratic synthetic_quadratic(Eigen::Index dimension, std::size_t workers,
                                       const std::vector<double>& smoothness, double mu,
                                       std::uint64_t seed);

/// Global Hessian H = U diag(s) U' with s spanning [mu, L] exactly, split into
/// M PSD pieces sharing U with seeded positive per-eigenvalue weights.
SyntheticQuadratic synthetic_quadratic_split(Eigen::Index dimension, std::size_t workers,
                                             double mu, double smoothness, std::uint64_t seed);

/// Closed-form minimizer of sum_m (1/2 theta' A_m theta - b_m' theta).
void solve_optimum(SyntheticQuadratic& problem);

/// Gaussian features labelled by a seeded linear softmax teacher.
Dataset synthetic_logistic(Eigen::Index samples, Eigen::Index features, Eigen::Index classes,
                           std::uint64_t seed);

}  // namespace laq::data
