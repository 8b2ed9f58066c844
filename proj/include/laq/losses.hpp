#pragma once

// Local objectives f_m for the three model families.
//
// Data terms use a global 1/N normalization and the ridge term is shared in
// proportion N_m/N, so summing the local objectives over a partition gives
//   f(theta) = (1/N) sum_n CE(x_n; theta) + (lambda/2) ||theta||^2.

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <variant>

namespace laq::losses {

/// f(theta) = 1/2 theta' A theta - b' theta
struct QuadraticModel {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
};

/// Multinomial logistic regression; theta is a classes x features matrix,
/// flattened column-major.
struct LogisticModel {
  Eigen::Index classes = 10;
  Eigen::Index features = 784;
  double lambda = 0.01;
};

/// One ReLU hidden layer with biases. Parameter layout:
/// W1 (hidden x inputs), b1, W2 (outputs x hidden), b2, each column-major.
struct MlpModel {
  Eigen::Index inputs = 784;
  Eigen::Index hidden = 200;
  Eigen::Index outputs = 10;
  double lambda = 0.01;
};

using Model = std::variant<QuadraticModel, LogisticModel, MlpModel>;

std::string model_name(const Model& model);

struct DataShard {
  Eigen::MatrixXd features;  // N_m x F
  Eigen::MatrixXd labels;    // N_m x C, one-hot rows
  double data_scale = 1.0;   // multiplies the summed per-sample losses (1/N)
  double reg_share = 1.0;    // fraction of the ridge term carried by this shard (N_m/N)
};

/// Shard of a dataset with `total_samples` rows overall.
DataShard make_shard(Eigen::MatrixXd features, Eigen::MatrixXd labels,
                     Eigen::Index total_samples);

Eigen::Index parameter_count(const Model& model);

/// Zeros for convex models; seeded Glorot-uniform weights and zero biases for the MLP.
Eigen::VectorXd initial_parameters(const Model& model, std::uint64_t seed);

double loss(const Model& model, const Eigen::VectorXd& params, const DataShard& shard);
Eigen::VectorXd gradient(const Model& model, const Eigen::VectorXd& params,
                         const DataShard& shard);

/// Loss and gradient from one forward/backward pass.
double loss_and_gradient(const Model& model, const Eigen::VectorXd& params,
                         const DataShard& shard, Eigen::VectorXd& grad);

Eigen::VectorXd finite_diff_gradient(const Model& model, const Eigen::VectorXd& params,
                                     const DataShard& shard, double h = 1e-6);

/// Class scores (N x C) for the classifier models.
Eigen::MatrixXd predict_scores(const Model& model, const Eigen::VectorXd& params,
                               const Eigen::MatrixXd& features);

/// Fraction of rows whose arg-max score matches the arg-max label.
double accuracy(const Model& model, const Eigen::VectorXd& params,
                const Eigen::MatrixXd& features, const Eigen::MatrixXd& labels);

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
double largest_eigenvalue(const Eigen::MatrixXd& symmetric, double tol = 1e-9,
                          int max_iterations = 100000);

/// Gradient Lipschitz constant: exact for quadratics, an upper bound for
/// logistic regression. Throws std::invalid_argument for the MLP.
double smoothness_constant(const Model& model, const DataShard& shard);

}  // namespace laq::losses
