#include "laq/losses.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>

namespace laq::losses {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_finite(const Eigen::VectorXd& params) {
  if (!params.allFinite()) throw std::invalid_argument("parameters contain NaN or Inf");
}

void require_size(const Model& model, const Eigen::VectorXd& params) {
  const Eigen::Index p = parameter_count(model);
  if (params.size() != p) {
    throw std::invalid_argument(model_name(model) + " model expects " + std::to_string(p) +
                                " parameters, got " + std::to_string(params.size()));
  }
  require_finite(params);
}

void require_shard(const DataShard& shard, Eigen::Index features, Eigen::Index classes) {
  if (shard.features.rows() != shard.labels.rows()) {
    throw std::invalid_argument("shard has " + std::to_string(shard.features.rows()) +
                                " feature rows but " + std::to_string(shard.labels.rows()) +
                                " label rows");
  }
  if (shard.features.rows() > 0 && shard.features.cols() != features) {
    throw std::invalid_argument("shard feature dimension " +
                                std::to_string(shard.features.cols()) + " != model's " +
                                std::to_string(features));
  }
  if (shard.labels.rows() > 0 && shard.labels.cols() != classes) {
    throw std::invalid_argument("shard label dimension " + std::to_string(shard.labels.cols()) +
                                " != model's " + std::to_string(classes));
  }
}

// Cross-entropy summed over rows for scores Z and (soft) labels Y. When
// `dscores` is non-null it receives d(sum CE)/dZ.
double cross_entropy(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels,
                     Eigen::MatrixXd* dscores) {
  double total = 0.0;
  if (dscores) dscores->resize(scores.rows(), scores.cols());
  for (Eigen::Index n = 0; n < scores.rows(); ++n) {
    const double top = scores.row(n).maxCoeff();
    const Eigen::RowVectorXd shifted = scores.row(n).array() - top;
    const Eigen::RowVectorXd expd = shifted.array().exp();
    const double z = expd.sum();
    const double lse = std::log(z);
    const double mass = labels.row(n).sum();
    total += mass * lse - labels.row(n).dot(shifted);
    if (dscores) dscores->row(n) = mass * expd / z - labels.row(n);
  }
  return total;
}

struct MlpView {
  Eigen::Map<const Eigen::MatrixXd> w1, w2;
  Eigen::Map<const Eigen::VectorXd> b1, b2;

  MlpView(const MlpModel& m, const double* data)
      : w1(data, m.hidden, m.inputs),
        w2(data + m.hidden * m.inputs + m.hidden, m.outputs, m.hidden),
        b1(data + m.hidden * m.inputs, m.hidden),
        b2(data + m.hidden * m.inputs + m.hidden + m.outputs * m.hidden, m.outputs) {}
};

double logistic_eval(const LogisticModel& m, const Eigen::VectorXd& params,
                     const DataShard& shard, Eigen::VectorXd* grad) {
  require_shard(shard, m.features, m.classes);
  Eigen::Map<const Eigen::MatrixXd> theta(params.data(), m.classes, m.features);
  double value = 0.5 * m.lambda * shard.reg_share * params.squaredNorm();
  Eigen::MatrixXd dscores;
  if (shard.features.rows() > 0) {
    const Eigen::MatrixXd scores = shard.features * theta.transpose();
    value += shard.data_scale * cross_entropy(scores, shard.labels, grad ? &dscores : nullptr);
  }
  if (grad) {
    grad->noalias() = m.lambda * shard.reg_share * params;
    if (shard.features.rows() > 0) {
      Eigen::Map<Eigen::MatrixXd> g(grad->data(), m.classes, m.features);
      g.noalias() += shard.data_scale * dscores.transpose() * shard.features;
    }
  }
  return value;
}

double mlp_eval(const MlpModel& m, const Eigen::VectorXd& params, const DataShard& shard,
                Eigen::VectorXd* grad) {
  require_shard(shard, m.inputs, m.outputs);
  const MlpView v(m, params.data());
  double value = 0.5 * m.lambda * shard.reg_share * params.squaredNorm();
  if (grad) grad->noalias() = m.lambda * shard.reg_share * params;
  if (shard.features.rows() == 0) return value;

  Eigen::MatrixXd pre = shard.features * v.w1.transpose();
  pre.rowwise() += v.b1.transpose();
  const Eigen::MatrixXd hidden = pre.cwiseMax(0.0);
  Eigen::MatrixXd scores = hidden * v.w2.transpose();
  scores.rowwise() += v.b2.transpose();

  Eigen::MatrixXd dscores;
  value += shard.data_scale * cross_entropy(scores, shard.labels, grad ? &dscores : nullptr);
  if (!grad) return value;

  dscores *= shard.data_scale;
  double* g = grad->data();
  Eigen::Map<Eigen::MatrixXd> gw1(g, m.hidden, m.inputs);
  Eigen::Map<Eigen::VectorXd> gb1(g + m.hidden * m.inputs, m.hidden);
  Eigen::Map<Eigen::MatrixXd> gw2(g + m.hidden * m.inputs + m.hidden, m.outputs, m.hidden);
  Eigen::Map<Eigen::VectorXd> gb2(g + m.hidden * m.inputs + m.hidden + m.outputs * m.hidden,
                                  m.outputs);
  gw2.noalias() += dscores.transpose() * hidden;
  gb2 += dscores.colwise().sum().transpose();
  Eigen::MatrixXd dpre = dscores * v.w2;
  dpre.array() *= (pre.array() > 0.0).cast<double>();
  gw1.noalias() += dpre.transpose() * shard.features;
  gb1 += dpre.colwise().sum().transpose();
  return value;
}

double quadratic_eval(const QuadraticModel& m, const Eigen::VectorXd& params,
                      Eigen::VectorXd* grad) {
  const Eigen::VectorXd a_theta = m.A * params;
  if (grad) *grad = a_theta - m.b;
  return 0.5 * params.dot(a_theta) - m.b.dot(params);
}

double evaluate(const Model& model, const Eigen::VectorXd& params, const DataShard& shard,
                Eigen::VectorXd* grad) {
  require_size(model, params);
  if (grad) grad->resize(params.size());
  return std::visit(
      Overloaded{
          [&](const QuadraticModel& m) { return quadratic_eval(m, params, grad); },
          [&](const LogisticModel& m) { return logistic_eval(m, params, shard, grad); },
          [&](const MlpModel& m) { return mlp_eval(m, params, shard, grad); },
      },
      model);
}

}  // namespace

std::string model_name(const Model& model) {
  return std::visit(Overloaded{
                        [](const QuadraticModel&) { return std::string("quadratic"); },
                        [](const LogisticModel&) { return std::string("logistic"); },
                        [](const MlpModel&) { return std::string("mlp"); },
                    },
                    model);
}

DataShard make_shard(Eigen::MatrixXd features, Eigen::MatrixXd labels,
                     Eigen::Index total_samples) {
  if (total_samples < 1) throw std::invalid_argument("total sample count must be >= 1");
  DataShard s;
  const auto rows = static_cast<double>(features.rows());
  s.features = std::move(features);
  s.labels = std::move(labels);
  s.data_scale = 1.0 / static_cast<double>(total_samples);
  s.reg_share = rows / static_cast<double>(total_samples);
  return s;
}

Eigen::Index parameter_count(const Model& model) {
  return std::visit(Overloaded{
                        [](const QuadraticModel& m) { return m.b.size(); },
                        [](const LogisticModel& m) { return m.classes * m.features; },
                        [](const MlpModel& m) {
                          return m.hidden * m.inputs + m.hidden + m.outputs * m.hidden +
                                 m.outputs;
                        },
                    },
                    model);
}

Eigen::VectorXd initial_parameters(const Model& model, std::uint64_t seed) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(parameter_count(model));
  if (const auto* m = std::get_if<MlpModel>(&model)) {
    std::mt19937_64 rng(seed);
    auto fill = [&](double* data, Eigen::Index count, Eigen::Index fan_in, Eigen::Index fan_out) {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index i = 0; i < count; ++i) data[i] = dist(rng);
    };
    fill(theta.data(), m->hidden * m->inputs, m->inputs, m->hidden);
    fill(theta.data() + m->hidden * m->inputs + m->hidden, m->outputs * m->hidden, m->hidden,
         m->outputs);
  }
  return theta;
}

double loss(const Model& model, const Eigen::VectorXd& params, const DataShard& shard) {
  return evaluate(model, params, shard, nullptr);
}

Eigen::VectorXd gradient(const Model& model, const Eigen::VectorXd& params,
                         const DataShard& shard) {
  Eigen::VectorXd g;
  evaluate(model, params, shard, &g);
  return g;
}

double loss_and_gradient(const Model& model, const Eigen::VectorXd& params,
                         const DataShard& shard, Eigen::VectorXd& grad) {
  return evaluate(model, params, shard, &grad);
}

Eigen::VectorXd finite_diff_gradient(const Model& model, const Eigen::VectorXd& params,
                                     const DataShard& shard, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be > 0");
  require_size(model, params);
  Eigen::VectorXd g(params.size());
  Eigen::VectorXd probe = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double x = params(i);
    probe(i) = x + h;
    const double up = loss(model, probe, shard);
    probe(i) = x - h;
    const double down = loss(model, probe, shard);
    probe(i) = x;
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

Eigen::MatrixXd predict_scores(const Model& model, const Eigen::VectorXd& params,
                               const Eigen::MatrixXd& features) {
  require_size(model, params);
  if (const auto* m = std::get_if<LogisticModel>(&model)) {
    Eigen::Map<const Eigen::MatrixXd> theta(params.data(), m->classes, m->features);
    return features * theta.transpose();
  }
  if (const auto* m = std::get_if<MlpModel>(&model)) {
    const MlpView v(*m, params.data());
    Eigen::MatrixXd pre = features * v.w1.transpose();
    pre.rowwise() += v.b1.transpose();
    Eigen::MatrixXd scores = pre.cwiseMax(0.0) * v.w2.transpose();
    scores.rowwise() += v.b2.transpose();
    return scores;
  }
  throw std::invalid_argument("predict_scores: quadratic model has no classifier output");
}

double accuracy(const Model& model, const Eigen::VectorXd& params,
                const Eigen::MatrixXd& features, const Eigen::MatrixXd& labels) {
  if (features.rows() == 0) return 0.0;
  const Eigen::MatrixXd scores = predict_scores(model, params, features);
  Eigen::Index hits = 0;
  for (Eigen::Index n = 0; n < scores.rows(); ++n) {
    Eigen::Index predicted = 0;
    Eigen::Index truth = 0;
    scores.row(n).maxCoeff(&predicted);
    labels.row(n).maxCoeff(&truth);
    hits += predicted == truth ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.rows());
}

double largest_eigenvalue(const Eigen::MatrixXd& symmetric, double tol, int max_iterations) {
  if (symmetric.rows() != symmetric.cols()) {
    throw std::invalid_argument("largest_eigenvalue: matrix is not square");
  }
  const Eigen::Index n = symmetric.rows();
  if (n == 0) return 0.0;
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(rng);
  v.normalize();

  double lambda = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    const Eigen::VectorXd av = symmetric * v;
    const double norm = av.norm();
    if (norm == 0.0) return 0.0;
    lambda = v.dot(av);
    const double residual = (av - lambda * v).norm();
    if (residual <= tol * std::abs(lambda)) break;
    v = av / norm;
  }
  return lambda;
}

double smoothness_constant(const Model& model, const DataShard& shard) {
  if (const auto* m = std::get_if<QuadraticModel>(&model)) {
    return largest_eigenvalue(m->A);
  }
  if (const auto* m = std::get_if<LogisticModel>(&model)) {
    require_shard(shard, m->features, m->classes);
    // Softmax cross-entropy has logit Hessian diag(p) - pp' with norm <= 1/2.
    double data = 0.0;
    if (shard.features.rows() > 0) {
      const Eigen::MatrixXd gram = shard.features.transpose() * shard.features;
      data = 0.5 * shard.data_scale * largest_eigenvalue(gram);
    }
    return data + m->lambda * shard.reg_share;
  }
  throw std::invalid_argument("smoothness_constant: unsupported for the mlp model");
}

}  // namespace laq::losses
