#pragma once

// Per-worker skip rule for lazy aggregation.
//
// A worker skips its upload in round k when
//
//   ||Q_old - Q_k||^2 <= 1/(alpha^2 M^2) sum_d xi_d ||theta^{k+1-d} - theta^{k-d}||^2
//                        + 3 (||eps_k||^2 + ||eps_old||^2)
//
// and its clock (rounds since its last upload, counting round k) is <= max_staleness.

#include <Eigen/Core>

#include <cstddef>
#include <vector>

namespace laq::criterion {

struct SkipConfig {
  double alpha = 0.02;
  int num_workers = 1;
  std::vector<double> xi;  // xi_1..xi_D
  int max_staleness = 100;

  std::size_t depth() const { return xi.size(); }
};

/// Throws std::invalid_argument unless alpha > 0, M >= 1, xi >= 0 and D <= max_staleness.
void validate(const SkipConfig& cfg);

/// True when xi_1 >= xi_2 >= ... >= xi_D.
bool is_non_increasing(const std::vector<double>& xi);

/// xi_d = value / D for d = 1..D.
std::vector<double> uniform_xi(std::size_t depth, double total);

/// Fixed-capacity history of squared parameter steps, newest first.
class DiffHistory {
 public:
  DiffHistory() = default;
  explicit DiffHistory(std::size_t depth) : values_(depth, 0.0) {}

  std::size_t size() const { return values_.size(); }

  /// d = 1 is ||theta^k - theta^{k-1}||^2, d = D the oldest retained step.
  double at(std::size_t d) const { return values_[(head_ + d - 1) % values_.size()]; }

  void push(double newest) {
    if (values_.empty()) return;
    head_ = (head_ + values_.size() - 1) % values_.size();
    values_[head_] = newest;
  }

  bool operator==(const DiffHistory&) const = default;

 private:
  std::vector<double> values_;
  std::size_t head_ = 0;
};

struct WorkerState {
  Eigen::VectorXd stored_quantization;
  double stored_error_sq = 0.0;
  int clock = 0;
  DiffHistory diff_history;
};

WorkerState initial_state(Eigen::Index dimension, std::size_t depth);

double rhs_threshold(const WorkerState& state, const SkipConfig& cfg, double current_error_sq);

bool should_skip(double candidate_delta_sq, const WorkerState& state, const SkipConfig& cfg,
                 double current_error_sq);

/// Start of a round: one more iteration since the last upload, and the newest
/// broadcast step enters the history. Runs every round, upload or skip.
WorkerState tick(WorkerState state, double newest_diff_sq);

/// The candidate becomes the stored quantization and the clock restarts.
WorkerState on_upload(WorkerState state, Eigen::VectorXd new_quantization, double new_error_sq);

}  // namespace laq::criterion
