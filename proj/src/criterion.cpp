#include "laq/criterion.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace laq::criterion {

void validate(const SkipConfig& cfg) {
  if (!(cfg.alpha > 0.0)) throw std::invalid_argument("alpha must be > 0");
  if (cfg.num_workers < 1) throw std::invalid_argument("need at least one worker");
  if (cfg.max_staleness < 0) throw std::invalid_argument("max_staleness must be >= 0");
  for (double x : cfg.xi) {
    if (!(x >= 0.0)) throw std::invalid_argument("xi entries must be >= 0");
  }
  if (cfg.xi.size() > static_cast<std::size_t>(cfg.max_staleness)) {
    throw std::invalid_argument("history depth D=" + std::to_string(cfg.xi.size()) +
                                " exceeds max_staleness=" + std::to_string(cfg.max_staleness));
  }
}

bool is_non_increasing(const std::vector<double>& xi) {
  for (std::size_t d = 1; d < xi.size(); ++d) {
    if (xi[d] > xi[d - 1]) return false;
  }
  return true;
}

std::vector<double> uniform_xi(std::size_t depth, double total) {
  if (depth == 0) return {};
  return std::vector<double>(depth, total / static_cast<double>(depth));
}

WorkerState initial_state(Eigen::Index dimension, std::size_t depth) {
  WorkerState s;
  s.stored_quantization = Eigen::VectorXd::Zero(dimension);
  s.diff_history = DiffHistory(depth);
  return s;
}

double rhs_threshold(const WorkerState& state, const SkipConfig& cfg, double current_error_sq) {
  const std::size_t depth = std::min(cfg.xi.size(), state.diff_history.size());
  double weighted = 0.0;
  for (std::size_t d = 1; d <= depth; ++d) weighted += cfg.xi[d - 1] * state.diff_history.at(d);
  const double scale = cfg.alpha * static_cast<double>(cfg.num_workers);
  return weighted / (scale * scale) + 3.0 * (current_error_sq + state.stored_error_sq);
}

bool should_skip(double candidate_delta_sq, const WorkerState& state, const SkipConfig& cfg,
                 double current_error_sq) {
  if (state.clock > cfg.max_staleness) return false;
  return candidate_delta_sq <= rhs_threshold(state, cfg, current_error_sq);
}

WorkerState tick(WorkerState state, double newest_diff_sq) {
  ++state.clock;
  state.diff_history.push(newest_diff_sq);
  return state;
}

WorkerState on_upload(WorkerState state, Eigen::VectorXd new_quantization, double new_error_sq) {
  state.stored_quantization = std::move(new_quantization);
  state.stored_error_sq = new_error_sq;
  state.clock = 0;
  return state;
}

}  // namespace laq::criterion
