#include "laq/metrics.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "laq/codec.hpp"
#include "laq/errors.hpp"

namespace laq::metrics {

namespace {

std::string number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

double lyapunov_from_diffs(double residual, std::span<const double> diffs_sq,
                           const std::vector<double>& xi, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("lyapunov: alpha must be > 0");
  const std::size_t depth = xi.size();
  double value = residual;
  double tail = 0.0;  // sum_{j=d}^{D} xi_j, built from the back
  for (std::size_t d = depth; d >= 1; --d) {
    tail += xi[d - 1];
    if (d - 1 < diffs_sq.size()) value += tail / alpha * diffs_sq[d - 1];
  }
  return value;
}

double lyapunov(const std::vector<Eigen::VectorXd>& history, std::optional<double> residual,
                const std::vector<double>& xi, double alpha) {
  if (!residual) throw std::invalid_argument("lyapunov: optimum unknown, residual unavailable");
  std::vector<double> diffs;
  for (std::size_t d = 1; d <= xi.size() && d < history.size(); ++d) {
    diffs.push_back((history[d - 1] - history[d]).squaredNorm());
  }
  return lyapunov_from_diffs(*residual, diffs, xi, alpha);
}

std::uint64_t bits_per_upload(Algorithm algorithm, std::uint64_t dimension, int bits) {
  if (is_quantized(algorithm)) return codec::payload_bits(dimension, bits);
  return 32u * dimension;
}

std::uint64_t bits_accounting(Algorithm algorithm, std::uint64_t dimension, int bits,
                              std::uint64_t uploads) {
  if (uploads == 0) return 0;
  return uploads * bits_per_upload(algorithm, dimension, bits);
}

RateFit fit_linear_rate(std::span<const double> residuals) {
  if (residuals.size() < 10) {
    throw std::invalid_argument("fit_linear_rate: need at least 10 residuals, got " +
                                std::to_string(residuals.size()));
  }
  const auto n = static_cast<double>(residuals.size());
  double mean_k = 0.0;
  double mean_y = 0.0;
  std::vector<double> y(residuals.size());
  for (std::size_t k = 0; k < residuals.size(); ++k) {
    if (!(residuals[k] > 0.0) || !std::isfinite(residuals[k])) {
      throw std::invalid_argument("fit_linear_rate: residual " + std::to_string(k) +
                                  " is not positive");
    }
    y[k] = std::log(residuals[k]);
    mean_k += static_cast<double>(k);
    mean_y += y[k];
  }
  mean_k /= n;
  mean_y /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double dk = static_cast<double>(k) - mean_k;
    const double dy = y[k] - mean_y;
    sxx += dk * dk;
    sxy += dk * dy;
    syy += dy * dy;
  }
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = mean_y - fit.slope * mean_k;
  fit.rate = std::exp(fit.slope);
  // A flat sequence is fitted exactly.
  fit.r_squared = syy <= 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

RateFit fit_linear_rate_after_burn_in(std::span<const double> residuals, std::size_t depth) {
  const std::size_t burn = std::max<std::size_t>(depth, 20);
  if (residuals.size() <= burn) {
    throw std::invalid_argument("fit_linear_rate: sequence shorter than the burn-in");
  }
  return fit_linear_rate(residuals.subspan(burn));
}

std::size_t skip_depth(double smoothness, const criterion::SkipConfig& cfg) {
  const std::size_t depth = cfg.depth();
  if (depth == 0) return 0;
  const double scale = cfg.alpha * static_cast<double>(cfg.num_workers);
  const double denom = 3.0 * scale * scale * static_cast<double>(depth);
  const double l2 = smoothness * smoothness;
  std::size_t best = 0;
  for (std::size_t d = 1; d <= depth; ++d) {
    if (l2 <= cfg.xi[d - 1] / denom) best = d;
  }
  return best;
}

std::vector<Prop1Row> prop1_check(const TelemetryLog& log, const std::vector<double>& smoothness,
                                  const criterion::SkipConfig& cfg) {
  if (!criterion::is_non_increasing(cfg.xi)) {
    throw std::invalid_argument("prop1_check: xi must be non-increasing");
  }
  if (smoothness.size() != log.worker_uploads.size()) {
    throw std::invalid_argument("prop1_check: need one smoothness constant per worker");
  }
  const std::uint64_t k = log.iterations();
  std::vector<Prop1Row> rows;
  for (std::size_t m = 0; m < smoothness.size(); ++m) {
    Prop1Row row;
    row.worker = m;
    row.depth = skip_depth(smoothness[m], cfg);
    row.bound = (k + row.depth) / (row.depth + 1) + 1;
    row.actual = log.worker_uploads[m];
    row.pass = row.actual <= row.bound;
    rows.push_back(row);
  }
  return rows;
}

double laq_descent_bound(double alpha, double smoothness, double grad_norm_sq,
                         double skipped_innovation_sq, double step_sq, double error_sq) {
  return -0.5 * alpha * grad_norm_sq + alpha * skipped_innovation_sq +
         (0.5 * smoothness - 0.5 / alpha) * step_sq + alpha * error_sq;
}

std::uint64_t max_upload_gap(const TelemetryLog& log) {
  std::vector<std::optional<std::uint64_t>> last(log.worker_uploads.size());
  std::uint64_t gap = 0;
  for (std::size_t r = 1; r < log.records.size(); ++r) {
    const auto& clocks = log.records[r].clocks;
    const std::uint64_t round = r - 1;
    for (std::size_t m = 0; m < clocks.size() && m < last.size(); ++m) {
      if (clocks[m] != 0) continue;
      if (last[m]) gap = std::max(gap, round - *last[m]);
      last[m] = round;
    }
  }
  return gap;
}

std::uint64_t recompute_bits(const TelemetryLog& log, Algorithm algorithm,
                             std::uint64_t dimension, int bits) {
  std::uint64_t uploads = 0;
  for (const auto& r : log.records) uploads += static_cast<std::uint64_t>(r.uploads);
  return bits_accounting(algorithm, dimension, bits, uploads);
}

std::vector<std::string> csv_columns() {
  return {"iteration",   "loss",       "loss_residual",   "grad_norm", "uploads",
          "cumulative_uploads", "cumulative_bits", "lyapunov", "clocks"};
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\r\n") == std::string::npos) return text;
  std::string quoted = "\"";
  for (char c : text) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

void write_csv(const TelemetryLog& log, std::ostream& out) {
  for (const auto& [key, value] : log.config) out << "# " << key << '=' << value << '\n';
  const auto columns = csv_columns();
  for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
  out << '\n';
  for (const auto& r : log.records) {
    std::string clocks;
    for (std::size_t m = 0; m < r.clocks.size(); ++m) {
      clocks += (m ? ";" : "") + std::to_string(r.clocks[m]);
    }
    out << r.iteration << ',' << number(r.loss) << ','
        << (r.residual ? number(*r.residual) : "") << ',' << number(r.grad_norm) << ','
        << r.uploads << ',' << r.cumulative_uploads << ',' << r.cumulative_bits << ','
        << (r.lyapunov ? number(*r.lyapunov) : "") << ',' << csv_field(clocks) << '\n';
  }
}

void export_csv(const TelemetryLog& log, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_csv(log, out);
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string format_summary(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %12s %16s %14s %10s\n", "Algorithm", "Iteration #",
                "Communication #", "Bit #", "Accuracy");
  out << line;
  for (const auto& r : rows) {
    char bits[32];
    std::snprintf(bits, sizeof bits, "%.3e", static_cast<double>(r.bits));
    char acc[32] = "-";
    if (r.accuracy) std::snprintf(acc, sizeof acc, "%.4f", *r.accuracy);
    std::snprintf(line, sizeof line, "%-10s %12" PRIu64 " %16" PRIu64 " %14s %10s\n",
                  r.algorithm.c_str(), r.iterations, r.communications, bits, acc);
    out << line;
  }
  return out.str();
}

}  // namespace laq::metrics
