#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "laq/algorithm.hpp"
#include "laq/criterion.hpp"

namespace laq::metrics {

/// Snapshot after `iteration` server updates. `uploads` counts the uploads of
/// the round that produced this iterate (zero for the initial snapshot).
struct TelemetryRecord {
  std::uint64_t iteration = 0;
  double loss = 0.0;
  std::optional<double> residual;
  double grad_norm = 0.0;
  int uploads = 0;
  std::uint64_t cumulative_uploads = 0;
  std::uint64_t cumulative_bits = 0;
  std::optional<double> lyapunov;
  std::vector<int> clocks;

  bool operator==(const TelemetryRecord&) const = default;
};

struct TelemetryLog {
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<TelemetryRecord> records;
  std::vector<std::uint64_t> worker_uploads;
  /// Lemma-2 check, one entry per executed round when enabled:
  /// f(theta^{k+1}) - f(theta^k) - (Delta_LAQ^k + alpha ||eps^k||^2).
  std::vector<double> descent_excess;

  std::uint64_t iterations() const { return records.empty() ? 0 : records.size() - 1; }
};

/// f - f* plus the xi-weighted history; `diffs_sq[d-1]` is
/// ||theta^{k+1-d} - theta^{k-d}||^2 and missing entries count as zero.
double lyapunov_from_diffs(double residual, std::span<const double> diffs_sq,
                           const std::vector<double>& xi, double alpha);

/// `history` holds theta^k, theta^{k-1}, ... newest first (at most D+1 used).
/// Throws std::invalid_argument when the residual is unknown.
double lyapunov(const std::vector<Eigen::VectorXd>& history, std::optional<double> residual,
                const std::vector<double>& xi, double alpha);

/// Bits per upload: 32 + b p for quantized algorithms, 32 p otherwise.
std::uint64_t bits_per_upload(Algorithm algorithm, std::uint64_t dimension, int bits);
std::uint64_t bits_accounting(Algorithm algorithm, std::uint64_t dimension, int bits,
                              std::uint64_t uploads);

struct RateFit {
  double rate = 1.0;
  double r_squared = 1.0;
  double slope = 0.0;
  double intercept = 0.0;
};

/// Least-squares fit of log(residual_k) against k; rate = exp(slope).
RateFit fit_linear_rate(std::span<const double> residuals);

/// Drops the first max(D, 20) entries, then fits.
RateFit fit_linear_rate_after_burn_in(std::span<const double> residuals, std::size_t depth);

/// Largest d in 1..D with L_m^2 <= xi_d / (3 alpha^2 M^2 D); 0 when none.
std::size_t skip_depth(double smoothness, const criterion::SkipConfig& cfg);

struct Prop1Row {
  std::size_t worker = 0;
  std::size_t depth = 0;
  std::uint64_t bound = 0;
  std::uint64_t actual = 0;
  bool pass = false;
};

/// Upload-count bound ceil(k / (d_m + 1)) + 1 per worker over the executed rounds.
std::vector<Prop1Row> prop1_check(const TelemetryLog& log, const std::vector<double>& smoothness,
                                  const criterion::SkipConfig& cfg);

/// Delta_LAQ^k + alpha ||eps^k||^2 from the one-step descent lemma.
double laq_descent_bound(double alpha, double smoothness, double grad_norm_sq,
                         double skipped_innovation_sq, double step_sq, double error_sq);

/// Largest number of rounds between consecutive uploads of any worker,
/// reconstructed from the clock snapshots (clock 0 marks an upload).
std::uint64_t max_upload_gap(const TelemetryLog& log);

/// Cumulative bits implied by the per-round upload counts.
std::uint64_t recompute_bits(const TelemetryLog& log, Algorithm algorithm,
                             std::uint64_t dimension, int bits);

std::vector<std::string> csv_columns();
void write_csv(const TelemetryLog& log, std::ostream& out);
void export_csv(const TelemetryLog& log, const std::filesystem::path& path);

/// RFC-4180 field quoting.
std::string csv_field(const std::string& text);

struct SummaryRow {
  std::string algorithm;
  std::uint64_t iterations = 0;
  std::uint64_t communications = 0;
  std::uint64_t bits = 0;
  std::optional<double> accuracy;
};

std::string format_summary(const std::vector<SummaryRow>& rows);

}  // namespace laq::metrics
