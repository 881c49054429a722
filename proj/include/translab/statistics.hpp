#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace translab {

inline constexpr int kDefaultBatches = 32;
inline constexpr double kZ95 = 1.96;

/// Point estimate with a CLT-based confidence interval.
struct EstimatorResult {
  double value = 0.0;
  /// For time averages: limit of horizon * Var(value) (time units).
  /// For replica averages: the per-replica variance.
  double asymptotic_variance = 0.0;
  double n_effective = 0.0;
  double ci_halfwidth_95 = 0.0;
  /// Physical time t (time averages) or replica count (replica averages).
  double horizon = 0.0;
  double eta = 0.0;

  double standard_error() const { return ci_halfwidth_95 / kZ95; }

  /// Time-average result: ci = 1.96 sqrt(asym_var / horizon).
  static EstimatorResult from_time_average(double value, double asym_var,
                                           double horizon, double n_eff,
                                           double eta) {
    return {value, asym_var, n_eff,
            kZ95 * std::sqrt(asym_var / horizon), horizon, eta};
  }

  /// Replica-average result over `k` independent samples.
  static EstimatorResult from_replicas(double mean, double var, double k,
                                       double eta) {
    return {mean, var, k, kZ95 * std::sqrt(var / k), k, eta};
  }
};

/// Welford accumulator for mean and unbiased variance.
class RunningMoments {
 public:
  void add(double x) noexcept {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  std::size_t count() const noexcept { return n_; }
  double mean() const noexcept { return mean_; }
  double variance() const noexcept {
    return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0;
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean of empty series");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw std::invalid_argument("variance needs >= 2 values");
  RunningMoments m;
  for (double x : xs) m.add(x);
  return m.variance();
}

/// Asymptotic variance (per sample) of the series mean by non-overlapping
/// batch means: batch_len * sample variance of the batch means. Leading
/// samples that do not fill a batch are dropped.
inline double batch_means_variance(std::span<const double> series,
                                   int n_batches = kDefaultBatches) {
  if (n_batches < 2) throw std::invalid_argument("need >= 2 batches");
  if (series.size() < 2 * static_cast<std::size_t>(n_batches))
    throw std::invalid_argument("series too short for batch means");
  const std::size_t len = series.size() / static_cast<std::size_t>(n_batches);
  const std::size_t skip = series.size() - len * static_cast<std::size_t>(n_batches);
  RunningMoments bm;
  for (int b = 0; b < n_batches; ++b) {
    double s = 0.0;
    const std::size_t start = skip + static_cast<std::size_t>(b) * len;
    for (std::size_t i = 0; i < len; ++i) s += series[start + i];
    bm.add(s / static_cast<double>(len));
  }
  return static_cast<double>(len) * bm.variance();
}

/// Streaming batch means for series too long to store. The batch length
/// must be known up front.
class BatchMeans {
 public:
  BatchMeans(std::size_t batch_len, int n_batches = kDefaultBatches)
      : batch_len_(batch_len), n_batches_(n_batches) {
    if (batch_len == 0) throw std::invalid_argument("batch length must be > 0");
    means_.reserve(static_cast<std::size_t>(n_batches));
  }

  void add(double x) noexcept {
    acc_ += x;
    if (++fill_ == batch_len_) {
      means_.push_back(acc_ / static_cast<double>(batch_len_));
      acc_ = 0.0;
      fill_ = 0;
    }
  }

  bool complete() const noexcept {
    return means_.size() >= static_cast<std::size_t>(n_batches_);
  }
  std::span<const double> batch_means() const noexcept { return means_; }

  double mean() const {
    if (means_.empty()) throw std::logic_error("BatchMeans: no batch");
    return translab::mean(means_);
  }
  /// Per-sample asymptotic variance.
  double variance() const {
    return static_cast<double>(batch_len_) * sample_variance(means_);
  }

 private:
  std::size_t batch_len_;
  int n_batches_;
  std::vector<double> means_;
  double acc_ = 0.0;
  std::size_t fill_ = 0;
};

/// Ordinary least squares y = intercept + slope x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("fit_line: need >= 2 paired points");
  const double mx = mean(x);
  const double my = mean(y);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: degenerate abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return f;
}

/// Power-law exponent from a log-log least-squares fit.
struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::vector<std::pair<double, double>> points;  // (log x, log y)
};

inline SlopeFit fit_log_log(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 3)
    throw std::invalid_argument("log-log slope fit needs >= 3 points");
  std::vector<double> lx, ly;
  SlopeFit s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0))
      throw std::invalid_argument("log-log slope fit needs positive data");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
    s.points.emplace_back(lx.back(), ly.back());
  }
  const LineFit f = fit_line(lx, ly);
  s.slope = f.slope;
  s.intercept = f.intercept;
  s.r_squared = f.r_squared;
  return s;
}

}  // namespace translab
