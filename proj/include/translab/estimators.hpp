#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "translab/errors.hpp"
#include "translab/integrators.hpp"
#include "translab/model.hpp"
#include "translab/observables.hpp"
#include "translab/parallel.hpp"
#include "translab/rng.hpp"
#include "translab/statistics.hpp"

namespace translab {

enum class Quadrature { Rectangle, Trapezoid };

inline std::string to_string(Quadrature q) {
  return q == Quadrature::Rectangle ? "rectangle" : "trapezoid";
}

/// Trapezoid for second-order splittings, rectangle otherwise.
inline Quadrature default_quadrature(const IntegratorRun& run) {
  if (const auto* s = std::get_if<SchemeSpec>(&run.scheme))
    return s->weak_order() == 2 ? Quadrature::Trapezoid : Quadrature::Rectangle;
  return Quadrature::Rectangle;
}

/// Stream purposes; replica r of purpose k uses stream_key(seed, r, k).
inline constexpr std::uint64_t kTrajectoryStream = 0;
inline constexpr std::uint64_t kAuxiliaryStream = 1;

inline constexpr int kInitGrid = 4096;

/// Default burn-in: 10% of the run.
inline long default_burn_in(long n_iter) { return n_iter / 10; }

template <class Obs>
inline constexpr bool is_position_observable_v =
    std::is_invocable_r_v<double, const Obs&, double>;

namespace detail {

/// Time average of `observe()` after each of n_iter - n_burn steps, with
/// streaming batch means. Steps not filling a batch extend the burn-in.
template <class Advance, class Observe>
EstimatorResult time_average(Advance&& advance, Observe&& observe, long n_burn,
                             long n_iter, double scale, double dt, double eta) {
  if (n_burn < 0 || n_iter <= n_burn)
    throw std::invalid_argument("time average: need n_iter > n_burn >= 0");
  const long post = n_iter - n_burn;
  const long len = post / kDefaultBatches;
  if (len < 1)
    throw std::invalid_argument("time average: fewer samples than batches");
  const long burn = n_iter - len * kDefaultBatches;
  for (long i = 0; i < burn; ++i) advance();
  std::vector<double> means;
  means.reserve(kDefaultBatches);
  for (int b = 0; b < kDefaultBatches; ++b) {
    double acc = 0.0;
    for (long i = 0; i < len; ++i) {
      advance();
      acc += observe();
    }
    const double batch_mean = scale * acc / static_cast<double>(len);
    if (!std::isfinite(batch_mean))
      throw NumericalError("non-finite observable in batch " + std::to_string(b));
    means.push_back(batch_mean);
  }
  const double samples = static_cast<double>(len) * kDefaultBatches;
  const double horizon = samples * dt;
  const double asym = dt * static_cast<double>(len) * sample_variance(means);
  return EstimatorResult::from_time_average(mean(means), asym, horizon, samples,
                                            eta);
}

template <int D>
EquilibriumSampler<D> make_sampler(const IntegratorRun& run) {
  return EquilibriumSampler<D>(run.model, run.params, kInitGrid);
}

inline GibbsSampler1D make_position_sampler(const IntegratorRun& run) {
  return GibbsSampler1D([&](double x) { return run.model.value_1d(x); },
                        run.params.beta, run.model.length(), kInitGrid);
}

}  // namespace detail

/// NEMD estimator (1 / (eta t)) int_0^t R ds along the forced dynamics,
/// started from the equilibrium measure. Replica r uses stream (seed, r).
template <int D = 1, class Obs>
EstimatorResult nemd_estimate(const IntegratorRun& run, const Obs& R,
                              long n_burn, long n_iter,
                              std::uint64_t replica = 0) {
  run.validate();
  if (run.forcing.eta == 0.0)
    throw std::invalid_argument("nemd_estimate: eta must be nonzero");
  RandomStream rng(run.seed, replica, kTrajectoryStream);
  const double inv_eta = 1.0 / run.forcing.eta;
  if constexpr (is_position_observable_v<Obs>) {
    if (!run.is_overdamped())
      throw std::invalid_argument("position observable needs overdamped run");
    OverdampedIntegrator integ(run);
    OverdampedState s{detail::make_position_sampler(run)(rng)};
    return detail::time_average([&] { integ.step(s, rng); },
                                [&] { return R(s.q); }, n_burn, n_iter,
                                inv_eta, run.dt, run.forcing.eta);
  } else {
    if (run.is_overdamped())
      throw std::invalid_argument("phase-space observable needs Langevin run");
    SplittingIntegrator<D> integ(run);
    PhaseState<D> s = detail::make_sampler<D>(run)(rng);
    return detail::time_average([&] { integ.step(s, rng); },
                                [&] { return R(s); }, n_burn, n_iter, inv_eta,
                                run.dt, run.forcing.eta);
  }
}

/// Pools independent time-average results of equal horizon: values are
/// averaged, asymptotic variances averaged, horizons summed.
inline EstimatorResult pool_time_averages(std::span<const EstimatorResult> rs) {
  if (rs.empty()) throw std::invalid_argument("nothing to pool");
  double v = 0.0, a = 0.0, h = 0.0, n = 0.0;
  for (const auto& r : rs) {
    v += r.value;
    a += r.asymptotic_variance;
    h += r.horizon;
    n += r.n_effective;
  }
  const double k = static_cast<double>(rs.size());
  return EstimatorResult::from_time_average(v / k, a / k, h, n, rs.front().eta);
}

/// K replica NEMD runs pooled into one result.
template <int D = 1, class Obs>
EstimatorResult nemd_replicas(const IntegratorRun& run, const Obs& R,
                              long n_burn, long n_iter, int replicas,
                              int workers = 1,
                              std::vector<EstimatorResult>* per_replica = nullptr) {
  if (replicas < 1) throw std::invalid_argument("replicas must be >= 1");
  std::vector<EstimatorResult> out(static_cast<std::size_t>(replicas));
  parallel_for(out.size(), workers, [&](std::size_t r) {
    out[r] = nemd_estimate<D>(run, R, n_burn, n_iter, r);
  });
  if (per_replica) *per_replica = out;
  return pool_time_averages(out);
}

// ---------------------------------------------------------------------------
// Linear response fit

struct LinearResponseFit {
  double alpha = 0.0;
  double std_error = 0.0;
  /// Weighted residual sum of squares per degree of freedom.
  double chi2_per_dof = 0.0;
  std::vector<std::pair<double, EstimatorResult>> points;
};

/// Weighted least squares of the response E_eta(R) = eta * value against eta
/// through the origin, weights 1 / Var(E_eta(R)).
inline LinearResponseFit linear_response_fit(
    std::vector<std::pair<double, EstimatorResult>> points) {
  if (points.size() < 2)
    throw std::invalid_argument("linear_response_fit: need >= 2 points");
  bool distinct = false;
  for (const auto& [eta, r] : points) {
    if (eta != points.front().first) distinct = true;
    if (!(r.standard_error() > 0.0))
      throw std::invalid_argument("linear_response_fit: zero variance point");
  }
  if (!distinct)
    throw std::invalid_argument("linear_response_fit: need 2 distinct eta");
  double swxx = 0.0, swxy = 0.0;
  for (const auto& [eta, r] : points) {
    const double sd = std::abs(eta) * r.standard_error();
    const double w = 1.0 / (sd * sd);
    swxx += w * eta * eta;
    swxy += w * eta * (eta * r.value);
  }
  LinearResponseFit fit;
  fit.alpha = swxy / swxx;
  fit.std_error = 1.0 / std::sqrt(swxx);
  double chi2 = 0.0;
  for (const auto& [eta, r] : points) {
    const double sd = std::abs(eta) * r.standard_error();
    const double res = eta * r.value - fit.alpha * eta;
    chi2 += res * res / (sd * sd);
  }
  fit.chi2_per_dof = chi2 / static_cast<double>(points.size() - 1);
  fit.points = std::move(points);
  return fit;
}

/// Unweighted least squares through the origin. The slope is a fixed linear
/// functional of the cell means, so when the response is not linear over the
/// eta grid, the target does not move with the noisy variance estimates.
/// Used where fits at different dt are compared against each other.
inline LinearResponseFit fixed_design_response_fit(
    std::vector<std::pair<double, EstimatorResult>> points) {
  LinearResponseFit fit = linear_response_fit(points);
  double sxx = 0.0, sxy = 0.0, var = 0.0;
  for (const auto& [eta, r] : fit.points) {
    const double sd = std::abs(eta) * r.standard_error();
    sxx += eta * eta;
    sxy += eta * (eta * r.value);
    var += eta * eta * sd * sd;
  }
  fit.alpha = sxy / sxx;
  fit.std_error = std::sqrt(var) / sxx;
  double chi2 = 0.0;
  for (const auto& [eta, r] : fit.points) {
    const double sd = std::abs(eta) * r.standard_error();
    const double res = eta * r.value - fit.alpha * eta;
    chi2 += res * res / (sd * sd);
  }
  fit.chi2_per_dof = chi2 / static_cast<double>(fit.points.size() - 1);
  return fit;
}

// ---------------------------------------------------------------------------
// Green-Kubo

/// Per-replica values Q(int_0^T R(X_t) S(X_0) dt) with X_0 drawn from the
/// equilibrium measure followed by n_burn steps.
template <int D = 1, class ObsR, class ObsS>
std::vector<double> gk_replica_integrals(const IntegratorRun& run,
                                         const ObsR& R, const ObsS& S,
                                         int replicas, double T,
                                         Quadrature quad, long n_burn,
                                         int workers = 1) {
  run.validate();
  if (run.forcing.eta != 0.0)
    throw std::invalid_argument("gk_estimate: requires eta = 0");
  if (replicas < 1) throw std::invalid_argument("replicas must be >= 1");
  if (!(T > 0.0)) throw std::invalid_argument("gk_estimate: T must be > 0");
  const long n = std::lround(T / run.dt);
  if (n < 1) throw std::invalid_argument("gk_estimate: T shorter than dt");
  const double dt = run.dt;
  std::vector<double> values(static_cast<std::size_t>(replicas));

  auto integrate = [&](auto&& advance, auto&& r_now, auto&& s_now) {
    for (long i = 0; i < n_burn; ++i) advance();
    const double s0 = s_now();
    double acc = quad == Quadrature::Trapezoid ? 0.5 * r_now() : r_now();
    for (long k = 1; k < n; ++k) {
      advance();
      acc += r_now();
    }
    if (quad == Quadrature::Trapezoid) {
      advance();
      acc += 0.5 * r_now();
    }
    const double v = dt * acc * s0;
    if (!std::isfinite(v)) throw NumericalError("non-finite GK integral");
    return v;
  };

  if constexpr (is_position_observable_v<ObsR>) {
    if (!run.is_overdamped())
      throw std::invalid_argument("position observable needs overdamped run");
    const GibbsSampler1D init = detail::make_position_sampler(run);
    parallel_for(values.size(), workers, [&](std::size_t r) {
      RandomStream rng(run.seed, r, kTrajectoryStream);
      OverdampedIntegrator integ(run);
      OverdampedState s{init(rng)};
      values[r] = integrate([&] { integ.step(s, rng); }, [&] { return R(s.q); },
                            [&] { return S(s.q); });
    });
  } else {
    if (run.is_overdamped())
      throw std::invalid_argument("phase-space observable needs Langevin run");
    const EquilibriumSampler<D> init = detail::make_sampler<D>(run);
    parallel_for(values.size(), workers, [&](std::size_t r) {
      RandomStream rng(run.seed, r, kTrajectoryStream);
      SplittingIntegrator<D> integ(run);
      PhaseState<D> s = init(rng);
      values[r] = integrate([&] { integ.step(s, rng); }, [&] { return R(s); },
                            [&] { return S(s); });
    });
  }
  return values;
}

/// Natural Green-Kubo estimator (1/K) sum_k int_0^T R(X_t^k) S(X_0^k) dt.
template <int D = 1, class ObsR, class ObsS>
EstimatorResult gk_estimate(const IntegratorRun& run, const ObsR& R,
                            const ObsS& S, int replicas, double T,
                            Quadrature quad, long n_burn = 0, int workers = 1) {
  if (replicas < 2)
    throw std::invalid_argument("gk_estimate: need K >= 2 replicas");
  const auto v = gk_replica_integrals<D>(run, R, S, replicas, T, quad, n_burn,
                                         workers);
  RunningMoments m;
  for (double x : v) m.add(x);
  return EstimatorResult::from_replicas(m.mean(), m.variance(),
                                        static_cast<double>(replicas), 0.0);
}

/// Quadrature of equally spaced correlation values c_0..c_K:
/// rectangle dt sum_{k<K} c_k, trapezoid with half end weights.
inline double integrate_correlation(std::span<const double> c, double dt,
                                    Quadrature quad) {
  if (c.size() < 2) throw std::invalid_argument("need >= 2 correlation values");
  const std::size_t K = c.size() - 1;
  double s = 0.0;
  for (std::size_t k = 0; k < K; ++k) s += c[k];
  if (quad == Quadrature::Trapezoid) s += 0.5 * (c[K] - c[0]);
  return dt * s;
}

struct CorrelationCurve {
  std::vector<double> lag_times;
  std::vector<double> values;
  std::vector<double> std_errors;
  Quadrature quadrature = Quadrature::Rectangle;
  double dt = 0.0;

  double integral() const { return integrate_correlation(values, dt, quadrature); }
};

/// Multi-time-origin estimate of E[R(X_{n+k}) S(X_n)], k = 0..max_lag, from
/// one trajectory. Both series are centered by their trajectory means; lag k
/// averages over all N - k origins. Standard errors come from batching the
/// origins into n_batches contiguous blocks.
inline CorrelationCurve correlation_curve(std::span<const double> R,
                                          std::span<const double> S,
                                          int max_lag, double dt,
                                          Quadrature quad = Quadrature::Rectangle,
                                          int n_batches = kDefaultBatches) {
  const std::size_t N = R.size();
  if (S.size() != N) throw std::invalid_argument("R and S lengths differ");
  if (max_lag < 0 || static_cast<std::size_t>(max_lag) >= N)
    throw std::invalid_argument("correlation_curve: max_lag >= trajectory length");
  if (N < static_cast<std::size_t>(max_lag) + 2 * static_cast<std::size_t>(n_batches))
    throw std::invalid_argument("correlation_curve: trajectory too short");
  const double rbar = mean(R);
  const double sbar = mean(S);
  CorrelationCurve c;
  c.quadrature = quad;
  c.dt = dt;
  const std::size_t L = static_cast<std::size_t>(max_lag);
  const std::size_t block = (N - L) / static_cast<std::size_t>(n_batches);
  for (std::size_t k = 0; k <= L; ++k) {
    double acc = 0.0;
    for (std::size_t n = 0; n + k < N; ++n) acc += (R[n + k] - rbar) * (S[n] - sbar);
    RunningMoments blocks;
    for (int b = 0; b < n_batches; ++b) {
      double bs = 0.0;
      const std::size_t start = static_cast<std::size_t>(b) * block;
      for (std::size_t n = start; n < start + block; ++n)
        bs += (R[n + k] - rbar) * (S[n] - sbar);
      blocks.add(bs / static_cast<double>(block));
    }
    c.lag_times.push_back(static_cast<double>(k) * dt);
    c.values.push_back(acc / static_cast<double>(N - k));
    c.std_errors.push_back(std::sqrt(blocks.variance() / n_batches));
  }
  return c;
}

/// Streaming quadrature of the centered cross-correlation over lags
/// 0..lags (lags * dt = T) along one long trajectory, with batch-means
/// error bars over time origins. Both quadratures are accumulated.
class IntegratedCorrelation {
 public:
  IntegratedCorrelation(int lags, double dt, std::size_t total_samples,
                        int n_batches = kDefaultBatches)
      : lags_(static_cast<std::size_t>(lags)),
        dt_(dt),
        n_batches_(n_batches),
        r_ring_(static_cast<std::size_t>(lags) + 1),
        s_ring_(static_cast<std::size_t>(lags) + 1),
        batches_(static_cast<std::size_t>(n_batches)) {
    if (lags < 1) throw std::invalid_argument("need >= 1 lag");
    if (n_batches < 2) throw std::invalid_argument("need >= 2 batches");
    if (total_samples <= lags_ + 2 * static_cast<std::size_t>(n_batches))
      throw std::invalid_argument("trajectory too short for lag window");
    batch_len_ = (total_samples - lags_) / static_cast<std::size_t>(n_batches);
  }

  void add(double r, double s) {
    // head_ is the slot of sample m = count_; it holds sample m - lags - 1.
    if (count_ > lags_) window_ -= r_ring_[head_];
    r_ring_[head_] = r;
    s_ring_[head_] = s;
    window_ += r;
    r_total_ += r;
    s_total_ += s;
    ++count_;
    if (++head_ == r_ring_.size()) head_ = 0;
    if ((count_ & 0xFFFF) == 0) resum_window();
    if (count_ <= lags_ || batch_ >= batches_.size()) return;
    // Origin n = m - lags sits in the slot after m, i.e. the new head.
    const double r_first = r_ring_[head_];
    const double s_n = s_ring_[head_];
    const double w_rect = window_ - r;
    const double w_trap = window_ - 0.5 * (r_first + r);
    Batch& bt = batches_[batch_];
    bt.sw_rect += s_n * w_rect;
    bt.sw_trap += s_n * w_trap;
    bt.s += s_n;
    bt.w_rect += w_rect;
    bt.w_trap += w_trap;
    if (++bt.count == batch_len_) ++batch_;
  }

  std::size_t samples() const noexcept { return count_; }

  /// Quadrature value with batch-means confidence interval; horizon is the
  /// time spanned by the origins used.
  EstimatorResult result(Quadrature quad) const {
    if (batch_ < batches_.size())
      throw std::logic_error("IntegratedCorrelation: not enough samples");
    const double rbar = r_total_ / static_cast<double>(count_);
    const double sbar = s_total_ / static_cast<double>(count_);
    const double wsum = static_cast<double>(lags_);
    const bool rect = quad == Quadrature::Rectangle;
    std::vector<double> ys;
    ys.reserve(batches_.size());
    for (const Batch& bt : batches_) {
      const double c = static_cast<double>(bt.count);
      const double sw = rect ? bt.sw_rect : bt.sw_trap;
      const double w = rect ? bt.w_rect : bt.w_trap;
      ys.push_back(dt_ * (sw - wsum * rbar * bt.s - sbar * w + c * wsum * rbar * sbar) / c);
    }
    const double origins = static_cast<double>(batch_len_ * batches_.size());
    const double horizon = origins * dt_;
    const double var_of_mean = sample_variance(ys) / static_cast<double>(ys.size());
    return EstimatorResult::from_time_average(mean(ys), var_of_mean * horizon,
                                              horizon, origins, 0.0);
  }

 private:
  struct Batch {
    double sw_rect = 0.0, sw_trap = 0.0, s = 0.0, w_rect = 0.0, w_trap = 0.0;
    std::size_t count = 0;
  };

  void resum_window() {
    const std::size_t w = r_ring_.size();
    const std::size_t have = std::min(count_, w);
    window_ = 0.0;
    // The last `have` samples end just before head_.
    for (std::size_t i = 1; i <= have; ++i) window_ += r_ring_[(head_ + w - i) % w];
  }

  std::size_t lags_;
  double dt_;
  int n_batches_;
  std::size_t batch_len_ = 1;
  std::vector<double> r_ring_, s_ring_;
  std::vector<Batch> batches_;
  std::size_t batch_ = 0;
  std::size_t head_ = 0;
  double window_ = 0.0;
  double r_total_ = 0.0, s_total_ = 0.0;
  std::size_t count_ = 0;
};

struct CorrelationIntegrals {
  EstimatorResult rectangle;
  EstimatorResult trapezoid;
  double acceptance = 1.0;

  const EstimatorResult& get(Quadrature q) const {
    return q == Quadrature::Rectangle ? rectangle : trapezoid;
  }
};

/// Green-Kubo integral of an overdamped equilibrium chain from one long
/// trajectory of n_steps after n_burn, lags up to T, under both quadratures.
template <class ObsR, class ObsS>
CorrelationIntegrals gk_correlation_estimate(const IntegratorRun& run,
                                             const ObsR& R, const ObsS& S,
                                             double T, long n_steps, long n_burn,
                                             std::uint64_t replica = 0) {
  run.validate();
  if (!run.is_overdamped())
    throw std::invalid_argument("gk_correlation_estimate: overdamped only");
  if (run.forcing.eta != 0.0)
    throw std::invalid_argument("gk_correlation_estimate: requires eta = 0");
  const int lags = static_cast<int>(std::lround(T / run.dt));
  RandomStream rng(run.seed, replica, kTrajectoryStream);
  OverdampedIntegrator integ(run);
  OverdampedState s{detail::make_position_sampler(run)(rng)};
  for (long i = 0; i < n_burn; ++i) integ.step(s, rng);
  IntegratedCorrelation acc(lags, run.dt, static_cast<std::size_t>(n_steps));
  for (long i = 0; i < n_steps; ++i) {
    acc.add(R(s.q), S(s.q));
    integ.step(s, rng);
  }
  CorrelationIntegrals out{acc.result(Quadrature::Rectangle),
                           acc.result(Quadrature::Trapezoid),
                           integ.acceptance_rate()};
  if (!std::isfinite(out.rectangle.value) || !std::isfinite(out.trapezoid.value))
    throw NumericalError("non-finite GK integral");
  return out;
}

// ---------------------------------------------------------------------------
// Girsanov / martingale estimator for overdamped dynamics

/// Long-run mean of R under the discrete chain (auxiliary stream).
template <class Obs>
double chain_mean(const IntegratorRun& run, const Obs& R, long n_steps,
                  long n_burn = 0) {
  run.validate();
  if (!run.is_overdamped())
    throw std::invalid_argument("chain_mean: overdamped only");
  RandomStream rng(run.seed, 0, kAuxiliaryStream);
  OverdampedIntegrator integ(run);
  OverdampedState s{detail::make_position_sampler(run)(rng)};
  for (long i = 0; i < n_burn; ++i) integ.step(s, rng);
  double acc = 0.0;
  for (long i = 0; i < n_steps; ++i) {
    integ.step(s, rng);
    acc += R(s.q);
  }
  return acc / static_cast<double>(n_steps);
}

/// Per-replica values of ((1/N) sum_n (R(X^n) - r_mean)) * Z^N with
/// Z^N = sum_n sigma^{-1} F sqrt(dt) G^n, the G^n being the variates that
/// drive the chain.
template <class Obs>
std::vector<double> martingale_replica_values(const IntegratorRun& run,
                                              const Obs& R, double r_mean,
                                              long n_iter, int replicas,
                                              long n_burn = 0, int workers = 1) {
  run.validate();
  if (!run.is_overdamped())
    throw std::invalid_argument(
        "martingale_estimate: degenerate (underdamped) noise is not supported");
  if (run.forcing.eta != 0.0)
    throw std::invalid_argument("martingale_estimate: requires eta = 0");
  if (n_iter < 1) throw std::invalid_argument("n_iter must be >= 1");
  const double sigma = std::sqrt(2.0 / run.params.beta);
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw std::invalid_argument("martingale_estimate: sigma not invertible");
  const double weight = run.forcing.direction.at(0) / sigma * std::sqrt(run.dt);
  const GibbsSampler1D init = detail::make_position_sampler(run);
  std::vector<double> values(static_cast<std::size_t>(replicas));
  parallel_for(values.size(), workers, [&](std::size_t r) {
    RandomStream rng(run.seed, r, kTrajectoryStream);
    OverdampedIntegrator integ(run);
    OverdampedState s{init(rng)};
    for (long i = 0; i < n_burn; ++i) integ.step(s, rng);
    double rsum = 0.0, z = 0.0;
    for (long n = 0; n < n_iter; ++n) {
      rsum += R(s.q) - r_mean;
      z += weight * integ.step(s, rng).gaussian;
    }
    const double v = rsum / static_cast<double>(n_iter) * z;
    if (!std::isfinite(v)) throw NumericalError("non-finite martingale value");
    values[r] = v;
  });
  return values;
}

template <class Obs>
EstimatorResult martingale_estimate(const IntegratorRun& run, const Obs& R,
                                    double r_mean, long n_iter, int replicas,
                                    long n_burn = 0, int workers = 1) {
  if (replicas < 2)
    throw std::invalid_argument("martingale_estimate: need >= 2 replicas");
  const auto v =
      martingale_replica_values(run, R, r_mean, n_iter, replicas, n_burn, workers);
  RunningMoments m;
  for (double x : v) m.add(x);
  return EstimatorResult::from_replicas(m.mean(), m.variance(),
                                        static_cast<double>(replicas), 0.0);
}

}  // namespace translab
