#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "translab/rng.hpp"

namespace translab {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Periodic box (L T)^d.
class TorusDomain {
 public:
  TorusDomain(int dim, double length) : dim_(dim), length_(length) {
    if (dim < 1) throw std::invalid_argument("TorusDomain: dim must be >= 1");
    if (!(length > 0.0) || !std::isfinite(length))
      throw std::invalid_argument("TorusDomain: length must be positive");
  }

  int dim() const noexcept { return dim_; }
  double length() const noexcept { return length_; }

  /// Maps x into [0, L).
  double wrap(double x) const noexcept {
    if (x >= 0.0 && x < length_) return x;
    double w = x - length_ * std::floor(x / length_);
    return w >= length_ ? 0.0 : w;
  }

 private:
  int dim_;
  double length_;
};

enum class PotentialKind { Zero, Cosine1D, SeparableCosine2D };

inline std::string to_string(PotentialKind k) {
  switch (k) {
    case PotentialKind::Zero: return "zero";
    case PotentialKind::Cosine1D: return "cosine1d";
    case PotentialKind::SeparableCosine2D: return "separable_cosine2d";
  }
  return "unknown";
}

/// Smooth periodic potential energy with analytic gradient.
///   Zero:              V = 0
///   Cosine1D:          V = a cos(2 pi q / L)
///   SeparableCosine2D: V = a1 cos(2 pi x / L) + a2 cos(2 pi y / L)
class PotentialModel {
 public:
  static PotentialModel zero(int dim = 1, double length = 1.0) {
    return PotentialModel(PotentialKind::Zero, TorusDomain(dim, length), {});
  }
  static PotentialModel cosine_1d(double amplitude, double length = 1.0) {
    return PotentialModel(PotentialKind::Cosine1D, TorusDomain(1, length),
                          {amplitude});
  }
  static PotentialModel separable_cosine_2d(double a1, double a2,
                                            double length = 1.0) {
    return PotentialModel(PotentialKind::SeparableCosine2D,
                          TorusDomain(2, length), {a1, a2});
  }

  PotentialKind kind() const noexcept { return kind_; }
  const TorusDomain& domain() const noexcept { return domain_; }
  int dim() const noexcept { return domain_.dim(); }
  double length() const noexcept { return domain_.length(); }

  /// Cosine amplitude acting on coordinate `axis` (0 for Zero).
  double axis_amplitude(int axis) const noexcept {
    if (kind_ == PotentialKind::Zero) return 0.0;
    return amplitudes_[static_cast<std::size_t>(axis)];
  }

  const std::vector<double>& amplitudes() const noexcept { return amplitudes_; }

  double value(std::span<const double> q) const {
    double v = 0.0;
    if (kind_ == PotentialKind::Zero) return v;
    const double k = kTwoPi / length();
    for (std::size_t i = 0; i < amplitudes_.size(); ++i)
      v += amplitudes_[i] * std::cos(k * q[i]);
    return v;
  }

  void gradient(std::span<const double> q, std::span<double> out) const {
    if (kind_ == PotentialKind::Zero) {
      std::fill(out.begin(), out.end(), 0.0);
      return;
    }
    const double k = kTwoPi / length();
    for (std::size_t i = 0; i < amplitudes_.size(); ++i)
      out[i] = -k * amplitudes_[i] * std::sin(k * q[i]);
  }

  /// V(q) for one-dimensional models (Zero of any dim counts as 0).
  double value_1d(double q) const noexcept {
    if (kind_ == PotentialKind::Zero) return 0.0;
    return amplitudes_[0] * std::cos(kTwoPi / length() * q);
  }

  /// V'(q) for one-dimensional models.
  double derivative_1d(double q) const noexcept {
    if (kind_ == PotentialKind::Zero) return 0.0;
    const double k = kTwoPi / length();
    return -k * amplitudes_[0] * std::sin(k * q);
  }

  /// Value of the one-dimensional cosine factor acting on `axis`.
  double axis_value(int axis, double x) const noexcept {
    return axis_amplitude(axis) * std::cos(kTwoPi / length() * x);
  }

 private:
  PotentialModel(PotentialKind kind, TorusDomain domain,
                 std::vector<double> amplitudes)
      : kind_(kind), domain_(domain), amplitudes_(std::move(amplitudes)) {
    for (double a : amplitudes_)
      if (!std::isfinite(a))
        throw std::invalid_argument("PotentialModel: non-finite amplitude");
  }

  PotentialKind kind_;
  TorusDomain domain_;
  std::vector<double> amplitudes_;
};

inline double potential_value(const PotentialModel& model,
                              std::span<const double> q) {
  return model.value(q);
}

inline std::vector<double> potential_gradient(const PotentialModel& model,
                                              std::span<const double> q) {
  std::vector<double> g(static_cast<std::size_t>(model.dim()));
  model.gradient(q, g);
  return g;
}

/// Inverse temperature, friction and diagonal mass matrix.
struct PhysicalParams {
  double beta = 1.0;
  double gamma = 1.0;
  std::vector<double> mass{1.0};

  static PhysicalParams unit(int dim) {
    return {1.0, 1.0, std::vector<double>(static_cast<std::size_t>(dim), 1.0)};
  }

  void validate(int dim) const {
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be > 0");
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
    if (mass.size() != static_cast<std::size_t>(dim))
      throw std::invalid_argument("mass must have one entry per dimension");
    for (double m : mass)
      if (!(m > 0.0)) throw std::invalid_argument("mass entries must be > 0");
  }
};

/// Constant nongradient force eta * F with |F| = 1.
struct ForcingSpec {
  double eta = 0.0;
  std::vector<double> direction{1.0};

  static ForcingSpec along_axis(int dim, int axis, double eta) {
    ForcingSpec f;
    f.eta = eta;
    f.direction.assign(static_cast<std::size_t>(dim), 0.0);
    f.direction[static_cast<std::size_t>(axis)] = 1.0;
    return f;
  }

  void validate(int dim) const {
    if (!std::isfinite(eta)) throw std::invalid_argument("eta must be finite");
    if (direction.size() != static_cast<std::size_t>(dim))
      throw std::invalid_argument("forcing direction has wrong dimension");
    double n2 = 0.0;
    for (double x : direction) n2 += x * x;
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-12)
      throw std::invalid_argument("forcing direction must be a unit vector");
  }
};

template <int D>
using Vec = std::array<double, D>;

template <int D>
struct PhaseState {
  Vec<D> q{};
  Vec<D> p{};
};

/// Position-only state for the one-dimensional overdamped dynamics.
struct OverdampedState {
  double q = 0.0;
};

/// p ~ N(0, M / beta), coordinates independent.
template <int D>
Vec<D> sample_momenta(const PhysicalParams& params, RandomStream& rng) {
  Vec<D> p{};
  for (int i = 0; i < D; ++i)
    p[i] = std::sqrt(params.mass[static_cast<std::size_t>(i)] / params.beta) *
           rng.normal();
  return p;
}

/// Draws from the density proportional to exp(-beta * v(x)) on [0, L) by
/// inverting the piecewise-linear CDF built on a uniform grid.
class GibbsSampler1D {
 public:
  /// `v` is sampled at grid nodes x_i = i L / n, i = 0..n-1 (periodic).
  template <class Fn>
  GibbsSampler1D(Fn&& v, double beta, double length, int grid_n)
      : length_(length), cdf_(static_cast<std::size_t>(grid_n) + 1, 0.0) {
    if (grid_n < 256)
      throw std::invalid_argument("GibbsSampler1D: grid_n must be >= 256");
    const double h = length / grid_n;
    std::vector<double> w(static_cast<std::size_t>(grid_n) + 1);
    for (int i = 0; i < grid_n; ++i)
      w[static_cast<std::size_t>(i)] = std::exp(-beta * v(i * h));
    w.back() = w.front();
    for (std::size_t i = 1; i < cdf_.size(); ++i)
      cdf_[i] = cdf_[i - 1] + 0.5 * h * (w[i - 1] + w[i]);
    const double z = cdf_.back();
    for (double& c : cdf_) c /= z;
    cdf_.back() = 1.0;
  }

  double operator()(RandomStream& rng) const {
    const double u = rng.uniform();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    std::size_t i = static_cast<std::size_t>(it - cdf_.begin());
    if (i == 0) i = 1;
    if (i >= cdf_.size()) i = cdf_.size() - 1;
    const double c0 = cdf_[i - 1];
    const double c1 = cdf_[i];
    const double frac = c1 > c0 ? (u - c0) / (c1 - c0) : 0.0;
    const double h = length_ / static_cast<double>(cdf_.size() - 1);
    double x = (static_cast<double>(i - 1) + frac) * h;
    return x >= length_ ? 0.0 : x;
  }

  /// Grid CDF at node i (i = 0..n).
  std::span<const double> cdf() const noexcept { return cdf_; }

 private:
  double length_;
  std::vector<double> cdf_;
};

/// One draw from exp(-beta V) for a one-dimensional model.
inline double sample_position_1d(const PotentialModel& model, double beta,
                                 int grid_n, RandomStream& rng) {
  if (model.dim() != 1)
    throw std::invalid_argument("sample_position_1d: model must be 1D");
  GibbsSampler1D sampler([&](double x) { return model.value_1d(x); }, beta,
                         model.length(), grid_n);
  return sampler(rng);
}

/// Samples the canonical measure exp(-beta H) of a potential model: the
/// position marginal is a product over axes for every supported kind.
template <int D>
class EquilibriumSampler {
 public:
  EquilibriumSampler(const PotentialModel& model, const PhysicalParams& params,
                     int grid_n = 4096)
      : model_(model), params_(params) {
    if (model.dim() != D)
      throw std::invalid_argument("EquilibriumSampler: dimension mismatch");
    params.validate(D);
    if (model.kind() != PotentialKind::Zero) {
      for (int axis = 0; axis < D; ++axis)
        axes_.emplace_back(
            [&, axis](double x) { return model.axis_value(axis, x); },
            params.beta, model.length(), grid_n);
    }
  }

  Vec<D> position(RandomStream& rng) const {
    Vec<D> q{};
    for (int i = 0; i < D; ++i)
      q[i] = axes_.empty() ? model_.length() * rng.uniform()
                           : axes_[static_cast<std::size_t>(i)](rng);
    return q;
  }

  PhaseState<D> operator()(RandomStream& rng) const {
    PhaseState<D> s;
    s.q = position(rng);
    s.p = sample_momenta<D>(params_, rng);
    return s;
  }

 private:
  PotentialModel model_;
  PhysicalParams params_;
  std::vector<GibbsSampler1D> axes_;
};

}  // namespace translab
