#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

#include "translab/model.hpp"

namespace translab {

/// Observable linear in the momenta, w . p. Covers the velocity response
/// F^T M^{-1} p and its conjugate beta F^T M^{-1} p.
template <int D>
struct MomentumObservable {
  Vec<D> weights{};

  double operator()(const PhaseState<D>& s) const noexcept {
    double r = 0.0;
    for (int i = 0; i < D; ++i) r += weights[i] * s.p[i];
    return r;
  }
};

/// R(q, p) = F^T M^{-1} p.
template <int D>
MomentumObservable<D> response_velocity(const ForcingSpec& forcing,
                                        const PhysicalParams& params) {
  MomentumObservable<D> r;
  for (int i = 0; i < D; ++i) r.weights[i] = forcing.direction[i] / params.mass[i];
  return r;
}

/// S(q, p) = beta F^T M^{-1} p.
template <int D>
MomentumObservable<D> conjugate_response_velocity(const ForcingSpec& forcing,
                                                  const PhysicalParams& params) {
  MomentumObservable<D> s = response_velocity<D>(forcing, params);
  for (double& w : s.weights) w *= params.beta;
  return s;
}

/// Position observables of the one-dimensional overdamped dynamics.
class PositionObservable {
 public:
  enum class Kind { Drift, Conjugate, Cosine, Sine, PotentialGradient };

  /// eta F - V'(q): the conditional mean velocity.
  static PositionObservable drift(const PotentialModel& model, double eta_f) {
    return {Kind::Drift, model, eta_f, 0.0};
  }
  /// beta V'(q) F: conjugate response of a constant force F.
  static PositionObservable conjugate(const PotentialModel& model, double beta,
                                      double f = 1.0) {
    return {Kind::Conjugate, model, beta * f, 0.0};
  }
  /// cos(2 pi q / L) - shift.
  static PositionObservable cosine(const PotentialModel& model, double shift = 0.0) {
    return {Kind::Cosine, model, 1.0, shift};
  }
  /// sin(2 pi q / L) - shift.
  static PositionObservable sine(const PotentialModel& model, double shift = 0.0) {
    return {Kind::Sine, model, 1.0, shift};
  }
  /// scale * V'(q).
  static PositionObservable potential_gradient(const PotentialModel& model,
                                               double scale = 1.0) {
    return {Kind::PotentialGradient, model, scale, 0.0};
  }

  double operator()(double q) const noexcept {
    switch (kind_) {
      case Kind::Drift: return scale_ - model_.derivative_1d(q);
      case Kind::Conjugate:
      case Kind::PotentialGradient: return scale_ * model_.derivative_1d(q);
      case Kind::Cosine: return std::cos(k_ * q) - shift_;
      case Kind::Sine: return std::sin(k_ * q) - shift_;
    }
    return 0.0;
  }

  Kind kind() const noexcept { return kind_; }
  PositionObservable shifted(double shift) const {
    PositionObservable o = *this;
    o.shift_ = shift;
    return o;
  }

 private:
  PositionObservable(Kind kind, const PotentialModel& model, double scale,
                     double shift)
      : kind_(kind),
        model_(model),
        scale_(scale),
        shift_(shift),
        k_(kTwoPi / model.length()) {
    if (model.dim() != 1)
      throw std::invalid_argument("position observables are 1D");
  }

  Kind kind_;
  PotentialModel model_;
  double scale_;
  double shift_;
  double k_;
};

}  // namespace translab
