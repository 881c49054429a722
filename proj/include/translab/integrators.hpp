#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "translab/model.hpp"
#include "translab/rng.hpp"

namespace translab {

/// Exactly integrable parts of the Langevin generator:
///   A = M^{-1} p . grad_q                  (free transport)
///   B = (-grad V(q) + eta F) . grad_p      (kick)
///   C = -M^{-1} p . grad_p + beta^{-1} lap_p  (Ornstein-Uhlenbeck, times gamma)
enum class Flow : char { A = 'A', B = 'B', C = 'C' };

struct Stage {
  Flow flow;
  double fraction;  // of the timestep
};

/// Ordered composition of sub-flows. Each operator's fractions sum to one.
class SchemeSpec {
 public:
  explicit SchemeSpec(std::vector<Stage> stages) : stages_(std::move(stages)) {
    for (Flow f : {Flow::A, Flow::B, Flow::C}) {
      double total = 0.0;
      for (const Stage& s : stages_) {
        if (s.flow == f) {
          if (!(s.fraction > 0.0))
            throw std::invalid_argument("SchemeSpec: fractions must be > 0");
          total += s.fraction;
        }
      }
      if (std::abs(total - 1.0) > 1e-12)
        throw std::invalid_argument(
            std::string("SchemeSpec: fractions of ") + static_cast<char>(f) +
            " must sum to 1");
    }
  }

  /// P^{B_eta, A, gamma C}: kick, drift, full OU step.
  static SchemeSpec first_order_bac() {
    return SchemeSpec({{Flow::B, 1.0}, {Flow::A, 1.0}, {Flow::C, 1.0}});
  }

  /// P^{gamma C, B_eta, A, B_eta, gamma C} with half C and B stages.
  static SchemeSpec second_order_cbabc() {
    return SchemeSpec({{Flow::C, 0.5},
                       {Flow::B, 0.5},
                       {Flow::A, 1.0},
                       {Flow::B, 0.5},
                       {Flow::C, 0.5}});
  }

  /// Parses a word over {A, B, C}; repeated letters split the step evenly
  /// ("CBABC" gives C:1/2 B:1/2 A:1 B:1/2 C:1/2).
  static SchemeSpec from_letters(std::string_view word) {
    if (word.empty()) throw std::invalid_argument("empty scheme name");
    std::vector<Stage> stages;
    for (char c : word) {
      if (c != 'A' && c != 'B' && c != 'C')
        throw std::invalid_argument("unknown scheme '" + std::string(word) +
                                    "'");
      stages.push_back({static_cast<Flow>(c), 0.0});
    }
    for (Stage& s : stages) {
      int count = 0;
      for (char c : word) count += (c == static_cast<char>(s.flow));
      s.fraction = 1.0 / count;
    }
    return SchemeSpec(std::move(stages));
  }

  const std::vector<Stage>& stages() const noexcept { return stages_; }

  std::string name() const {
    std::string n;
    for (const Stage& s : stages_) n += static_cast<char>(s.flow);
    return n;
  }

  /// Symmetric (palindromic) compositions are second order.
  int weak_order() const {
    const std::size_t n = stages_.size();
    for (std::size_t i = 0; i < n / 2; ++i) {
      const Stage& a = stages_[i];
      const Stage& b = stages_[n - 1 - i];
      if (a.flow != b.flow || std::abs(a.fraction - b.fraction) > 1e-15)
        return 1;
    }
    return 2;
  }

 private:
  std::vector<Stage> stages_;
};

enum class OverdampedKind { EulerMaruyama, Mala };

/// A fully specified discretized dynamics.
struct IntegratorRun {
  std::variant<SchemeSpec, OverdampedKind> scheme = SchemeSpec::second_order_cbabc();
  double dt = 0.01;
  ForcingSpec forcing{};
  PhysicalParams params{};
  PotentialModel model = PotentialModel::zero();
  std::uint64_t seed = 0;

  bool is_overdamped() const noexcept {
    return std::holds_alternative<OverdampedKind>(scheme);
  }

  std::string scheme_name() const {
    if (auto* k = std::get_if<OverdampedKind>(&scheme))
      return *k == OverdampedKind::Mala ? "MALA" : "EM";
    return std::get<SchemeSpec>(scheme).name();
  }

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt))
      throw std::invalid_argument("dt must be > 0");
    forcing.validate(model.dim());
    if (is_overdamped()) {
      if (model.dim() != 1)
        throw std::invalid_argument("overdamped dynamics must be 1D");
      if (!(params.beta > 0.0)) throw std::invalid_argument("beta must be > 0");
      if (std::get<OverdampedKind>(scheme) == OverdampedKind::Mala &&
          forcing.eta != 0.0)
        throw std::invalid_argument(
            "MALA requires eta = 0 (no explicit nonequilibrium target)");
    } else {
      params.validate(model.dim());
    }
  }
};

/// "BAC", "CBABC" or any ABC word; "EM"; "MALA".
inline std::variant<SchemeSpec, OverdampedKind> parse_scheme(
    std::string_view name) {
  if (name == "EM") return OverdampedKind::EulerMaruyama;
  if (name == "MALA") return OverdampedKind::Mala;
  return SchemeSpec::from_letters(name);
}

// ---------------------------------------------------------------------------
// Individual flows

/// q <- wrap(q + h M^{-1} p).
template <int D>
PhaseState<D> flow_A(PhaseState<D> s, double h, const PhysicalParams& params,
                     const TorusDomain& domain) {
  for (int i = 0; i < D; ++i)
    s.q[i] = domain.wrap(s.q[i] + h * s.p[i] / params.mass[i]);
  return s;
}

/// p <- p + h (-grad V(q) + eta F).
template <int D>
PhaseState<D> flow_B(PhaseState<D> s, double h, const ForcingSpec& forcing,
                     const PotentialModel& model) {
  Vec<D> g{};
  model.gradient(s.q, g);
  for (int i = 0; i < D; ++i)
    s.p[i] += h * (-g[i] + forcing.eta * forcing.direction[i]);
  return s;
}

/// Exact OU update p <- rho p + sqrt((1 - rho^2) M / beta) G with
/// rho = exp(-gamma M^{-1} h) taken entrywise.
template <int D>
PhaseState<D> flow_C(PhaseState<D> s, double h, const PhysicalParams& params,
                     RandomStream& rng) {
  if (h == 0.0) return s;
  for (int i = 0; i < D; ++i) {
    const double m = params.mass[i];
    const double rho = std::exp(-params.gamma * h / m);
    const double sigma = std::sqrt((1.0 - rho * rho) * m / params.beta);
    s.p[i] = rho * s.p[i] + sigma * rng.normal();
  }
  return s;
}

/// Splitting integrator with precomputed stage coefficients. Gaussian
/// variates are consumed only in C stages, coordinate by coordinate, in
/// sequence order. The force is recomputed only after a position update.
template <int D>
class SplittingIntegrator {
 public:
  SplittingIntegrator(const SchemeSpec& scheme, double dt,
                      const ForcingSpec& forcing, const PhysicalParams& params,
                      const PotentialModel& model)
      : model_(model), length_(model.length()), dt_(dt) {
    if (model.dim() != D)
      throw std::invalid_argument("SplittingIntegrator: dimension mismatch");
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be > 0");
    params.validate(D);
    forcing.validate(D);
    for (int i = 0; i < D; ++i) drive_[i] = forcing.eta * forcing.direction[i];
    for (const Stage& st : scheme.stages()) {
      Coeffs c{st.flow, st.fraction * dt, {}, {}};
      for (int i = 0; i < D; ++i) {
        const double m = params.mass[i];
        switch (st.flow) {
          case Flow::A: c.a[i] = c.h / m; break;
          case Flow::B: c.a[i] = c.h; break;
          case Flow::C: {
            const double rho = std::exp(-params.gamma * c.h / m);
            c.a[i] = rho;
            c.b[i] = std::sqrt((1.0 - rho * rho) * m / params.beta);
            break;
          }
        }
      }
      stages_.push_back(c);
    }
  }

  explicit SplittingIntegrator(const IntegratorRun& run)
      : SplittingIntegrator(std::get<SchemeSpec>(run.scheme), run.dt,
                            run.forcing, run.params, run.model) {}

  double dt() const noexcept { return dt_; }

  void step(PhaseState<D>& s, RandomStream& rng) {
    for (const Coeffs& c : stages_) {
      switch (c.flow) {
        case Flow::A:
          for (int i = 0; i < D; ++i) {
            double x = s.q[i] + c.a[i] * s.p[i];
            if (!(x >= 0.0 && x < length_)) {
              x -= length_ * std::floor(x / length_);
              if (x >= length_) x = 0.0;
            }
            s.q[i] = x;
          }
          break;
        case Flow::B:
          refresh_force(s.q);
          for (int i = 0; i < D; ++i) s.p[i] += c.a[i] * force_[i];
          break;
        case Flow::C:
          for (int i = 0; i < D; ++i) s.p[i] = c.a[i] * s.p[i] + c.b[i] * rng.normal();
          break;
      }
    }
  }

 private:
  struct Coeffs {
    Flow flow;
    double h;
    Vec<D> a;
    Vec<D> b;
  };

  void refresh_force(const Vec<D>& q) {
    if (force_valid_ && q == force_at_) return;
    Vec<D> g{};
    model_.gradient(q, g);
    for (int i = 0; i < D; ++i) force_[i] = -g[i] + drive_[i];
    force_at_ = q;
    force_valid_ = true;
  }

  PotentialModel model_;
  double length_;
  double dt_;
  Vec<D> drive_{};
  std::vector<Coeffs> stages_;
  Vec<D> force_{};
  Vec<D> force_at_{};
  bool force_valid_ = false;
};

/// One step of a splitting scheme described by `run`.
template <int D>
PhaseState<D> step_splitting(const IntegratorRun& run, PhaseState<D> s,
                             RandomStream& rng) {
  SplittingIntegrator<D> integrator(run);
  integrator.step(s, rng);
  return s;
}

// ---------------------------------------------------------------------------
// Overdamped dynamics  dq = (-V'(q) + eta) dt + sqrt(2 / beta) dW  on L T.

struct OverdampedStepInfo {
  double gaussian;  // the variate G^n driving this step
  bool accepted;
};

class OverdampedIntegrator {
 public:
  OverdampedIntegrator(OverdampedKind kind, double dt, double eta, double beta,
                       const PotentialModel& model)
      : kind_(kind),
        model_(model),
        dt_(dt),
        eta_(eta),
        beta_(beta),
        noise_(std::sqrt(2.0 * dt / beta)) {
    if (model.dim() != 1)
      throw std::invalid_argument("overdamped dynamics must be 1D");
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be > 0");
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be > 0");
    if (kind == OverdampedKind::Mala && eta != 0.0)
      throw std::invalid_argument("MALA requires eta = 0");
  }

  explicit OverdampedIntegrator(const IntegratorRun& run)
      : OverdampedIntegrator(std::get<OverdampedKind>(run.scheme), run.dt,
                             run.forcing.eta * run.forcing.direction.at(0),
                             run.params.beta, run.model) {}

  OverdampedKind kind() const noexcept { return kind_; }
  double dt() const noexcept { return dt_; }
  double beta() const noexcept { return beta_; }
  /// sqrt(2 dt / beta), the diffusion coefficient times sqrt(dt).
  double noise_scale() const noexcept { return noise_; }

  OverdampedStepInfo step(OverdampedState& s, RandomStream& rng) {
    const double g = rng.normal();
    const double drift = -model_.derivative_1d(s.q) + eta_;
    const double disp = dt_ * drift + noise_ * g;
    if (kind_ == OverdampedKind::EulerMaruyama) {
      s.q = model_.domain().wrap(s.q + disp);
      return {g, true};
    }
    // Metropolis-Hastings on the lifted move (q, d) -> (q + d, -d).
    const double y = model_.domain().wrap(s.q + disp);
    const double back = -disp - dt_ * (-model_.derivative_1d(y));
    const double fwd = disp - dt_ * drift;
    const double log_ratio =
        -beta_ * (model_.value_1d(y) - model_.value_1d(s.q)) -
        beta_ * (back * back - fwd * fwd) / (4.0 * dt_);
    ++proposed_;
    const double u = rng.uniform();
    if (log_ratio >= 0.0 || u < std::exp(log_ratio)) {
      s.q = y;
      ++accepted_;
      return {g, true};
    }
    return {g, false};
  }

  double acceptance_rate() const noexcept {
    return proposed_ == 0 ? 1.0
                          : static_cast<double>(accepted_) /
                                static_cast<double>(proposed_);
  }

 private:
  OverdampedKind kind_;
  PotentialModel model_;
  double dt_;
  double eta_;
  double beta_;
  double noise_;
  std::uint64_t proposed_ = 0;
  std::uint64_t accepted_ = 0;
};

/// q <- wrap(q + dt (-V'(q) + eta) + sqrt(2 dt / beta) G).
inline OverdampedState step_overdamped_em(OverdampedState s, double dt,
                                          const ForcingSpec& forcing,
                                          const PotentialModel& model,
                                          double beta, RandomStream& rng) {
  forcing.validate(model.dim());
  OverdampedIntegrator em(OverdampedKind::EulerMaruyama, dt,
                          forcing.eta * forcing.direction.at(0), beta, model);
  em.step(s, rng);
  return s;
}

/// Euler-Maruyama proposal with a Metropolis accept/reject for exp(-beta V).
inline OverdampedState step_mala(OverdampedState s, double dt,
                                 const PotentialModel& model, double beta,
                                 RandomStream& rng) {
  OverdampedIntegrator mala(OverdampedKind::Mala, dt, 0.0, beta, model);
  mala.step(s, rng);
  return s;
}

/// Calls `fn.template operator()<D>()` with D equal to `dim` (1, 2 or 3).
template <class Fn>
decltype(auto) dispatch_dim(int dim, Fn&& fn) {
  switch (dim) {
    case 1: return fn.template operator()<1>();
    case 2: return fn.template operator()<2>();
    case 3: return fn.template operator()<3>();
    default:
      throw std::invalid_argument("unsupported dimension " +
                                  std::to_string(dim));
  }
}

}  // namespace translab
