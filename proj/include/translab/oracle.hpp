#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "translab/model.hpp"

namespace translab {

/// Values of a density on n uniform nodes of [0, L).
struct GridDensity {
  double length = 1.0;
  std::vector<double> grid;
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  double spacing() const noexcept { return length / static_cast<double>(values.size()); }
  /// Periodic trapezoid integral.
  double integral() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * spacing();
  }
};

struct PoissonSolution {
  double length = 1.0;
  std::vector<double> grid;
  std::vector<double> values;
  /// Gibbs weights used for centering and the gauge (sum to 1).
  std::vector<double> weights;
  /// Max nodal residual of the bordered linear system.
  double residual = 0.0;
  /// Lagrange multiplier of the gauge constraint; O(h^2) discretization
  /// inconsistency between the grid Gibbs weights and the discrete kernel.
  double multiplier = 0.0;

  double gauge() const {
    double g = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) g += weights[i] * values[i];
    return g;
  }
};

namespace detail {

inline void require_1d(const PotentialModel& model, std::size_t grid_n,
                       std::size_t min_n, const char* who) {
  if (model.dim() != 1)
    throw std::invalid_argument(std::string(who) + ": model must be 1D");
  if (grid_n < min_n)
    throw std::invalid_argument(std::string(who) + ": grid_n too small");
}

inline std::vector<double> uniform_grid(double length, std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = length * static_cast<double>(i) / static_cast<double>(n);
  return g;
}

}  // namespace detail

/// Normalized Gibbs weights e^{-beta V(q_i)} / sum_j e^{-beta V(q_j)}.
inline std::vector<double> gibbs_weights_1d(const PotentialModel& model,
                                            double beta, std::size_t grid_n) {
  const auto g = detail::uniform_grid(model.length(), grid_n);
  std::vector<double> w(grid_n);
  double vmin = model.value_1d(g[0]);
  for (double x : g) vmin = std::min(vmin, model.value_1d(x));
  double z = 0.0;
  for (std::size_t i = 0; i < grid_n; ++i) {
    w[i] = std::exp(-beta * (model.value_1d(g[i]) - vmin));
    z += w[i];
  }
  for (double& x : w) x /= z;
  return w;
}

/// Stationary density of dq = (eta - V'(q)) dt + sqrt(2/beta) dW on the
/// circle, psi(q) ∝ int_0^L exp(beta (V(q+y) - V(q) - eta y)) dy. The inner
/// integral is a trapezoid rule on the same grid with the first
/// Euler-Maclaurin endpoint correction (the integrand is not periodic when
/// eta != 0).
inline GridDensity stationary_density_1d(const PotentialModel& model,
                                         double eta, std::size_t grid_n,
                                         double beta = 1.0) {
  detail::require_1d(model, grid_n, 128, "stationary_density_1d");
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be > 0");
  const double L = model.length();
  const double h = L / static_cast<double>(grid_n);
  GridDensity d;
  d.length = L;
  d.grid = detail::uniform_grid(L, grid_n);
  std::vector<double> v(grid_n), dv(grid_n);
  for (std::size_t i = 0; i < grid_n; ++i) {
    v[i] = model.value_1d(d.grid[i]);
    dv[i] = model.derivative_1d(d.grid[i]);
  }
  const double tail = std::exp(-beta * eta * L);
  d.values.resize(grid_n);
  for (std::size_t i = 0; i < grid_n; ++i) {
    // f(y) = exp(beta (V(q_i + y) - V(q_i) - eta y)), f(0) = 1, f(L) = tail.
    double s = 0.5 * (1.0 + tail);
    for (std::size_t j = 1; j < grid_n; ++j) {
      const std::size_t k = (i + j) % grid_n;
      s += std::exp(beta * (v[k] - v[i] - eta * static_cast<double>(j) * h));
    }
    // f'(y) = beta (V'(q_i + y) - eta) f(y).
    const double fp0 = beta * (dv[i] - eta);
    const double fpL = beta * (dv[i] - eta) * tail;
    d.values[i] = h * s - h * h / 12.0 * (fpL - fp0);
  }
  const double z = d.integral();
  for (double& x : d.values) x /= z;
  return d;
}

/// Mean drift int (eta - V') psi_eta dq.
inline double steady_velocity_1d(const PotentialModel& model, double eta,
                                 std::size_t grid_n, double beta = 1.0) {
  const GridDensity d = stationary_density_1d(model, eta, grid_n, beta);
  double s = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    s += (eta - model.derivative_1d(d.grid[i])) * d.values[i];
  return s * d.spacing();
}

/// Max nodal residual of ((V' - eta) psi + psi' / beta)' = 0 with centered
/// differences.
inline double fokker_planck_residual(const PotentialModel& model,
                                     const GridDensity& d, double eta,
                                     double beta = 1.0) {
  const std::size_t n = d.size();
  const double h = d.spacing();
  std::vector<double> flux(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dpsi = (d.values[(i + 1) % n] - d.values[(i + n - 1) % n]) / (2 * h);
    flux[i] = (model.derivative_1d(d.grid[i]) - eta) * d.values[i] + dpsi / beta;
  }
  double r = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    r = std::max(r, std::abs((flux[(i + 1) % n] - flux[(i + n - 1) % n]) / (2 * h)));
  return r;
}

struct MobilityOracle {
  double value = 0.0;
  double half_step_value = 0.0;
  double relative_gap = 0.0;
};

/// d/d eta of the steady velocity at eta = 0 by central differences at
/// h = 1e-3, checked against h / 2.
inline MobilityOracle mobility_oracle_1d_checked(const PotentialModel& model,
                                                 std::size_t grid_n,
                                                 double beta = 1.0) {
  auto slope = [&](double h) {
    return (steady_velocity_1d(model, h, grid_n, beta) -
            steady_velocity_1d(model, -h, grid_n, beta)) /
           (2.0 * h);
  };
  MobilityOracle m;
  m.value = slope(1e-3);
  m.half_step_value = slope(5e-4);
  m.relative_gap = std::abs(m.value - m.half_step_value) / std::abs(m.half_step_value);
  if (m.relative_gap > 1e-5)
    throw std::runtime_error("mobility_oracle_1d: h and h/2 disagree; refine grid_n");
  return m;
}

inline double mobility_oracle_1d(const PotentialModel& model, std::size_t grid_n,
                                 double beta = 1.0) {
  return mobility_oracle_1d_checked(model, grid_n, beta).value;
}

/// Solves -L Phi = R - nu0(R) for L = -V' d/dq + beta^{-1} d^2/dq^2 on the
/// periodic grid, gauge sum_i w_i Phi_i = 0 with w the grid Gibbs weights.
/// The gauge is imposed through a bordered system
/// [-L 1; w^T 0][Phi; c] = [R - nu0(R); 0].
inline PoissonSolution poisson_solve_1d(const PotentialModel& model, double beta,
                                        const std::vector<double>& r_values,
                                        std::size_t grid_n) {
  detail::require_1d(model, grid_n, 256, "poisson_solve_1d");
  if (r_values.size() != grid_n)
    throw std::invalid_argument("poisson_solve_1d: R must be given on the grid");
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be > 0");
  const std::size_t n = grid_n;
  PoissonSolution sol;
  sol.length = model.length();
  sol.grid = detail::uniform_grid(sol.length, n);
  sol.weights = gibbs_weights_1d(model, beta, n);
  const double h = sol.length / static_cast<double>(n);

  double rbar = 0.0;
  for (std::size_t i = 0; i < n; ++i) rbar += sol.weights[i] * r_values[i];

  using Index = Eigen::Index;
  const Index N = static_cast<Index>(n);
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(5 * n + 1);
  const double diff = 1.0 / (beta * h * h);
  for (Index i = 0; i < N; ++i) {
    const double drift = -model.derivative_1d(sol.grid[static_cast<std::size_t>(i)]);
    const double adv = drift / (2.0 * h);
    const Index ip = (i + 1) % N, im = (i + N - 1) % N;
    // -L applied: -(diff (u+ - 2u + u-) + adv (u+ - u-)).
    t.emplace_back(i, ip, -(diff + adv));
    t.emplace_back(i, im, -(diff - adv));
    t.emplace_back(i, i, 2.0 * diff);
    t.emplace_back(i, N, 1.0);
    t.emplace_back(N, i, sol.weights[static_cast<std::size_t>(i)]);
  }
  Eigen::SparseMatrix<double> A(N + 1, N + 1);
  A.setFromTriplets(t.begin(), t.end());
  A.makeCompressed();
  Eigen::VectorXd b(N + 1);
  for (Index i = 0; i < N; ++i) b[i] = r_values[static_cast<std::size_t>(i)] - rbar;
  b[N] = 0.0;

  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(A);
  if (lu.info() != Eigen::Success)
    throw std::runtime_error("poisson_solve_1d: singular system");
  const Eigen::VectorXd x = lu.solve(b);
  if (lu.info() != Eigen::Success)
    throw std::runtime_error("poisson_solve_1d: solve failed");
  const Eigen::VectorXd res = A * x - b;
  sol.residual = res.lpNorm<Eigen::Infinity>();
  const double scale = std::max(1.0, b.lpNorm<Eigen::Infinity>());
  if (!(sol.residual <= 1e-9 * scale))
    throw std::runtime_error("poisson_solve_1d: residual did not converge");
  sol.values.assign(x.data(), x.data() + N);
  sol.multiplier = x[N];
  return sol;
}

using GridFunction = std::function<double(double)>;

inline std::vector<double> sample_on_grid(const GridFunction& f, double length,
                                          std::size_t grid_n) {
  const auto g = detail::uniform_grid(length, grid_n);
  std::vector<double> v(grid_n);
  for (std::size_t i = 0; i < grid_n; ++i) v[i] = f(g[i]);
  return v;
}

/// int Phi S dnu0 with -L Phi = R - nu0(R).
inline double gk_oracle_1d(const PotentialModel& model, double beta,
                           const GridFunction& R, const GridFunction& S,
                           std::size_t grid_n) {
  const auto rv = sample_on_grid(R, model.length(), grid_n);
  const PoissonSolution sol = poisson_solve_1d(model, beta, rv, grid_n);
  double s = 0.0;
  for (std::size_t i = 0; i < grid_n; ++i)
    s += sol.weights[i] * sol.values[i] * S(sol.grid[i]);
  return s;
}

/// Overdamped mobility through the Green-Kubo route: the response of the
/// mean drift eta - V' is 1 + gk(-V', beta V').
inline double overdamped_mobility_gk_1d(const PotentialModel& model, double beta,
                                        std::size_t grid_n) {
  return 1.0 + gk_oracle_1d(
                   model, beta,
                   [&](double q) { return -model.derivative_1d(q); },
                   [&](double q) { return beta * model.derivative_1d(q); },
                   grid_n);
}

/// Mobility of a free Langevin particle, alpha = beta F^T D F with
/// D = I / (beta gamma).
inline double free_langevin_mobility(const PhysicalParams& params) {
  if (!(params.gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
  return 1.0 / params.gamma;
}

}  // namespace translab
