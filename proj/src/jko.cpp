#include "crowdflow/jko.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "crowdflow/energy.hpp"
#include "crowdflow/transport.hpp"
#include "detail.hpp"

namespace crowdflow {

namespace {

// ---------------------------------------------------------------------------
// Generalized pool-adjacent-violators: minimize sum_j P_j(z_j) subject to
// z_0 <= z_1 <= ... with every P_j a strictly convex polynomial. Merged
// blocks share one value and their polynomials simply add.

double poly_d1(const std::vector<double>& c, double z) {
  double acc = 0.0;
  for (std::size_t k = c.size(); k-- > 1;) acc = acc * z + static_cast<double>(k) * c[k];
  return acc;
}

double poly_d2(const std::vector<double>& c, double z) {
  double acc = 0.0;
  for (std::size_t k = c.size(); k-- > 2;) acc = acc * z + static_cast<double>(k * (k - 1)) * c[k];
  return acc;
}

// Root of P' in [lo, hi] given P'(lo) <= 0 <= P'(hi); safeguarded Newton.
double minimize_bracketed(const std::vector<double>& c, double lo, double hi, double z) {
  if (!(z > lo && z < hi)) z = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double d1 = poly_d1(c, z);
    if (d1 == 0.0) return z;
    if (d1 < 0.0)
      lo = z;
    else
      hi = z;
    const double d2 = poly_d2(c, z);
    double next = d2 > 0.0 ? z - d1 / d2 : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - z) <= 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(z))) return next;
    z = next;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(z))) return z;
  }
  return z;
}

double minimize_from(const std::vector<double>& c, double z0) {
  const double d0 = poly_d1(c, z0);
  if (d0 == 0.0) return z0;
  double step = 1e-3 * (1.0 + std::abs(z0));
  double lo = z0;
  double hi = z0;
  for (int it = 0; it < 200; ++it) {
    if (d0 < 0.0) {
      hi = z0 + step;
      if (poly_d1(c, hi) >= 0.0) break;
      lo = hi;
    } else {
      lo = z0 - step;
      if (poly_d1(c, lo) <= 0.0) break;
      hi = lo;
    }
    step *= 2.0;
    if (it == 199) throw NumericalError("jko: block objective is not coercive");
  }
  return minimize_bracketed(c, lo, hi, z0);
}

struct Block {
  std::size_t first;
  std::size_t last;  // inclusive
  std::vector<double> coeffs;
  double z;
};

void add_into(std::vector<double>& acc, const std::vector<double>& c) {
  if (acc.size() < c.size()) acc.resize(c.size(), 0.0);
  for (std::size_t k = 0; k < c.size(); ++k) acc[k] += c[k];
}

// pieces[j] are the polynomial coefficients of P_j; starts[j] a guess for its minimizer.
std::vector<Block> isotonic_blocks(std::vector<std::vector<double>> pieces, std::span<const double> starts) {
  std::vector<Block> stack;
  stack.reserve(pieces.size());
  for (std::size_t j = 0; j < pieces.size(); ++j) {
    Block b{j, j, std::move(pieces[j]), 0.0};
    b.z = b.coeffs.size() == 3 ? -b.coeffs[1] / (2.0 * b.coeffs[2]) : minimize_from(b.coeffs, starts[j]);
    while (!stack.empty() && stack.back().z > b.z) {
      Block& prev = stack.back();
      const double lo = b.z;
      const double hi = prev.z;
      add_into(prev.coeffs, b.coeffs);
      prev.last = b.last;
      if (prev.coeffs.size() == 3)
        prev.z = -prev.coeffs[1] / (2.0 * prev.coeffs[2]);
      else
        prev.z = minimize_bracketed(prev.coeffs, lo, hi, 0.5 * (lo + hi));
      b = std::move(prev);
      stack.pop_back();
    }
    stack.push_back(std::move(b));
  }
  return stack;
}

// Quadratic (a/2)(z - t)^2 in coefficient form.
std::vector<double> quadratic_piece(double a, double t) { return {0.5 * a * t * t, -a * t, 0.5 * a}; }

void check_step_size(double h, const Potential& phi) {
  if (!(h > 0.0) || !std::isfinite(h)) throw std::invalid_argument("jko_step: h must be positive");
  if (h >= max_step_size(phi))
    throw std::invalid_argument("jko_step: h outside the admissible range h < 1/(2 lambda^-)");
}

double free_energy_total(const QuantileRep& q, double m, const Potential& phi) {
  return free_energy(q, m, phi).total;
}

// Hard congestion: exact separable minimization by PAV.
JkoStepResult step_congested(const QuantileRep& rho0, double h, const Potential& phi) {
  const std::size_t n = rho0.cells();
  const double w = rho0.cell_mass();
  const std::vector<double> omega = trapezoid_weights(n, w);
  if (rho0.max_density() > 1.0 + kFeasibilityTolerance)
    throw std::invalid_argument("jko_step: infeasible start state for m = inf");

  std::vector<std::vector<double>> pieces(n + 1);
  std::vector<double> starts(n + 1);
  const bool quadratic_only = phi.degree() <= 2;
  for (std::size_t j = 0; j <= n; ++j) {
    const double offset = static_cast<double>(j) * w;
    const double t = rho0.node(j) - offset;
    std::vector<double> c = quadratic_piece(omega[j] / h, t);
    std::vector<double> pc = phi.shifted_coefficients(offset);
    for (double& v : pc) v *= omega[j];
    add_into(c, pc);
    if (quadratic_only) c.resize(3, 0.0);
    pieces[j] = std::move(c);
    starts[j] = t - h * phi.gradient(rho0.node(j));
  }
  const std::vector<Block> blocks = isotonic_blocks(std::move(pieces), starts);

  std::vector<double> x(n + 1);
  std::size_t active = 0;
  for (const Block& b : blocks) {
    for (std::size_t j = b.first; j <= b.last; ++j) x[j] = b.z + static_cast<double>(j) * w;
    active += b.last - b.first;
  }

  // KKT: stationarity of every block and nonnegative spacing multipliers.
  double residual = 0.0;
  for (const Block& b : blocks) {
    double cum = 0.0;
    double scale = 0.0;
    for (std::size_t j = b.first; j <= b.last; ++j) {
      const double grad_phi = omega[j] * phi.gradient(x[j]);
      const double grad_w2 = omega[j] * (x[j] - rho0.node(j)) / h;
      cum += grad_phi + grad_w2;
      scale += omega[j] + std::abs(grad_phi) + std::abs(grad_w2);
      if (j < b.last) residual = std::max(residual, std::max(cum, 0.0) / scale);  // multiplier is -cum
    }
    residual = std::max(residual, std::abs(cum) / scale);
  }

  QuantileRep next(rho0.mass(), std::move(x));
  JkoStepResult r{next, 0.0, 0.0, 0.0, residual, active, 1};
  r.objective = jko_objective(next.nodes(), rho0, kHardCongestion, h, phi);
  r.dissipation = free_energy_total(rho0, kHardCongestion, phi) - free_energy_total(next, kHardCongestion, phi);
  r.w2_increment = w2_distance(rho0, next);
  return r;
}

// Finite m: damped Newton with a tridiagonal Hessian.
struct FiniteProblem {
  const QuantileRep& prev;
  double m;
  double h;
  const Potential& phi;
  std::vector<double> omega;
  double w;

  // Gradient and its scale-free residual; pressure p_j = (m-1)/m (w/g_j)^m.
  double gradient(std::span<const double> x, std::vector<double>& grad) const {
    const std::size_t n = x.size() - 1;
    std::vector<double> p(n);
    for (std::size_t j = 0; j < n; ++j) p[j] = (m - 1.0) / m * detail::power(w / (x[j + 1] - x[j]), m);
    double residual = 0.0;
    grad.assign(n + 1, 0.0);
    for (std::size_t j = 0; j <= n; ++j) {
      const double left = j > 0 ? p[j - 1] : 0.0;
      const double right = j < n ? p[j] : 0.0;
      const double gphi = omega[j] * phi.gradient(x[j]);
      const double gw2 = omega[j] * (x[j] - prev.node(j)) / h;
      grad[j] = right - left + gphi + gw2;
      const double scale = omega[j] + left + right + std::abs(gphi) + std::abs(gw2);
      residual = std::max(residual, std::abs(grad[j]) / scale);
    }
    return residual;
  }
};

bool solve_tridiagonal(std::vector<double> diag, std::vector<double> off, std::vector<double>& rhs) {
  // Symmetric tridiagonal; off[j] couples j and j+1. Fails on a nonpositive pivot.
  const std::size_t n = diag.size();
  for (std::size_t j = 0; j < n; ++j) {
    if (!(diag[j] > 0.0) || !std::isfinite(diag[j])) return false;
    if (j + 1 < n) {
      const double f = off[j] / diag[j];
      diag[j + 1] -= f * off[j];
      rhs[j + 1] -= f * rhs[j];
    }
  }
  for (std::size_t j = n; j-- > 0;) {
    double v = rhs[j];
    if (j + 1 < n) v -= off[j] * rhs[j + 1];
    rhs[j] = v / diag[j];
  }
  return true;
}

JkoStepResult step_finite(const QuantileRep& rho0, double m, double h, const Potential& phi, const JkoOptions& opts) {
  const std::size_t n = rho0.cells();
  FiniteProblem prob{rho0, m, h, phi, trapezoid_weights(n, rho0.cell_mass()), rho0.cell_mass()};
  std::vector<double> x(rho0.nodes().begin(), rho0.nodes().end());
  std::vector<double> grad;
  double f = jko_objective(x, rho0, m, h, phi);
  double residual = prob.gradient(x, grad);
  std::size_t iter = 0;
  std::vector<double> diag(n + 1);
  std::vector<double> off(n);
  std::vector<double> trial(n + 1);

  for (; iter < opts.max_iterations && residual > opts.tol_grad; ++iter) {
    const double w = prob.w;
    for (std::size_t j = 0; j <= n; ++j) diag[j] = prob.omega[j] * (phi.second_derivative(x[j]) + 1.0 / h);
    for (std::size_t j = 0; j < n; ++j) {
      const double g = x[j + 1] - x[j];
      const double s = (m - 1.0) * detail::power(w / g, m) / g;
      diag[j] += s;
      diag[j + 1] += s;
      off[j] = -s;
    }
    std::vector<double> dir(grad.size());
    for (std::size_t j = 0; j <= n; ++j) dir[j] = -grad[j];
    if (!solve_tridiagonal(diag, off, dir)) {
      // Near-singular Hessian: scaled gradient direction.
      for (std::size_t j = 0; j <= n; ++j) dir[j] = -grad[j] * h / prob.omega[j];
    }
    double slope = 0.0;
    for (std::size_t j = 0; j <= n; ++j) slope += grad[j] * dir[j];
    if (!(slope < 0.0)) break;

    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 80; ++ls, alpha *= opts.backtrack) {
      bool ordered = true;
      for (std::size_t j = 0; j <= n; ++j) {
        trial[j] = x[j] + alpha * dir[j];
        if (j > 0 && !(trial[j] > trial[j - 1])) ordered = false;
      }
      if (!ordered) continue;
      const double ft = jko_objective(trial, rho0, m, h, phi);
      if (std::isfinite(ft) && ft <= f + 1e-4 * alpha * slope + 1e-15 * std::abs(f)) {
        accepted = true;
        x.swap(trial);
        f = ft;
        break;
      }
    }
    residual = prob.gradient(x, grad);
    if (!accepted) break;
  }
  if (residual > opts.tol_grad)
    throw NumericalError("jko_step: Newton did not converge (residual " + detail::num(residual) + ")");

  QuantileRep next(rho0.mass(), std::move(x));
  JkoStepResult r{next, f, 0.0, 0.0, residual, 0, iter};
  r.dissipation = free_energy_total(rho0, m, phi) - free_energy_total(next, m, phi);
  r.w2_increment = w2_distance(rho0, next);
  return r;
}

}  // namespace

double max_step_size(const Potential& phi) {
  const double lam = phi.lambda();
  if (lam >= 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / (2.0 * -lam);
}

double jko_objective(std::span<const double> x, const QuantileRep& prev, double m, double h, const Potential& phi) {
  const std::size_t n = prev.cells();
  if (x.size() != n + 1) throw std::invalid_argument("jko_objective: node count mismatch");
  const double w = prev.cell_mass();
  double internal = 0.0;
  bool feasible = true;
  for (std::size_t j = 0; j < n; ++j) {
    const double g = x[j + 1] - x[j];
    if (!(g > 0.0)) return std::numeric_limits<double>::infinity();
    if (is_hard_congestion(m)) {
      if (g < w * (1.0 - kFeasibilityTolerance)) feasible = false;
    } else {
      internal += detail::power(w / g, m - 1.0);
    }
  }
  if (!feasible) return std::numeric_limits<double>::infinity();
  if (!is_hard_congestion(m)) internal *= w / m;
  double pot = 0.0;
  double transport = 0.0;
  for (std::size_t j = 0; j <= n; ++j) {
    const double om = prev.weight(j);
    pot += om * phi.value(x[j]);
    const double d = x[j] - prev.node(j);
    transport += om * d * d;
  }
  return internal + pot + transport / (2.0 * h);
}

JkoStepResult jko_step(const QuantileRep& rho0, double m, double h, const Potential& phi, const JkoOptions& opts) {
  if (!(m > 1.0)) throw std::invalid_argument("jko_step: m must exceed 1");
  if (!(opts.tol_grad > 0.0)) throw std::invalid_argument("jko_step: tol_grad must be positive");
  if (!(opts.backtrack > 0.0 && opts.backtrack < 1.0)) throw std::invalid_argument("jko_step: backtrack in (0,1)");
  check_step_size(h, phi);
  if (is_hard_congestion(m)) return step_congested(rho0, h, phi);
  return step_finite(rho0, m, h, phi, opts);
}

std::vector<double> project_spacing(std::span<const double> x, double gap, std::span<const double> weights) {
  if (!(gap >= 0.0)) throw std::invalid_argument("project_spacing: gap must be >= 0");
  if (!weights.empty() && weights.size() != x.size()) throw std::invalid_argument("project_spacing: weight count");
  std::vector<std::vector<double>> pieces(x.size());
  std::vector<double> starts(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double wj = weights.empty() ? 1.0 : weights[j];
    if (!(wj > 0.0)) throw std::invalid_argument("project_spacing: weights must be positive");
    starts[j] = x[j] - static_cast<double>(j) * gap;
    pieces[j] = quadratic_piece(wj, starts[j]);
  }
  std::vector<double> out(x.size());
  for (const Block& b : isotonic_blocks(std::move(pieces), starts))
    for (std::size_t j = b.first; j <= b.last; ++j) out[j] = b.z + static_cast<double>(j) * gap;
  return out;
}

JkoTrajectory jko_trajectory(const QuantileRep& rho0, double m, double h, const Potential& phi, double T,
                             const JkoOptions& opts, std::size_t stride) {
  if (!(T > 0.0)) throw std::invalid_argument("jko_trajectory: T must be positive");
  if (stride < 1) stride = 1;
  check_step_size(h, phi);
  const auto steps = static_cast<std::size_t>(std::ceil(T / h - 1e-9));
  JkoTrajectory traj;
  const auto record = [&](std::size_t n, const QuantileRep& q, double w2_inc) {
    const EnergyReport e = free_energy(q, m, phi);
    traj.ledger.append(LedgerRow{n, static_cast<double>(n) * h, e.total, e.internal, e.potential, w2_inc, q.mass(),
                                 q.lo(), q.hi(), excess_mass(q)});
  };
  QuantileRep cur = rho0;
  record(0, cur, 0.0);
  traj.states.push_back(cur);
  traj.times.push_back(0.0);
  traj.steps.push_back(0);
  for (std::size_t n = 1; n <= steps; ++n) {
    JkoStepResult r = jko_step(cur, m, h, phi, opts);
    cur = std::move(r.state);
    record(n, cur, r.w2_increment);
    if (n % stride == 0 || n == steps) {
      traj.states.push_back(cur);
      traj.times.push_back(static_cast<double>(n) * h);
      traj.steps.push_back(n);
    }
  }
  return traj;
}

double comparison_tolerance(double dx, double cell_mass) { return 1e-6 * (1.0 + dx / cell_mass); }

ComparisonReport verify_comparison(const GridDensity& rho01, const GridDensity& rho02, double m, double h,
                                   const Potential& phi, const ComparisonOptions& opts) {
  if (!(m > 2.0)) throw std::invalid_argument("verify_comparison: the comparison principle is asserted for m > 2 only");
  const GridSpec& grid = rho02.grid();
  if (rho01.size() != rho02.size() || rho01.grid().x_lo != grid.x_lo || rho01.grid().x_hi != grid.x_hi)
    throw std::invalid_argument("verify_comparison: densities must share a grid");
  for (std::size_t i = 0; i < rho01.size(); ++i)
    if (rho01[i] > rho02[i] + 1e-14) throw std::invalid_argument("verify_comparison: inputs are not ordered");
  if (is_hard_congestion(m) && rho02.max_value() > 1.0 + kFeasibilityTolerance)
    throw std::invalid_argument("verify_comparison: m = inf needs max density <= 1");

  const double w = rho02.mass() / static_cast<double>(opts.reference_cells);
  const auto small_cells = std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(rho01.mass() / w)));
  const QuantileRep q1 = to_quantile(rho01, small_cells);
  const QuantileRep q2 = to_quantile(rho02, opts.reference_cells);
  const JkoStepResult s1 = jko_step(q1, m, h, phi, opts.jko);
  const JkoStepResult s2 = jko_step(q2, m, h, phi, opts.jko);
  const GridDensity g1 = to_grid(s1.state, grid);
  const GridDensity g2 = to_grid(s2.state, grid);

  ComparisonReport rep;
  rep.max_violation = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < g1.size(); ++i) rep.max_violation = std::max(rep.max_violation, g1[i] - g2[i]);
  rep.tolerance = comparison_tolerance(grid.dx(), w);
  rep.pass = rep.max_violation <= rep.tolerance;
  rep.cells_small = small_cells;
  rep.cells_large = opts.reference_cells;
  rep.cell_mass = w;
  return rep;
}

}  // namespace crowdflow
