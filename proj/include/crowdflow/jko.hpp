#pragma once

// Minimizing-movement (JKO) scheme in quantile coordinates.
//
// One step minimizes, over node vectors X with the mass levels of the start
// state Y,
//
//   F(X) = S_m(X) + sum_j omega_j Phi(X_j) + 1/(2h) sum_j omega_j (X_j - Y_j)^2
//
// where omega are the trapezoid mass weights and S_m(X) = (w/m) sum_j
// (w / (X_{j+1} - X_j))^(m-1). For finite m this is smooth and strictly convex
// on {gaps > 0} and is solved by damped Newton (tridiagonal Hessian). For
// m = inf the internal energy vanishes on the feasible set {gaps >= w} and the
// separable objective is minimized exactly by pool-adjacent-violators.

#include <cstddef>
#include <span>
#include <vector>

#include "crowdflow/model.hpp"

namespace crowdflow {

struct JkoOptions {
  double tol_grad = 1e-9;  // scale-free KKT residual
  std::size_t max_iterations = 500;
  double backtrack = 0.5;
};

struct JkoStepResult {
  QuantileRep state;
  double objective = 0.0;
  double dissipation = 0.0;  // E[prev] - E[next]
  double w2_increment = 0.0;
  double kkt_residual = 0.0;
  std::size_t active_constraints = 0;
  std::size_t iterations = 0;
};

/// Objective of one JKO step from `prev` evaluated at node vector x.
double jko_objective(std::span<const double> x, const QuantileRep& prev, double m, double h, const Potential& phi);

/// Upper bound on admissible step sizes: +inf for lambda >= 0, otherwise 1/(2 lambda^-).
double max_step_size(const Potential& phi);

JkoStepResult jko_step(const QuantileRep& rho0, double m, double h, const Potential& phi,
                       const JkoOptions& opts = {});

/// Weighted Euclidean projection onto {x_{j+1} - x_j >= gap}. Empty weights
/// means uniform weights.
std::vector<double> project_spacing(std::span<const double> x, double gap, std::span<const double> weights = {});

struct JkoTrajectory {
  std::vector<QuantileRep> states;  // every `stride`-th step, always including the last
  std::vector<double> times;
  std::vector<std::size_t> steps;
  RunLedger ledger;  // one row per step
};

/// ceil(T/h) steps of the scheme; the piecewise-constant interpolant takes the
/// value of step n on [nh, (n+1)h).
JkoTrajectory jko_trajectory(const QuantileRep& rho0, double m, double h, const Potential& phi, double T,
                             const JkoOptions& opts = {}, std::size_t stride = 1);

struct ComparisonOptions {
  std::size_t reference_cells = 400;  // node count for the larger-mass density
  JkoOptions jko;
};

struct ComparisonReport {
  double max_violation = 0.0;  // max over cells of rho1 - rho2 after one step (signed)
  double tolerance = 0.0;
  bool pass = false;
  std::size_t cells_small = 0;
  std::size_t cells_large = 0;
  double cell_mass = 0.0;
};

/// Comparison tolerance 1e-6 (1 + dx / w).
double comparison_tolerance(double dx, double cell_mass);

/// One JKO step from ordered data rho01 <= rho02 (same grid, shared cell
/// mass), reconstructed on the input grid. Requires m > 2.
ComparisonReport verify_comparison(const GridDensity& rho01, const GridDensity& rho02, double m, double h,
                                   const Potential& phi, const ComparisonOptions& opts = {});

}  // namespace crowdflow
