#pragma once

// Closed-form reference solutions: Barenblatt source profiles, stationary
// minimizers of the free energy, and the interval flow under a quadratic well.

#include <utility>
#include <vector>

#include "crowdflow/model.hpp"

namespace crowdflow {

struct BarenblattValue {
  double pressure;
  double density;
};

/// Barenblatt profile of the drift-free porous medium equation in R^d.
BarenblattValue barenblatt(double x, double t, double tau, double C, double m, int dim = 1, double x0 = 0.0);

/// Radius of the Barenblatt support at time t.
double barenblatt_half_width(double t, double tau, double C, double m, int dim = 1);

/// Cell averages of the Barenblatt density on a grid.
GridDensity barenblatt_grid(const GridSpec& grid, double t, double tau, double C, double m, double x0 = 0.0);

/// Sublevel set {Phi <= level} intersected with [lo, hi], as sorted intervals.
std::vector<Interval> sublevel_set(const Potential& phi, double level, double lo, double hi);

struct StationaryProfile {
  GridDensity rho;
  double level;  // C_A
};

/// Stationary profiles at finite m. SteadyState is the rest state of
/// rho_t = div(grad rho^m + rho grad Phi), ((m-1)/m (C - Phi)_+)^(1/(m-1)).
/// EnergyMinimizer is the minimizer of int rho^m/m + rho Phi, which is what the
/// JKO scheme converges to: (C - Phi)_+^(1/(m-1)). Both reduce to the
/// indicator of {Phi <= C} at m = infinity.
enum class StationaryForm { SteadyState, EnergyMinimizer };

StationaryProfile stationary_profile(double m, const Potential& phi, double mass, const GridSpec& grid,
                                     StationaryForm form = StationaryForm::SteadyState);

/// Exact Hele-Shaw motion of one interval under Phi = q/2 (x - center)^2.
std::pair<double, double> quadratic_interval_flow(double a0, double b0, double q, double t, double center = 0.0);

}  // namespace crowdflow
