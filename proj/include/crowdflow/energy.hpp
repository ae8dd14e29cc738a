#pragma once

#include <cmath>

#include "crowdflow/model.hpp"

namespace crowdflow {

/// Slack allowed on the hard density constraint for grid data.
inline constexpr double kFeasibilityTolerance = 1e-9;

struct EnergyReport {
  double m = 0.0;
  double internal = 0.0;  // +inf when the hard constraint is violated
  double potential = 0.0;
  double total = 0.0;
  bool feasible() const { return std::isfinite(internal); }
};

/// (1/m) int rho^m, or for m = inf: 0 if max rho <= 1 + eps_feas and +inf otherwise.
double internal_energy(const GridDensity& rho, double m);
double internal_energy(const QuantileRep& q, double m);

/// int rho Phi. Grid: exact per-cell integration of Phi against the piecewise
/// constant density. Quantile: trapezoid rule over mass levels.
double potential_energy(const GridDensity& rho, const Potential& phi);
double potential_energy(const QuantileRep& q, const Potential& phi);

EnergyReport free_energy(const GridDensity& rho, double m, const Potential& phi);
EnergyReport free_energy(const QuantileRep& q, double m, const Potential& phi);

/// int (rho - 1)_+.
double excess_mass(const GridDensity& rho);
double excess_mass(const QuantileRep& q);

/// Replaces the part of mu above 1 - a by its convolution with the unit-mass
/// kernel g = 1/2 on [-1, 1]. Mass preserving; the result is bounded by 1
/// whenever mu has unit mass and int (mu - 1)_+ <= a.
GridDensity regularize_to_feasible(const GridDensity& mu, double a);

}  // namespace crowdflow
