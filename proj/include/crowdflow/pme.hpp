#pragma once

// Explicit conservative finite-volume solver for the porous medium equation
// with drift, rho_t = div(grad rho^m + rho grad Phi), with no-flux walls.

#include <cstddef>
#include <vector>

#include "crowdflow/model.hpp"

namespace crowdflow {

struct PmeOptions {
  double cfl = 0.4;
  double support_threshold = kSupportThreshold;
  /// Snapshot times in (0, T]; empty means 16 equispaced times ending at T.
  std::vector<double> snapshot_times;
  /// Abort when support comes within this many cells of the box walls.
  std::size_t wall_margin_cells = 2;
};

struct PmeSnapshot {
  double t;
  GridDensity rho;
};

struct PmeRun {
  std::vector<PmeSnapshot> snapshots;  // includes t = 0
  RunLedger ledger;                    // one row per snapshot
  std::size_t steps = 0;
  double clipped_mass = 0.0;
};

/// cfl * min(dx^2 / (2 m max(rho, floor)^(m-1)), dx / (max|Phi'| + eps)); in
/// radial mode the diffusive bound is further divided by dim.
double stable_dt(const GridDensity& rho, double m, const Potential& phi, double cfl = 0.4);

/// One forward-Euler step. Rejects dt above the cfl = 1 bound. Negative values
/// down to -1e-14 are zeroed with mass renormalization; `clipped` accumulates
/// the zeroed mass.
GridDensity pme_step(const GridDensity& rho, double m, const Potential& phi, double dt, double* clipped = nullptr);

PmeRun pme_run(const GridDensity& rho0, double m, const Potential& phi, double T, const PmeOptions& opts = {});

/// Pressure m/(m-1) rho^(m-1) per cell.
std::vector<double> pressure(const GridDensity& rho, double m);

/// Maximal runs of cells with rho > eps, bridged across single-cell gaps.
Patch support_set(const GridDensity& rho, double eps = kSupportThreshold);

}  // namespace crowdflow
