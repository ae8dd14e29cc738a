#pragma once

// One-dimensional quadratic optimal transport in quantile coordinates.
//
// Between equal-mass measures the monotone rearrangement is optimal, so W2 is
// the L2 distance of inverse distribution functions over mass levels. The
// discrete distance uses the trapezoid rule over mass levels (node weights
// w/2, w, ..., w, w/2), the same quadrature as the potential energy and the
// JKO transport penalty.

#include <span>
#include <vector>

#include "crowdflow/model.hpp"

namespace crowdflow {

struct MonotoneMap {
  QuantileRep base;
  std::vector<double> images;  // T(X_j), nondecreasing
};

enum class Resample { No, Yes };

double w2_distance(const QuantileRep& a, const QuantileRep& b, Resample resample = Resample::No);

MonotoneMap optimal_map(const QuantileRep& a, const QuantileRep& b, Resample resample = Resample::No);

/// Transport cost sum_j weight_j |T_j - X_j|^2.
double map_cost(const MonotoneMap& map);

QuantileRep pushforward(const QuantileRep& a, const MonotoneMap& map);

/// Node-wise interpolation (1-t) T2 + t T3 of the optimal maps from `base`.
QuantileRep generalized_geodesic(const QuantileRep& base, const QuantileRep& mu2, const QuantileRep& mu3,
                                 double t);

/// Weighted L2 distance between the maps from `base` to mu2 and mu3; the
/// quadratic defect term of lambda-convexity along the generalized geodesic.
double generalized_geodesic_spread(const QuantileRep& base, const QuantileRep& mu2, const QuantileRep& mu3);

/// Optimal assignment cost between two equal-size sets of equal-weight atoms
/// of total mass `mass`. Sorted pairing, optimal for convex costs on the line.
double brute_force_w2(std::span<const double> atoms_a, std::span<const double> atoms_b, double mass = 1.0);

/// n equal-mass atoms placed at the mass-midpoint quantiles.
std::vector<double> quantile_atoms(const QuantileRep& q, std::size_t n);

/// Nodes re-sampled to n cells by exact interpolation of the piecewise-linear
/// quantile function.
QuantileRep resample(const QuantileRep& q, std::size_t n);

}  // namespace crowdflow
