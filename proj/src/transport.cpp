#include "crowdflow/transport.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace crowdflow {

namespace {

void require_same_mass(const QuantileRep& a, const QuantileRep& b) {
  if (std::abs(a.mass() - b.mass()) > 1e-12 * std::max(a.mass(), b.mass()))
    throw std::invalid_argument("transport: measures must have equal mass");
}

// Brings b onto a's node count when allowed.
QuantileRep aligned(const QuantileRep& a, const QuantileRep& b, Resample resample_flag) {
  require_same_mass(a, b);
  if (a.cells() == b.cells()) return b;
  if (resample_flag == Resample::No) throw std::invalid_argument("transport: node counts differ (resample first)");
  return resample(b, a.cells());
}

// Quantile function evaluated at mass level s in [0, M].
double quantile_at(const QuantileRep& q, double s) {
  const double w = q.cell_mass();
  const double pos = std::clamp(s / w, 0.0, static_cast<double>(q.cells()));
  auto j = static_cast<std::size_t>(std::floor(pos));
  if (j >= q.cells()) return q.hi();
  const double f = pos - static_cast<double>(j);
  return (1.0 - f) * q.node(j) + f * q.node(j + 1);
}

}  // namespace

QuantileRep resample(const QuantileRep& q, std::size_t n) {
  if (n < 1) throw std::invalid_argument("resample: n must be >= 1");
  if (n == q.cells()) return q;
  std::vector<double> nodes(n + 1);
  const double w = q.mass() / static_cast<double>(n);
  for (std::size_t j = 0; j <= n; ++j) nodes[j] = quantile_at(q, w * static_cast<double>(j));
  nodes.front() = q.lo();
  nodes.back() = q.hi();
  return QuantileRep(q.mass(), std::move(nodes));
}

double w2_distance(const QuantileRep& a, const QuantileRep& b_in, Resample resample_flag) {
  const QuantileRep b = aligned(a, b_in, resample_flag);
  double sum = 0.0;
  for (std::size_t j = 0; j <= a.cells(); ++j) {
    const double d = a.node(j) - b.node(j);
    sum += a.weight(j) * d * d;
  }
  return std::sqrt(sum);
}

MonotoneMap optimal_map(const QuantileRep& a, const QuantileRep& b_in, Resample resample_flag) {
  const QuantileRep b = aligned(a, b_in, resample_flag);
  return MonotoneMap{a, std::vector<double>(b.nodes().begin(), b.nodes().end())};
}

double map_cost(const MonotoneMap& map) {
  if (map.images.size() != map.base.cells() + 1) throw std::invalid_argument("map_cost: size mismatch");
  double sum = 0.0;
  for (std::size_t j = 0; j < map.images.size(); ++j) {
    const double d = map.images[j] - map.base.node(j);
    sum += map.base.weight(j) * d * d;
  }
  return sum;
}

QuantileRep pushforward(const QuantileRep& a, const MonotoneMap& map) {
  if (map.base.cells() != a.cells() || map.images.size() != a.cells() + 1)
    throw std::invalid_argument("pushforward: map does not match the measure");
  std::vector<double> nodes = map.images;
  std::sort(nodes.begin(), nodes.end());
  return QuantileRep(a.mass(), std::move(nodes));
}

QuantileRep generalized_geodesic(const QuantileRep& base, const QuantileRep& mu2, const QuantileRep& mu3, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("generalized_geodesic: t must lie in [0, 1]");
  const MonotoneMap t2 = optimal_map(base, mu2);
  const MonotoneMap t3 = optimal_map(base, mu3);
  if (t == 0.0) return mu2;
  if (t == 1.0) return mu3;
  std::vector<double> nodes(base.cells() + 1);
  for (std::size_t j = 0; j < nodes.size(); ++j) nodes[j] = (1.0 - t) * t2.images[j] + t * t3.images[j];
  return QuantileRep(base.mass(), std::move(nodes));
}

double generalized_geodesic_spread(const QuantileRep& base, const QuantileRep& mu2, const QuantileRep& mu3) {
  const MonotoneMap t2 = optimal_map(base, mu2);
  const MonotoneMap t3 = optimal_map(base, mu3);
  double sum = 0.0;
  for (std::size_t j = 0; j < t2.images.size(); ++j) {
    const double d = t2.images[j] - t3.images[j];
    sum += base.weight(j) * d * d;
  }
  return std::sqrt(sum);
}

double brute_force_w2(std::span<const double> atoms_a, std::span<const double> atoms_b, double mass) {
  if (atoms_a.size() != atoms_b.size() || atoms_a.empty())
    throw std::invalid_argument("brute_force_w2: atom counts must be equal and nonzero");
  if (atoms_a.size() > 10000) throw std::invalid_argument("brute_force_w2: at most 1e4 atoms");
  std::vector<double> a(atoms_a.begin(), atoms_a.end());
  std::vector<double> b(atoms_b.begin(), atoms_b.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sum * mass / static_cast<double>(a.size()));
}

std::vector<double> quantile_atoms(const QuantileRep& q, std::size_t n) {
  std::vector<double> atoms(n);
  const double w = q.mass() / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) atoms[k] = quantile_at(q, w * (static_cast<double>(k) + 0.5));
  return atoms;
}

}  // namespace crowdflow
