#include "crowdflow/energy.hpp"

#include <algorithm>
#include <stdexcept>

#include "detail.hpp"

namespace crowdflow {

namespace {

void require_exponent(double m) {
  if (!(m > 1.0)) throw std::invalid_argument("energy: exponent m must exceed 1");
}

}  // namespace

double internal_energy(const GridDensity& rho, double m) {
  require_exponent(m);
  if (is_hard_congestion(m))
    return rho.max_value() <= 1.0 + kFeasibilityTolerance ? 0.0 : kHardCongestion;
  double sum = 0.0;
  for (std::size_t i = 0; i < rho.size(); ++i) sum += detail::power(rho[i], m) * rho.grid().cell_measure(i);
  return sum / m;
}

double internal_energy(const QuantileRep& q, double m) {
  require_exponent(m);
  if (is_hard_congestion(m)) return q.max_density() <= 1.0 + kFeasibilityTolerance ? 0.0 : kHardCongestion;
  // Each gap carries mass w at density w / gap: (1/m) rho^m * gap = (1/m) rho^(m-1) w.
  const double w = q.cell_mass();
  double sum = 0.0;
  for (std::size_t j = 0; j < q.cells(); ++j) sum += detail::power(q.density(j), m - 1.0);
  return sum * w / m;
}

double potential_energy(const GridDensity& rho, const Potential& phi) {
  const GridSpec& g = rho.grid();
  const bool radial = g.geometry == Geometry::Radial;
  const double surface = radial ? g.dim * unit_ball_volume(g.dim) : 1.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    if (rho[i] == 0.0) continue;
    const double cell = detail::gauss_integrate(
        [&](double x) { return phi.value(x) * (radial ? surface * std::pow(x, g.dim - 1) : 1.0); }, g.edge(i),
        g.edge(i + 1));
    sum += rho[i] * cell;
  }
  return sum;
}

double potential_energy(const QuantileRep& q, const Potential& phi) {
  double sum = 0.0;
  for (std::size_t j = 0; j <= q.cells(); ++j) sum += q.weight(j) * phi.value(q.node(j));
  return sum;
}

namespace {

template <class Rho>
EnergyReport compose(const Rho& rho, double m, const Potential& phi) {
  EnergyReport r;
  r.m = m;
  r.internal = internal_energy(rho, m);
  r.potential = potential_energy(rho, phi);
  r.total = r.internal + r.potential;
  return r;
}

}  // namespace

EnergyReport free_energy(const GridDensity& rho, double m, const Potential& phi) { return compose(rho, m, phi); }
EnergyReport free_energy(const QuantileRep& q, double m, const Potential& phi) { return compose(q, m, phi); }

double excess_mass(const GridDensity& rho) {
  double sum = 0.0;
  for (std::size_t i = 0; i < rho.size(); ++i) sum += std::max(rho[i] - 1.0, 0.0) * rho.grid().cell_measure(i);
  return sum;
}

double excess_mass(const QuantileRep& q) {
  const double w = q.cell_mass();
  double sum = 0.0;
  for (std::size_t j = 0; j < q.cells(); ++j) sum += std::max(w - q.gap(j), 0.0);
  return sum;
}

namespace {

// Cell-to-cell weights of the box kernel 1/2 on [-1, 1] for cells of width dx
// at offset s: (1/(2 dx)) int_{-dx}^{dx} (dx - |u|) 1{|s dx + u| <= 1} du.
double box_kernel_weight(long s, double dx) {
  const double shift = static_cast<double>(s) * dx;
  const double lo = std::max(-dx, -1.0 - shift);
  const double hi = std::min(dx, 1.0 - shift);
  if (hi <= lo) return 0.0;
  const auto tri = [dx](double t) {
    return t <= 0.0 ? 0.5 * (dx + t) * (dx + t) : dx * dx - 0.5 * (dx - t) * (dx - t);
  };
  return (tri(hi) - tri(lo)) / (2.0 * dx);
}

}  // namespace

GridDensity regularize_to_feasible(const GridDensity& mu, double a) {
  if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("regularize_to_feasible: a must lie in (0, 1)");
  const GridSpec& g = mu.grid();
  if (g.geometry != Geometry::Linear) throw std::invalid_argument("regularize_to_feasible: linear geometry only");
  const double dx = g.dx();
  const long n = static_cast<long>(g.n_cells);
  const long reach = static_cast<long>(std::ceil(1.0 / dx)) + 1;
  std::vector<double> kernel(2 * reach + 1);
  for (long s = -reach; s <= reach; ++s) kernel[s + reach] = box_kernel_weight(s, dx);

  std::vector<double> out(g.n_cells, 0.0);
  for (long k = 0; k < n; ++k) {
    const double v = mu[k];
    out[k] += std::min(v, 1.0 - a);
    const double excess = v - (1.0 - a);
    if (excess <= 0.0) continue;
    if (k - reach < 0 || k + reach >= n)
      throw std::invalid_argument("regularize_to_feasible: grid too small for the smoothing kernel");
    for (long s = -reach; s <= reach; ++s) out[k + s] += excess * kernel[s + reach];
  }
  return GridDensity(g, std::move(out));
}

}  // namespace crowdflow
