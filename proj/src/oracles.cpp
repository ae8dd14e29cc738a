#include "crowdflow/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "detail.hpp"

namespace crowdflow {

namespace {

void require_barenblatt(double t, double tau, double C, double m, int dim) {
  if (!(m > 1.0) || !std::isfinite(m)) throw std::invalid_argument("barenblatt: m must be finite and > 1");
  if (!(t + tau > 0.0)) throw std::invalid_argument("barenblatt: need t + tau > 0");
  if (!(C > 0.0)) throw std::invalid_argument("barenblatt: C must be positive");
  if (dim < 1) throw std::invalid_argument("barenblatt: dim must be >= 1");
}

double barenblatt_exponent(double m, int dim) { return 1.0 / ((m - 1.0) * dim + 2.0); }

// Composite 5-point Gauss on [a, b] with k panels.
template <class F>
double composite_gauss(const F& f, double a, double b, int k) {
  double s = 0.0;
  const double h = (b - a) / k;
  for (int i = 0; i < k; ++i) s += detail::gauss_integrate(f, a + i * h, a + (i + 1) * h);
  return s;
}

double measure_of(const GridSpec& g, double a, double b) {
  if (g.geometry == Geometry::Linear) return b - a;
  return unit_ball_volume(g.dim) * (std::pow(b, g.dim) - std::pow(a, g.dim));
}

std::vector<double> profile_values(double m, const Potential& phi, double level, const GridSpec& grid,
                                   StationaryForm form) {
  const auto set = sublevel_set(phi, level, grid.x_lo, grid.x_hi);
  const bool radial = grid.geometry == Geometry::Radial;
  const double surface = radial ? grid.dim * unit_ball_volume(grid.dim) : 1.0;
  const bool hard = is_hard_congestion(m);
  const double c = hard ? 0.0 : form == StationaryForm::SteadyState ? (m - 1.0) / m : 1.0;
  const double e = hard ? 0.0 : 1.0 / (m - 1.0);
  std::vector<double> v(grid.n_cells, 0.0);
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    const double a = grid.edge(i);
    const double b = grid.edge(i + 1);
    double integral = 0.0;
    for (const auto& iv : set) {
      const double lo = std::max(a, iv.lo);
      const double hi = std::min(b, iv.hi);
      if (!(hi > lo)) continue;
      if (hard) {
        integral += measure_of(grid, lo, hi);
        continue;
      }
      const bool edge_piece = (iv.lo > a && iv.lo < b) || (iv.hi > a && iv.hi < b);
      integral += composite_gauss(
          [&](double x) {
            const double jac = radial ? surface * std::pow(x, grid.dim - 1) : 1.0;
            return std::pow(c * std::max(level - phi.value(x), 0.0), e) * jac;
          },
          lo, hi, edge_piece ? 16 : 2);
    }
    v[i] = integral / grid.cell_measure(i);
  }
  return v;
}

double mass_of(const GridSpec& g, const std::vector<double>& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * g.cell_measure(i);
  return s;
}

}  // namespace

BarenblattValue barenblatt(double x, double t, double tau, double C, double m, int dim, double x0) {
  require_barenblatt(t, tau, C, m, dim);
  const double lam = barenblatt_exponent(m, dim);
  const double K = 0.5 * lam;
  const double s = t + tau;
  const double r = x - x0;
  const double p = std::max(C * std::pow(s, 2.0 * lam) - K * r * r, 0.0) / s;
  return {p, std::pow((m - 1.0) / m * p, 1.0 / (m - 1.0))};
}

double barenblatt_half_width(double t, double tau, double C, double m, int dim) {
  require_barenblatt(t, tau, C, m, dim);
  const double lam = barenblatt_exponent(m, dim);
  return std::sqrt(C / (0.5 * lam)) * std::pow(t + tau, lam);
}

GridDensity barenblatt_grid(const GridSpec& grid, double t, double tau, double C, double m, double x0) {
  grid.validate();
  const double R = barenblatt_half_width(t, tau, C, m, grid.dim);
  const double lo = grid.geometry == Geometry::Radial ? 0.0 : x0 - R;
  const double hi = grid.geometry == Geometry::Radial ? R : x0 + R;
  if (grid.geometry == Geometry::Radial && x0 != 0.0) throw std::invalid_argument("barenblatt_grid: radial profiles are centered");
  const bool radial = grid.geometry == Geometry::Radial;
  const double surface = radial ? grid.dim * unit_ball_volume(grid.dim) : 1.0;
  std::vector<double> v(grid.n_cells, 0.0);
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    const double a = std::max(grid.edge(i), lo);
    const double b = std::min(grid.edge(i + 1), hi);
    if (!(b > a)) continue;
    const bool edge_piece = a > grid.edge(i) || b < grid.edge(i + 1);
    v[i] = composite_gauss(
               [&](double x) {
                 const double jac = radial ? surface * std::pow(x, grid.dim - 1) : 1.0;
                 return barenblatt(x, t, tau, C, m, grid.dim, x0).density * jac;
               },
               a, b, edge_piece ? 16 : 2) /
           grid.cell_measure(i);
  }
  return GridDensity(grid, std::move(v));
}

std::vector<Interval> sublevel_set(const Potential& phi, double level, double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("sublevel_set: need lo < hi");
  constexpr int kSamples = 4096;
  const auto f = [&](double x) { return phi.value(x) - level; };
  const auto root = [&](double a, double b) {
    double fa = f(a);
    for (int it = 0; it < 200 && b - a > 1e-16 * std::max(1.0, std::abs(a)); ++it) {
      const double mid = 0.5 * (a + b);
      const double fm = f(mid);
      if ((fm <= 0.0) == (fa <= 0.0)) {
        a = mid;
        fa = fm;
      } else {
        b = mid;
      }
    }
    return 0.5 * (a + b);
  };
  std::vector<Interval> out;
  double x_prev = lo;
  bool inside = f(lo) <= 0.0;
  double start = lo;
  for (int k = 1; k <= kSamples; ++k) {
    const double x = k == kSamples ? hi : lo + (hi - lo) * k / kSamples;
    const bool in = f(x) <= 0.0;
    if (in != inside) {
      const double r = root(x_prev, x);
      if (inside)
        out.push_back({start, r});
      else
        start = r;
      inside = in;
    }
    x_prev = x;
  }
  if (inside) out.push_back({start, hi});
  out.erase(std::remove_if(out.begin(), out.end(), [](const Interval& iv) { return !(iv.hi > iv.lo); }), out.end());
  return out;
}

StationaryProfile stationary_profile(double m, const Potential& phi, double mass, const GridSpec& grid,
                                     StationaryForm form) {
  grid.validate();
  if (!(m > 1.0)) throw std::invalid_argument("stationary_profile: m must be > 1");
  if (!(mass > 0.0) || !std::isfinite(mass)) throw std::invalid_argument("stationary_profile: mass must be positive");
  const double c_lo = 0.0;
  double c_hi = std::max(phi.value(grid.x_lo), phi.value(grid.x_hi));
  if (grid.geometry == Geometry::Radial) c_hi = phi.value(grid.x_hi);
  if (!(c_hi > 0.0)) throw std::invalid_argument("stationary_profile: potential is not confining on the box");
  // Mass at the upper bracket must not be truncated by the box: use the
  // smaller wall value so the support stays inside.
  const double c_cap = grid.geometry == Geometry::Radial ? c_hi : std::min(phi.value(grid.x_lo), phi.value(grid.x_hi));
  if (mass_of(grid, profile_values(m, phi, c_cap, grid, form)) < mass)
    throw std::invalid_argument("stationary_profile: mass not attainable on the grid box");
  double a = c_lo;
  double b = c_cap;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (a + b);
    if (mid == a || mid == b) break;
    const double got = mass_of(grid, profile_values(m, phi, mid, grid, form));
    if (got < mass)
      a = mid;
    else
      b = mid;
    if (!is_hard_congestion(m) && std::abs(got - mass) <= 1e-13 * mass) {
      a = b = mid;
      break;
    }
  }
  const double level = is_hard_congestion(m) ? b : 0.5 * (a + b);
  auto v = profile_values(m, phi, level, grid, form);
  if (!is_hard_congestion(m)) {
    const double s = mass / mass_of(grid, v);
    for (double& x : v) x *= s;
  }
  return {GridDensity(grid, std::move(v)), level};
}

std::pair<double, double> quadratic_interval_flow(double a0, double b0, double q, double t, double center) {
  const double half = 0.5 * (b0 - a0);
  const double c = center + (0.5 * (a0 + b0) - center) * std::exp(-q * t);
  return {c - half, c + half};
}

}  // namespace crowdflow
