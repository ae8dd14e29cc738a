#include "crowdflow/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "detail.hpp"

namespace crowdflow {

double unit_ball_volume(int dim) {
  if (dim < 1) throw std::invalid_argument("unit_ball_volume: dim must be >= 1");
  const double d = dim;
  return std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

// ---------------------------------------------------------------------------
// GridSpec

double GridSpec::edge(std::size_t i) const {
  if (i == n_cells) return x_hi;
  return x_lo + static_cast<double>(i) * dx();
}

double GridSpec::cell_measure(std::size_t i) const {
  if (geometry == Geometry::Linear) return dx();
  const double a = edge(i);
  const double b = edge(i + 1);
  return unit_ball_volume(dim) * (std::pow(b, dim) - std::pow(a, dim));
}

double GridSpec::overlap_measure(std::size_t i, double lo, double hi) const {
  const double a = std::max(lo, edge(i));
  const double b = std::min(hi, edge(i + 1));
  if (b <= a) return 0.0;
  if (geometry == Geometry::Linear) return b - a;
  return unit_ball_volume(dim) * (std::pow(b, dim) - std::pow(a, dim));
}

void GridSpec::validate() const {
  if (!(x_hi > x_lo) || !std::isfinite(x_lo) || !std::isfinite(x_hi))
    throw std::invalid_argument("GridSpec: need finite x_lo < x_hi");
  if (n_cells < 1) throw std::invalid_argument("GridSpec: n_cells must be >= 1");
  if (dim < 1) throw std::invalid_argument("GridSpec: dim must be >= 1");
  if (geometry == Geometry::Linear && dim != 1)
    throw std::invalid_argument("GridSpec: linear geometry requires dim == 1");
  if (geometry == Geometry::Radial && x_lo != 0.0)
    throw std::invalid_argument("GridSpec: radial grids start at r = 0");
}

// ---------------------------------------------------------------------------
// Potential

namespace {

double horner(const std::vector<double>& c, double x) {
  double acc = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * x + *it;
  return acc;
}

std::vector<double> derivative(const std::vector<double>& c) {
  if (c.size() <= 1) return {0.0};
  std::vector<double> d(c.size() - 1);
  for (std::size_t k = 1; k < c.size(); ++k) d[k - 1] = static_cast<double>(k) * c[k];
  return d;
}

// Coefficients of (x - c)^k scaled by s, accumulated into out.
void add_shifted_power(std::vector<double>& out, int k, double c, double s) {
  if (out.size() < static_cast<std::size_t>(k + 1)) out.resize(k + 1, 0.0);
  double binom = 1.0;
  for (int j = 0; j <= k; ++j) {
    // term binom(k, j) x^j (-c)^(k-j)
    out[j] += s * binom * std::pow(-c, k - j);
    binom = binom * (k - j) / (j + 1);
  }
}

void trim(std::vector<double>& c) {
  while (c.size() > 1 && c.back() == 0.0) c.pop_back();
}

void require_count(std::span<const double> p, std::size_t lo, std::size_t hi, const char* kind) {
  if (p.size() < lo || p.size() > hi)
    throw std::invalid_argument(std::string("potential_catalog: wrong parameter count for ") + kind);
}

double param_or(std::span<const double> p, std::size_t i, double fallback) {
  return i < p.size() ? p[i] : fallback;
}

}  // namespace

PotentialKind parse_potential_kind(std::string_view name) {
  if (name == "quadratic") return PotentialKind::Quadratic;
  if (name == "shifted-quadratic") return PotentialKind::ShiftedQuadratic;
  if (name == "quartic-well") return PotentialKind::QuarticWell;
  if (name == "linear") return PotentialKind::Linear;
  if (name == "custom-polynomial") return PotentialKind::CustomPolynomial;
  throw std::invalid_argument("unknown potential kind: " + std::string(name));
}

std::string_view to_string(PotentialKind kind) {
  switch (kind) {
    case PotentialKind::Quadratic: return "quadratic";
    case PotentialKind::ShiftedQuadratic: return "shifted-quadratic";
    case PotentialKind::QuarticWell: return "quartic-well";
    case PotentialKind::Linear: return "linear";
    case PotentialKind::CustomPolynomial: return "custom-polynomial";
  }
  return "custom-polynomial";
}

double Potential::value(double x) const { return horner(coeffs_, x); }

double Potential::gradient(double x) const {
  double acc = 0.0;
  for (std::size_t k = coeffs_.size(); k-- > 1;) acc = acc * x + static_cast<double>(k) * coeffs_[k];
  return acc;
}

double Potential::second_derivative(double x) const {
  double acc = 0.0;
  for (std::size_t k = coeffs_.size(); k-- > 2;)
    acc = acc * x + static_cast<double>(k * (k - 1)) * coeffs_[k];
  return acc;
}

double Potential::laplacian(double r, int dim) const {
  if (dim == 1) return second_derivative(r);
  if (r == 0.0) return static_cast<double>(dim) * second_derivative(0.0);
  return second_derivative(r) + static_cast<double>(dim - 1) * gradient(r) / r;
}

std::vector<double> Potential::shifted_coefficients(double s) const {
  // Repeated synthetic division (Taylor shift).
  std::vector<double> c = coeffs_;
  const std::size_t n = c.size();
  for (std::size_t i = 0; i + 1 < n; ++i)
    for (std::size_t k = n - 1; k > i; --k) c[k - 1] += s * c[k];
  return c;
}

bool Potential::is_even() const {
  for (std::size_t k = 1; k < coeffs_.size(); k += 2)
    if (coeffs_[k] != 0.0) return false;
  return true;
}

Potential Potential::zero(const GridSpec& box) {
  const double c0 = 0.0;
  return potential_catalog(PotentialKind::CustomPolynomial, std::span<const double>(&c0, 1), box);
}

Potential potential_catalog(PotentialKind kind, std::span<const double> params, const GridSpec& box) {
  box.validate();
  Potential phi;
  phi.kind_ = kind;
  phi.params_.assign(params.begin(), params.end());
  std::vector<double> c{0.0};

  switch (kind) {
    case PotentialKind::Quadratic: {
      require_count(params, 1, 2, "quadratic");
      phi.center_ = param_or(params, 1, 0.0);
      add_shifted_power(c, 2, phi.center_, 0.5 * params[0]);
      break;
    }
    case PotentialKind::ShiftedQuadratic: {
      require_count(params, 2, 3, "shifted-quadratic");
      phi.center_ = params[1];
      add_shifted_power(c, 2, phi.center_, 0.5 * params[0]);
      c[0] += param_or(params, 2, 0.0);
      break;
    }
    case PotentialKind::QuarticWell: {
      require_count(params, 2, 3, "quartic-well");
      if (!(params[0] > 0.0)) throw std::invalid_argument("potential_catalog: quartic-well needs a > 0");
      phi.center_ = param_or(params, 2, 0.0);
      add_shifted_power(c, 4, phi.center_, params[0]);
      add_shifted_power(c, 2, phi.center_, -params[1]);
      break;
    }
    case PotentialKind::Linear: {
      require_count(params, 1, 1, "linear");
      c = {0.0, params[0]};
      break;
    }
    case PotentialKind::CustomPolynomial: {
      if (params.empty()) throw std::invalid_argument("potential_catalog: custom-polynomial needs coefficients");
      c.assign(params.begin(), params.end());
      break;
    }
  }
  for (double v : c)
    if (!std::isfinite(v)) throw std::invalid_argument("potential_catalog: non-finite parameter");
  trim(c);
  phi.coeffs_ = c;

  // Bounded below on R iff constant or even degree with positive leading term.
  const int deg = phi.degree();
  const bool bounded_below = deg == 0 || (deg % 2 == 0 && c.back() > 0.0);
  phi.flags_.a2 = bounded_below;
  if (bounded_below) {
    double best = c[0];
    if (deg > 0) {
      // Global minimum: scan inside the Cauchy bound of the critical points and polish.
      const std::vector<double> d1 = derivative(c);
      double bound = 1.0;
      for (std::size_t k = 0; k + 1 < d1.size(); ++k) bound = std::max(bound, 1.0 + std::abs(d1[k] / d1.back()));
      constexpr int kScan = 20000;
      double xbest = -bound;
      best = std::numeric_limits<double>::infinity();
      for (int i = 0; i <= kScan; ++i) {
        const double x = -bound + 2.0 * bound * i / kScan;
        const double v = horner(c, x);
        if (v < best) { best = v; xbest = x; }
      }
      const std::vector<double> d2 = derivative(d1);
      double x = xbest;
      for (int it = 0; it < 60; ++it) {
        const double curv = horner(d2, x);
        if (!(curv > 0.0)) break;
        const double step = horner(d1, x) / curv;
        x -= step;
        if (std::abs(step) <= 1e-15 * (1.0 + std::abs(x))) break;
      }
      best = std::min(best, horner(c, x));
    }
    phi.shift_ = -best;
    phi.coeffs_[0] -= best;
  }

  // Curvature scan on the working domain.
  constexpr int kSamples = 10000;
  double lam = std::numeric_limits<double>::infinity();
  double lap_min = std::numeric_limits<double>::infinity();
  double lap_max = 0.0;
  for (int i = 0; i <= kSamples; ++i) {
    const double x = box.x_lo + (box.x_hi - box.x_lo) * i / kSamples;
    const double d2 = phi.second_derivative(x);
    double lap = d2;
    double local = d2;
    if (box.geometry == Geometry::Radial && box.dim > 1) {
      lap = phi.laplacian(x, box.dim);
      const double radial = x > 0.0 ? phi.gradient(x) / x : d2;
      local = std::min(d2, radial);
    }
    lam = std::min(lam, local);
    lap_min = std::min(lap_min, lap);
    lap_max = std::max(lap_max, std::abs(lap));
  }
  phi.lambda_ = lam;
  phi.laplacian_bound_ = lap_max;
  phi.flags_.a1 = lap_min > 0.0;
  phi.flags_.a3p = std::isfinite(lap_max);
  return phi;
}

// ---------------------------------------------------------------------------
// GridDensity

GridDensity::GridDensity(GridSpec grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
  grid_.validate();
  if (values_.size() != grid_.n_cells) throw std::invalid_argument("GridDensity: value count != n_cells");
  for (double v : values_)
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("GridDensity: values must be finite and >= 0");
}

double GridDensity::mass() const {
  double m = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) m += values_[i] * grid_.cell_measure(i);
  return m;
}

double GridDensity::max_value() const {
  return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end());
}

std::optional<std::pair<double, double>> GridDensity::support_extent(double eps) const {
  std::optional<std::size_t> first;
  std::size_t last = 0;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (values_[i] > eps) {
      if (!first) first = i;
      last = i;
    }
  }
  if (!first) return std::nullopt;
  return std::pair{grid_.edge(*first), grid_.edge(last + 1)};
}

GridDensity make_grid_density(const ShapeSpec& shape, const GridSpec& grid) {
  grid.validate();
  if (shape.target_mass && !(*shape.target_mass > 0.0))
    throw std::invalid_argument("make_grid_density: requested mass must be positive");
  std::vector<double> values(grid.n_cells, 0.0);
  const double tol = 1e-12 * (grid.x_hi - grid.x_lo);
  for (const auto& ind : shape.indicators) {
    if (!(ind.hi > ind.lo) || ind.height < 0.0)
      throw std::invalid_argument("make_grid_density: indicator needs lo < hi and height >= 0");
    if (ind.lo < grid.x_lo - tol || ind.hi > grid.x_hi + tol)
      throw std::invalid_argument("make_grid_density: grid does not cover the shape support");
    for (std::size_t i = 0; i < grid.n_cells; ++i) {
      const double ov = grid.overlap_measure(i, ind.lo, ind.hi);
      if (ov > 0.0) values[i] += ind.height * ov / grid.cell_measure(i);
    }
  }
  if (shape.profile) {
    if (!(shape.profile_hi > shape.profile_lo))
      throw std::invalid_argument("make_grid_density: profile needs lo < hi");
    if (shape.profile_lo < grid.x_lo - tol || shape.profile_hi > grid.x_hi + tol)
      throw std::invalid_argument("make_grid_density: grid does not cover the shape support");
    const bool radial = grid.geometry == Geometry::Radial;
    const double surface = radial ? grid.dim * unit_ball_volume(grid.dim) : 1.0;
    for (std::size_t i = 0; i < grid.n_cells; ++i) {
      const double a = std::max(grid.edge(i), shape.profile_lo);
      const double b = std::min(grid.edge(i + 1), shape.profile_hi);
      if (b <= a) continue;
      const double integral = detail::gauss_integrate(
          [&](double x) {
            const double jac = radial ? surface * std::pow(x, grid.dim - 1) : 1.0;
            return std::max(0.0, shape.profile(x)) * jac;
          },
          a, b);
      values[i] += integral / grid.cell_measure(i);
    }
  }
  GridDensity rho(grid, values);
  const double mass = rho.mass();
  if (!(mass > 0.0)) throw std::invalid_argument("make_grid_density: empty support");
  if (shape.target_mass) {
    const double s = *shape.target_mass / mass;
    for (double& v : values) v *= s;
    return GridDensity(grid, std::move(values));
  }
  return rho;
}

// ---------------------------------------------------------------------------
// QuantileRep

QuantileRep::QuantileRep(double mass, std::vector<double> nodes) : mass_(mass), nodes_(std::move(nodes)) {
  if (!(mass_ > 0.0) || !std::isfinite(mass_)) throw std::invalid_argument("QuantileRep: mass must be positive");
  if (nodes_.size() < 2) throw std::invalid_argument("QuantileRep: need at least one cell");
  for (std::size_t j = 0; j + 1 < nodes_.size(); ++j) {
    if (!std::isfinite(nodes_[j]) || !std::isfinite(nodes_[j + 1]))
      throw std::invalid_argument("QuantileRep: non-finite node");
    if (!(nodes_[j + 1] > nodes_[j])) throw std::invalid_argument("QuantileRep: nodes must be strictly increasing");
  }
}

double QuantileRep::max_density() const {
  double g = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cells(); ++j) g = std::min(g, gap(j));
  return cell_mass() / g;
}

double QuantileRep::weight(std::size_t j) const {
  const double w = cell_mass();
  return (j == 0 || j == cells()) ? 0.5 * w : w;
}

std::vector<double> trapezoid_weights(std::size_t n_cells, double cell_mass) {
  std::vector<double> omega(n_cells + 1, cell_mass);
  omega.front() = 0.5 * cell_mass;
  omega.back() = 0.5 * cell_mass;
  return omega;
}

QuantileRep to_quantile(const GridDensity& rho, std::size_t n) {
  const GridSpec& g = rho.grid();
  if (g.geometry != Geometry::Linear) throw std::invalid_argument("to_quantile: linear geometry only");
  if (n < 2) throw std::invalid_argument("to_quantile: n must be >= 2");
  const auto v = rho.values();
  const double dx = g.dx();
  std::vector<double> cum(v.size() + 1, 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) cum[i + 1] = cum[i] + v[i] * dx;
  const double mass = cum.back();
  if (!(mass > 0.0)) throw std::invalid_argument("to_quantile: zero-mass density");

  std::size_t first = 0;
  while (v[first] <= 0.0) ++first;
  std::size_t last = v.size() - 1;
  while (v[last] <= 0.0) --last;

  std::vector<double> nodes(n + 1);
  nodes[0] = g.edge(first);
  nodes[n] = g.edge(last + 1);
  std::size_t i = first;
  for (std::size_t j = 1; j < n; ++j) {
    const double level = mass * static_cast<double>(j) / static_cast<double>(n);
    while (i < last && (cum[i + 1] < level || v[i] <= 0.0)) ++i;
    const double frac = std::clamp((level - cum[i]) / (v[i] * dx), 0.0, 1.0);
    nodes[j] = g.edge(i) + frac * dx;
  }
  // Levels are strictly increasing and every crossing cell has positive
  // density, so nodes are strictly increasing up to roundoff.
  for (std::size_t j = 1; j <= n; ++j)
    if (!(nodes[j] > nodes[j - 1]))
      throw NumericalError("to_quantile: resolution too fine for the grid density (coincident nodes)");
  return QuantileRep(mass, std::move(nodes));
}

GridDensity to_grid(const QuantileRep& q, const GridSpec& grid) {
  grid.validate();
  if (grid.geometry != Geometry::Linear) throw std::invalid_argument("to_grid: linear geometry only");
  const double slack = 1e-12 * (grid.x_hi - grid.x_lo);
  if (q.lo() < grid.x_lo - slack || q.hi() > grid.x_hi + slack)
    throw std::invalid_argument("to_grid: grid does not cover the support");
  const double dx = grid.dx();
  std::vector<double> values(grid.n_cells, 0.0);
  const auto cell_of = [&](double x) {
    const auto i = static_cast<long>(std::floor((x - grid.x_lo) / dx));
    return static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(grid.n_cells) - 1));
  };
  const double w = q.cell_mass();
  for (std::size_t j = 0; j < q.cells(); ++j) {
    const double a = q.node(j);
    const double b = q.node(j + 1);
    const double dens = w / (b - a);
    const std::size_t ia = cell_of(a);
    const std::size_t ib = cell_of(b);
    if (ia == ib) {
      values[ia] += w / dx;
      continue;
    }
    // Distribute the gap mass exactly: inner pieces by length, remainder to the
    // last cell so that the gap contributes exactly w.
    double assigned = 0.0;
    for (std::size_t i = ia; i < ib; ++i) {
      const double len = std::min(b, grid.edge(i + 1)) - std::max(a, grid.edge(i));
      const double piece = dens * std::max(len, 0.0);
      values[i] += piece / dx;
      assigned += piece;
    }
    values[ib] += std::max(w - assigned, 0.0) / dx;
  }
  return GridDensity(grid, std::move(values));
}

// ---------------------------------------------------------------------------
// Patch

Patch::Patch(Geometry geometry, int dim, std::vector<Interval> intervals)
    : geometry_(geometry), dim_(dim), intervals_(std::move(intervals)) {
  if (dim_ < 1 || (geometry_ == Geometry::Linear && dim_ != 1)) throw std::invalid_argument("Patch: bad dimension");
  for (std::size_t i = 0; i < intervals_.size(); ++i) {
    if (!(intervals_[i].hi > intervals_[i].lo)) throw std::invalid_argument("Patch: intervals need positive length");
    if (i > 0 && !(intervals_[i].lo > intervals_[i - 1].hi))
      throw std::invalid_argument("Patch: intervals must be sorted and disjoint");
  }
  if (geometry_ == Geometry::Radial && !intervals_.empty() && intervals_.front().lo < 0.0)
    throw std::invalid_argument("Patch: radial annuli need radii >= 0");
}

double Patch::volume() const {
  double v = 0.0;
  for (const auto& iv : intervals_) {
    if (geometry_ == Geometry::Linear)
      v += iv.length();
    else
      v += unit_ball_volume(dim_) * (std::pow(iv.hi, dim_) - std::pow(iv.lo, dim_));
  }
  return v;
}

bool Patch::contains(double x) const {
  return std::any_of(intervals_.begin(), intervals_.end(),
                     [x](const Interval& iv) { return iv.lo <= x && x <= iv.hi; });
}

double Patch::distance(double x) const {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& iv : intervals_) {
    if (x < iv.lo)
      d = std::min(d, iv.lo - x);
    else if (x > iv.hi)
      d = std::min(d, x - iv.hi);
    else
      return 0.0;
  }
  return d;
}

// ---------------------------------------------------------------------------
// RunLedger

void RunLedger::append(const LedgerRow& row) {
  if (!rows_.empty() && !(row.t > rows_.back().t))
    throw std::invalid_argument("RunLedger: time must be strictly increasing");
  rows_.push_back(row);
}

double RunLedger::max_mass_drift() const {
  if (rows_.empty()) return 0.0;
  const double m0 = rows_.front().mass;
  double drift = 0.0;
  for (const auto& r : rows_) drift = std::max(drift, std::abs(r.mass - m0) / std::abs(m0));
  return drift;
}

// ---------------------------------------------------------------------------
// CSV

void write_csv(std::ostream& os, const GridDensity& rho) {
  os << "x_center,value\n";
  for (std::size_t i = 0; i < rho.size(); ++i)
    os << detail::num(rho.grid().center(i)) << ',' << detail::num(rho[i]) << '\n';
}

void write_csv(std::ostream& os, const QuantileRep& q) {
  os << "mass_level,node\n";
  const double w = q.cell_mass();
  for (std::size_t j = 0; j <= q.cells(); ++j)
    os << detail::num(w * static_cast<double>(j)) << ',' << detail::num(q.node(j)) << '\n';
}

void write_csv(std::ostream& os, const RunLedger& ledger) {
  os << "step,t,E,S,P,w2_inc,mass,supp_lo,supp_hi,excess\n";
  for (const auto& r : ledger.rows()) {
    os << r.step << ',' << detail::num(r.t) << ',' << detail::num(r.energy) << ',' << detail::num(r.internal) << ','
       << detail::num(r.potential) << ',' << detail::num(r.w2_increment) << ',' << detail::num(r.mass) << ','
       << detail::num(r.support_lo) << ',' << detail::num(r.support_hi) << ',' << detail::num(r.excess) << '\n';
  }
}

}  // namespace crowdflow
