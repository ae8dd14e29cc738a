#include "crowdflow/pme.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "crowdflow/energy.hpp"
#include "crowdflow/transport.hpp"
#include "detail.hpp"

namespace crowdflow {

namespace {

constexpr double kDensityFloor = 1e-8;
constexpr double kClipFloor = -1e-14;

// Geometry and drift factors that do not change between steps.
class FluxOperator {
 public:
  FluxOperator(const GridSpec& grid, double m, const Potential& phi) : grid_(grid), m_(m) {
    const std::size_t n = grid.n_cells;
    drift_.resize(n + 1);
    area_.resize(n + 1, 1.0);
    inv_measure_.resize(n);
    max_drift_ = 0.0;
    const bool radial = grid.geometry == Geometry::Radial;
    const double surface = radial ? grid.dim * unit_ball_volume(grid.dim) : 1.0;
    for (std::size_t e = 0; e <= n; ++e) {
      const double x = grid.edge(e);
      drift_[e] = phi.gradient(x);
      max_drift_ = std::max(max_drift_, std::abs(drift_[e]));
      if (radial) area_[e] = surface * std::pow(x, grid.dim - 1);
    }
    for (std::size_t i = 0; i < n; ++i) inv_measure_[i] = 1.0 / grid.cell_measure(i);
    power_.resize(n);
  }

  double max_drift() const { return max_drift_; }

  double stable_dt(std::span<const double> rho, double cfl) const {
    if (rho.empty()) throw std::invalid_argument("stable_dt: empty density");
    const double top = std::max(*std::max_element(rho.begin(), rho.end()), kDensityFloor);
    const double dx = grid_.dx();
    double diffusive = dx * dx / (2.0 * m_ * detail::power(top, m_ - 1.0));
    if (grid_.geometry == Geometry::Radial) diffusive /= grid_.dim;
    const double advective = dx / (max_drift_ + 1e-12);
    return cfl * std::min(diffusive, advective);
  }

  // Forward Euler update into out; returns mass of clipped negative values.
  double apply(std::span<const double> rho, double dt, std::vector<double>& out) {
    const std::size_t n = rho.size();
    const double dx = grid_.dx();
    for (std::size_t i = 0; i < n; ++i) power_[i] = detail::power(rho[i], m_);
    out.assign(rho.begin(), rho.end());
    // Interior edges only; walls carry no flux.
    for (std::size_t e = 1; e < n; ++e) {
      const double v = drift_[e];
      const double upwind = v > 0.0 ? rho[e] : rho[e - 1];
      const double flux = area_[e] * ((power_[e] - power_[e - 1]) / dx + v * upwind);
      if (grid_.geometry == Geometry::Linear) {
        out[e - 1] += dt * flux / dx;
        out[e] -= dt * flux / dx;
      } else {
        out[e - 1] += dt * flux * inv_measure_[e - 1];
        out[e] -= dt * flux * inv_measure_[e];
      }
    }
    double clipped = 0.0;
    double before = 0.0;
    for (std::size_t i = 0; i < n; ++i) before += rho[i] / inv_measure_[i];
    for (std::size_t i = 0; i < n; ++i) {
      if (out[i] < 0.0) {
        if (out[i] < kClipFloor)
          throw NumericalError("pme_step: negative density " + detail::num(out[i]) + " (stability failure)");
        clipped += -out[i] / inv_measure_[i];
        out[i] = 0.0;
      }
    }
    if (clipped > 0.0) {
      double after = 0.0;
      for (std::size_t i = 0; i < n; ++i) after += out[i] / inv_measure_[i];
      const double s = before / after;
      for (double& v : out) v *= s;
    }
    return clipped;
  }

 private:
  GridSpec grid_;
  double m_;
  std::vector<double> drift_;
  std::vector<double> area_;
  std::vector<double> inv_measure_;
  std::vector<double> power_;
  double max_drift_ = 0.0;
};

void require_exponent(double m) {
  if (!(m > 1.0) || !std::isfinite(m)) throw std::invalid_argument("pme: exponent m must be finite and > 1");
}

LedgerRow ledger_row(std::size_t step, double t, const GridDensity& rho, double m, const Potential& phi,
                     double w2_inc, double eps) {
  const EnergyReport e = free_energy(rho, m, phi);
  const auto ext = rho.support_extent(eps);
  return LedgerRow{step, t, e.total, e.internal, e.potential, w2_inc, rho.mass(),
                   ext ? ext->first : 0.0, ext ? ext->second : 0.0, excess_mass(rho)};
}

void check_walls(const GridDensity& rho, std::size_t margin, double eps) {
  const auto v = rho.values();
  const std::size_t n = v.size();
  const std::size_t k = std::min(margin, n);
  for (std::size_t i = 0; i < k; ++i) {
    const bool left = rho.grid().geometry == Geometry::Linear && v[i] > eps;
    if (left || v[n - 1 - i] > eps) throw NumericalError("pme_run: support reached the box wall; enlarge the grid");
  }
}

}  // namespace

double stable_dt(const GridDensity& rho, double m, const Potential& phi, double cfl) {
  require_exponent(m);
  if (!(cfl > 0.0 && cfl <= 1.0)) throw std::invalid_argument("stable_dt: cfl factor must lie in (0, 1]");
  return FluxOperator(rho.grid(), m, phi).stable_dt(rho.values(), cfl);
}

GridDensity pme_step(const GridDensity& rho, double m, const Potential& phi, double dt, double* clipped) {
  require_exponent(m);
  FluxOperator op(rho.grid(), m, phi);
  if (!(dt > 0.0) || dt > op.stable_dt(rho.values(), 1.0))
    throw std::invalid_argument("pme_step: dt exceeds the explicit stability bound");
  std::vector<double> out;
  const double c = op.apply(rho.values(), dt, out);
  if (clipped) *clipped += c;
  return GridDensity(rho.grid(), std::move(out));
}

PmeRun pme_run(const GridDensity& rho0, double m, const Potential& phi, double T, const PmeOptions& opts) {
  require_exponent(m);
  if (!(T > 0.0)) throw std::invalid_argument("pme_run: T must be positive");
  if (!(opts.cfl > 0.0 && opts.cfl <= 1.0)) throw std::invalid_argument("pme_run: cfl factor must lie in (0, 1]");
  std::vector<double> times = opts.snapshot_times;
  if (times.empty())
    for (int k = 1; k <= 16; ++k) times.push_back(T * k / 16.0);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  for (double t : times)
    if (!(t > 0.0 && t <= T * (1.0 + 1e-12))) throw std::invalid_argument("pme_run: snapshot times must lie in (0, T]");

  const GridSpec& grid = rho0.grid();
  const bool linear = grid.geometry == Geometry::Linear;
  FluxOperator op(grid, m, phi);
  PmeRun run;
  run.snapshots.push_back({0.0, rho0});
  run.ledger.append(ledger_row(0, 0.0, rho0, m, phi, 0.0, opts.support_threshold));
  check_walls(rho0, opts.wall_margin_cells, opts.support_threshold);

  const double mass0 = rho0.mass();
  std::vector<double> cur(rho0.values().begin(), rho0.values().end());
  std::vector<double> next;
  double t = 0.0;
  std::size_t wall_check = 0;
  for (double target : times) {
    while (t < target) {
      double dt = op.stable_dt(cur, opts.cfl);
      bool last = false;
      if (t + dt >= target * (1.0 - 1e-15)) {
        dt = target - t;
        last = true;
      }
      if (dt > 0.0) {
        run.clipped_mass += op.apply(cur, dt, next);
        cur.swap(next);
        ++run.steps;
      }
      t = last ? target : t + dt;
      if (run.clipped_mass > 1e-12 * mass0)
        throw NumericalError("pme_run: clipped mass " + detail::num(run.clipped_mass) + " exceeds 1e-12 of the total");
      if (++wall_check % 64 == 0) check_walls(GridDensity(grid, cur), opts.wall_margin_cells, opts.support_threshold);
    }
    GridDensity snap(grid, cur);
    check_walls(snap, opts.wall_margin_cells, opts.support_threshold);
    double w2_inc = 0.0;
    if (linear) {
      const std::size_t nq = std::max<std::size_t>(grid.n_cells, 2);
      w2_inc = w2_distance(to_quantile(run.snapshots.back().rho, nq), to_quantile(snap, nq), Resample::Yes);
    }
    run.ledger.append(ledger_row(run.snapshots.size(), target, snap, m, phi, w2_inc, opts.support_threshold));
    run.snapshots.push_back({target, std::move(snap)});
  }
  return run;
}

std::vector<double> pressure(const GridDensity& rho, double m) {
  require_exponent(m);
  std::vector<double> u(rho.size());
  for (std::size_t i = 0; i < rho.size(); ++i) u[i] = m / (m - 1.0) * detail::power(rho[i], m - 1.0);
  return u;
}

Patch support_set(const GridDensity& rho, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("support_set: eps must be positive");
  const GridSpec& g = rho.grid();
  std::vector<Interval> runs;
  std::size_t i = 0;
  const std::size_t n = rho.size();
  while (i < n) {
    if (rho[i] <= eps) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < n && rho[j + 1] > eps) ++j;
    const Interval iv{g.edge(i), g.edge(j + 1)};
    // Bridge a single empty cell between runs.
    if (!runs.empty() && std::abs(iv.lo - runs.back().hi - g.dx()) <= 1e-9 * g.dx())
      runs.back().hi = iv.hi;
    else
      runs.push_back(iv);
    i = j + 1;
  }
  return Patch(g.geometry, g.dim, std::move(runs));
}

}  // namespace crowdflow
