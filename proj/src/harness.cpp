#include "crowdflow/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "crowdflow/energy.hpp"
#include "crowdflow/heleshaw.hpp"
#include "crowdflow/oracles.hpp"
#include "crowdflow/pme.hpp"
#include "crowdflow/transport.hpp"
#include "detail.hpp"

namespace crowdflow {

namespace {

constexpr std::pair<ExperimentKind, std::string_view> kKindNames[] = {
    {ExperimentKind::SingleRun, "single-run"}, {ExperimentKind::ConvergeM, "converge-m"},
    {ExperimentKind::ConvergeH, "converge-h"}, {ExperimentKind::Compare, "compare"},
    {ExperimentKind::Longtime, "longtime"},    {ExperimentKind::Crossval, "crossval"}};

// Runs f(0..n-1) on up to `workers` threads. Results must be written by
// index; the first exception in index order is rethrown.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  const std::size_t k = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (k == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < k; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            f(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Criterion criterion(std::string id, std::string description, double value, double threshold, bool pass) {
  return Criterion{std::move(id), std::move(description), value, threshold, pass};
}

// Criterion passing when value <= threshold.
Criterion at_most(std::string id, std::string description, double value, double threshold) {
  return criterion(std::move(id), std::move(description), value, threshold, value <= threshold);
}

std::size_t snapshot_stride(double T, double h, std::size_t snapshots) {
  const auto steps = static_cast<std::size_t>(std::ceil(T / h - 1e-9));
  return std::max<std::size_t>(1, steps / std::max<std::size_t>(snapshots, 1));
}

std::string shape_csv_write(const auto& object) {
  std::ostringstream ss;
  write_csv(ss, object);
  return ss.str();
}

bool potential_is_zero(const Potential& phi) {
  return std::all_of(phi.coefficients().begin(), phi.coefficients().end(), [](double c) { return c == 0.0; });
}

// Quantile nodes of the unit-density indicator of a patch, at the cell mass of
// `like`.
QuantileRep patch_quantile(const Patch& patch, const QuantileRep& like) {
  const std::size_t n = like.cells();
  const double total = patch.volume();
  std::vector<double> nodes(n + 1);
  const auto& ivs = patch.intervals();
  for (std::size_t j = 0; j <= n; ++j) {
    double s = total * static_cast<double>(j) / static_cast<double>(n);
    double x = ivs.back().hi;
    for (const auto& iv : ivs) {
      if (s <= iv.length()) {
        x = iv.lo + s;
        break;
      }
      s -= iv.length();
    }
    nodes[j] = x;
  }
  nodes.front() = ivs.front().lo;
  nodes.back() = ivs.back().hi;
  return QuantileRep(like.mass(), std::move(nodes));
}

Patch heleshaw_patch_at(const Patch& patch0, const Potential& phi, double t, double dt) {
  if (t <= 0.0) return patch0;
  return heleshaw_run(patch0, phi, t, dt).patches.back();
}

InitialData read_initial(const Config& cfg, const std::string& prefix) {
  InitialData d;
  const std::string kind = cfg.text_or(prefix + ".kind", "indicator");
  if (kind == "indicator") {
    d.kind = InitialData::Kind::Indicator;
    if (cfg.has(prefix + ".intervals")) {
      const auto v = cfg.numbers(prefix + ".intervals");
      if (v.empty() || v.size() % 2 != 0) throw ConfigError(prefix + ".intervals needs pairs lo,hi");
      d.intervals.clear();
      for (std::size_t i = 0; i < v.size(); i += 2) d.intervals.push_back({v[i], v[i + 1]});
    } else {
      d.intervals = {{cfg.number_or(prefix + ".lo", 1.0), cfg.number_or(prefix + ".hi", 2.0)}};
    }
    for (std::size_t i = 0; i < d.intervals.size(); ++i) {
      if (!(d.intervals[i].hi > d.intervals[i].lo)) throw ConfigError(prefix + ": intervals need lo < hi");
      if (i > 0 && !(d.intervals[i].lo > d.intervals[i - 1].hi))
        throw ConfigError(prefix + ": intervals must be sorted and disjoint");
    }
    d.height = cfg.number_or(prefix + ".height", 1.0);
    if (!(d.height > 0.0) || !std::isfinite(d.height)) throw ConfigError(prefix + ".height must be positive");
  } else if (kind == "barenblatt") {
    d.kind = InitialData::Kind::Barenblatt;
    d.tau = cfg.number_or(prefix + ".tau", 1.0);
    d.C = cfg.number_or(prefix + ".C", 0.5);
    d.center = cfg.number_or(prefix + ".center", 0.0);
    if (!(d.tau > 0.0) || !(d.C > 0.0)) throw ConfigError(prefix + ": barenblatt needs tau > 0 and C > 0");
  } else {
    throw ConfigError(fmt::format("unknown {}.kind '{}'", prefix, kind));
  }
  return d;
}

std::vector<double> read_potential_params(const Config& cfg, PotentialKind kind) {
  switch (kind) {
    case PotentialKind::Quadratic:
      return {cfg.number_or("potential.q", 1.0), cfg.number_or("potential.c", 0.0)};
    case PotentialKind::ShiftedQuadratic:
      return {cfg.number_or("potential.q", 1.0), cfg.number_or("potential.c", 0.0), cfg.number_or("potential.s", 0.0)};
    case PotentialKind::QuarticWell:
      return {cfg.number_or("potential.a", 1.0), cfg.number_or("potential.b", 0.0), cfg.number_or("potential.c", 0.0)};
    case PotentialKind::Linear:
      return {cfg.number_or("potential.g", 0.0)};
    case PotentialKind::CustomPolynomial:
      return cfg.numbers("potential.coefficients");
  }
  return {};
}

}  // namespace

ExperimentKind parse_experiment_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw ConfigError(fmt::format("unknown experiment '{}'", name));
}

std::string_view to_string(ExperimentKind kind) {
  for (const auto& [k, n] : kKindNames)
    if (k == kind) return n;
  return "unknown";
}

ShapeSpec InitialData::shape(double m, int dim) const {
  ShapeSpec s;
  if (kind == Kind::Indicator) {
    for (const auto& iv : intervals) s.indicators.push_back({iv.lo, iv.hi, height});
    return s;
  }
  const double mm = is_hard_congestion(m) ? 2.0 : m;
  const double R = barenblatt_half_width(0.0, tau, C, mm, dim);
  const double tt = tau;
  const double cc = C;
  const double c0 = center;
  s.profile = [=](double x) { return barenblatt(x, 0.0, tt, cc, mm, dim, c0).density; };
  s.profile_lo = dim == 1 ? center - R : 0.0;
  s.profile_hi = center + R;
  return s;
}

Potential ExperimentConfig::potential() const { return potential_catalog(potential_kind, potential_params, grid); }

GridDensity ExperimentConfig::initial_density(double m) const {
  if (initial.kind == InitialData::Kind::Barenblatt) return barenblatt_grid(grid, 0.0, initial.tau, initial.C, m, initial.center);
  return make_grid_density(initial.shape(m, grid.dim), grid);
}

ExperimentConfig ExperimentConfig::from(const Config& cfg) {
  ExperimentConfig c;
  c.kind = parse_experiment_kind(cfg.text("experiment"));

  c.grid.x_lo = cfg.number_or("grid.lo", c.grid.x_lo);
  c.grid.x_hi = cfg.number_or("grid.hi", c.grid.x_hi);
  c.grid.n_cells = cfg.count_or("grid.cells", c.grid.n_cells);
  const std::string geometry = cfg.text_or("grid.geometry", "linear");
  if (geometry == "linear")
    c.grid.geometry = Geometry::Linear;
  else if (geometry == "radial")
    c.grid.geometry = Geometry::Radial;
  else
    throw ConfigError(fmt::format("unknown grid.geometry '{}'", geometry));
  c.grid.dim = static_cast<int>(cfg.count_or("grid.dim", 1));
  c.grid.validate();

  try {
    c.potential_kind = parse_potential_kind(cfg.text_or("potential.kind", "quadratic"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.potential_params = read_potential_params(cfg, c.potential_kind);

  c.initial = read_initial(cfg, "initial");
  if (cfg.has("initial2.kind") || cfg.has("initial2.lo") || cfg.has("initial2.intervals"))
    c.initial2 = read_initial(cfg, "initial2");

  c.solver = cfg.text_or("solver", c.solver);
  if (c.solver != "jko" && c.solver != "pme" && c.solver != "heleshaw")
    throw ConfigError(fmt::format("unknown solver '{}'", c.solver));

  if (cfg.has("m.list") && cfg.has("m")) throw ConfigError("give either m or m.list, not both");
  if (cfg.has("m.list"))
    c.m_list = cfg.numbers("m.list");
  else if (cfg.has("m"))
    c.m_list = {cfg.number("m")};
  if (c.m_list.empty()) throw ConfigError("m list is empty");
  for (double m : c.m_list)
    if (!(m > 1.0)) throw ConfigError("every m must be > 1");
  for (std::size_t i = 1; i < c.m_list.size(); ++i)
    if (!(c.m_list[i] > c.m_list[i - 1])) throw ConfigError("m.list must be strictly ascending");

  c.h = cfg.number_or("jko.h", c.h);
  c.h_halvings = cfg.count_or("h.halvings", c.h_halvings);
  c.nodes = cfg.count_or("jko.nodes", c.nodes);
  c.jko.tol_grad = cfg.number_or("jko.tol", c.jko.tol_grad);
  c.jko.max_iterations = cfg.count_or("jko.max_iterations", c.jko.max_iterations);
  c.T = cfg.number_or("T", c.T);
  c.snapshots = cfg.count_or("snapshots", c.snapshots);
  c.seed = cfg.count_or("seed", c.seed);
  c.pairs = cfg.count_or("compare.pairs", c.pairs);
  c.rate_tolerance = cfg.number_or("tol.rate", c.rate_tolerance);
  c.w2_ratio = cfg.number_or("tol.w2_ratio", c.w2_ratio);
  c.min_slope = cfg.number_or("tol.min_slope", c.min_slope);
  c.hausdorff_cells = cfg.number_or("tol.hausdorff_cells", c.hausdorff_cells);
  c.interior_tolerance = cfg.number_or("tol.interior", c.interior_tolerance);
  c.interior_margin_cells = cfg.number_or("tol.interior_margin_cells", c.interior_margin_cells);
  c.times = cfg.numbers_or("crossval.times", c.times);
  c.support_eps = cfg.number_or("crossval.support_eps", c.support_eps);
  c.heleshaw_dt = cfg.number_or("heleshaw.dt", c.heleshaw_dt);
  c.pme_cfl = cfg.number_or("pme.cfl", c.pme_cfl);
  cfg.require_all_used();

  if (!(c.h > 0.0) || !std::isfinite(c.h)) throw ConfigError("jko.h must be positive");
  if (!(c.T > 0.0) || !std::isfinite(c.T)) throw ConfigError("T must be positive");
  if (c.nodes < 2) throw ConfigError("jko.nodes must be >= 2");
  if (c.snapshots < 1) throw ConfigError("snapshots must be >= 1");
  if (!(c.heleshaw_dt > 0.0)) throw ConfigError("heleshaw.dt must be positive");
  if (!(c.pme_cfl > 0.0 && c.pme_cfl <= 1.0)) throw ConfigError("pme.cfl must lie in (0, 1]");
  if (!(c.jko.tol_grad > 0.0)) throw ConfigError("jko.tol must be positive");
  if (!(c.support_eps > 0.0)) throw ConfigError("crossval.support_eps must be positive");
  if (c.times.empty()) throw ConfigError("crossval.times is empty");
  for (std::size_t i = 0; i < c.times.size(); ++i)
    if (!(c.times[i] > 0.0) || (i > 0 && !(c.times[i] > c.times[i - 1])))
      throw ConfigError("crossval.times must be positive and ascending");

  switch (c.kind) {
    case ExperimentKind::ConvergeM: {
      std::size_t finite = 0;
      for (double m : c.m_list) finite += is_hard_congestion(m) ? 0 : 1;
      if (finite < 4) throw ConfigError("converge-m needs at least 4 finite exponents");
      break;
    }
    case ExperimentKind::ConvergeH:
      if (c.h_halvings < 4) throw ConfigError("converge-h needs at least 4 halvings of h");
      break;
    case ExperimentKind::Crossval:
      for (double m : c.m_list)
        if (is_hard_congestion(m)) throw ConfigError("crossval m.list holds the finite porous-medium exponents");
      break;
    default:
      break;
  }
  if (c.grid.geometry == Geometry::Radial && c.kind != ExperimentKind::SingleRun)
    throw ConfigError("radial geometry is supported by single-run only");
  if (c.grid.geometry == Geometry::Radial && c.solver == "jko")
    throw ConfigError("the JKO solver is one-dimensional");

  // Surface catalog errors as config errors.
  try {
    (void)c.potential();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.config_hash = cfg.hash();
  return c;
}

bool ExperimentReport::all_pass() const {
  return std::all_of(criteria.begin(), criteria.end(), [](const Criterion& c) { return c.pass; });
}

const Criterion* ExperimentReport::find(std::string_view id) const {
  for (const auto& c : criteria)
    if (c.id == id) return &c;
  return nullptr;
}

const Table* ExperimentReport::table(std::string_view name) const {
  for (const auto& t : tables)
    if (t.name == name) return &t;
  return nullptr;
}

// ---------------------------------------------------------------------------
// single-run

ExperimentReport single_run(const ExperimentConfig& cfg, const RunOptions&) {
  ExperimentReport rep;
  rep.kind = ExperimentKind::SingleRun;
  rep.config_hash = cfg.config_hash;
  const Potential phi = cfg.potential();
  const double m = cfg.m_list.front();

  if (cfg.solver == "jko") {
    const GridDensity rho0 = cfg.initial_density(m);
    const QuantileRep q0 = to_quantile(rho0, cfg.nodes);
    const auto traj = jko_trajectory(q0, m, cfg.h, phi, cfg.T, cfg.jko, snapshot_stride(cfg.T, cfg.h, cfg.snapshots));
    const auto& rows = traj.ledger.rows();
    double rise = 0.0;
    for (std::size_t i = 1; i < rows.size(); ++i) rise = std::max(rise, rows[i].energy - rows[i - 1].energy);
    const double scale = std::max(1.0, std::abs(rows.front().energy));
    rep.criteria.push_back(
        at_most("INV-jko-energy", "free energy is nonincreasing along the scheme", rise / scale, 1e-10));
    if (!is_hard_congestion(m) && rho0.max_value() <= 1.0 + kFeasibilityTolerance && phi.flags().a2) {
      const double M = potential_energy(q0, phi);
      const double bound = 2.0 * std::sqrt((M + 1.0) / m);
      double worst = 0.0;
      for (const auto& r : rows) worst = std::max(worst, r.excess / bound);
      rep.criteria.push_back(at_most("AC2", "excess mass of every step below 2 sqrt((M+1)/m)", worst, 1.0));
    }
    rep.artifacts.push_back({"ledger.csv", shape_csv_write(traj.ledger)});
    rep.artifacts.push_back({"quantile.csv", shape_csv_write(traj.states.back())});
    rep.artifacts.push_back({"density.csv", shape_csv_write(to_grid(traj.states.back(), cfg.grid))});
    Table energy{"energy", {"t", "E", "S", "P"}, {}};
    for (const auto& r : rows) energy.rows.push_back({r.t, r.energy, r.internal, r.potential});
    rep.tables.push_back(std::move(energy));
    return rep;
  }

  if (cfg.solver == "pme") {
    const GridDensity rho0 = cfg.initial_density(m);
    PmeOptions po;
    po.cfl = cfg.pme_cfl;
    const PmeRun run = pme_run(rho0, m, phi, cfg.T, po);
    rep.criteria.push_back(at_most("INV-pme-mass", "relative mass drift of the finite-volume run",
                                   run.ledger.max_mass_drift(), 1e-12));
    if (cfg.initial.kind == InitialData::Kind::Barenblatt && potential_is_zero(phi)) {
      const GridDensity exact = barenblatt_grid(cfg.grid, cfg.T, cfg.initial.tau, cfg.initial.C, m, cfg.initial.center);
      const GridDensity& got = run.snapshots.back().rho;
      double l1 = 0.0;
      for (std::size_t i = 0; i < got.size(); ++i) l1 += std::abs(got[i] - exact[i]) * cfg.grid.cell_measure(i);
      rep.criteria.push_back(at_most("AC1", "L1 distance to the Barenblatt profile at T", l1, 5e-3));
    }
    rep.artifacts.push_back({"ledger.csv", shape_csv_write(run.ledger)});
    {
      const GridDensity& last = run.snapshots.back().rho;
      const auto u = pressure(last, m);
      std::ostringstream ss;
      ss << "x_center,rho,pressure\n";
      for (std::size_t i = 0; i < last.size(); ++i)
        ss << detail::num(cfg.grid.center(i)) << ',' << detail::num(last[i]) << ',' << detail::num(u[i]) << '\n';
      rep.artifacts.push_back({"density.csv", ss.str()});
    }
    Table energy{"energy", {"t", "E", "S", "P"}, {}};
    for (const auto& r : run.ledger.rows()) energy.rows.push_back({r.t, r.energy, r.internal, r.potential});
    rep.tables.push_back(std::move(energy));
    return rep;
  }

  // heleshaw
  if (cfg.initial.kind != InitialData::Kind::Indicator) throw ConfigError("heleshaw needs indicator initial data");
  const Patch patch0(cfg.grid.geometry, cfg.grid.dim, cfg.initial.intervals);
  const HeleShawRun run = heleshaw_run(patch0, phi, cfg.T, cfg.heleshaw_dt);
  const double v0 = run.volumes.front();
  double drift = 0.0;
  for (double v : run.volumes) drift = std::max(drift, std::abs(v - v0) / v0);
  rep.criteria.push_back(at_most("AC9", "relative volume drift per unit time", drift / cfg.T, 1e-9));
  if (!run.merge_times.empty())
    rep.criteria.push_back(at_most("AC9-merge", "relative volume jump across merges", run.merge_volume_jump, 1e-10));
  if (cfg.grid.geometry == Geometry::Linear && cfg.potential_kind == PotentialKind::Quadratic &&
      patch0.intervals().size() == 1 && run.merge_times.empty()) {
    double err = 0.0;
    const auto& iv = patch0.intervals().front();
    for (std::size_t k = 0; k < run.times.size(); ++k) {
      const auto [a, b] = quadratic_interval_flow(iv.lo, iv.hi, cfg.potential_params[0], run.times[k],
                                                  cfg.potential_params.size() > 1 ? cfg.potential_params[1] : 0.0);
      const auto& got = run.patches[k].intervals().front();
      err = std::max({err, std::abs(got.lo - a), std::abs(got.hi - b)});
    }
    rep.criteria.push_back(at_most("AC11", "max endpoint error against the closed-form interval flow", err, 1e-8));
  }
  std::ostringstream ss;
  write_csv(ss, run);
  rep.artifacts.push_back({"patch.csv", ss.str()});
  Table vol{"volume", {"t", "volume"}, {}};
  for (std::size_t k = 0; k < run.times.size(); ++k) vol.rows.push_back({run.times[k], run.volumes[k]});
  rep.tables.push_back(std::move(vol));
  return rep;
}

// ---------------------------------------------------------------------------
// converge-m

ExperimentReport converge_in_m(const ExperimentConfig& cfg, const RunOptions& opts) {
  ExperimentReport rep;
  rep.kind = ExperimentKind::ConvergeM;
  rep.config_hash = cfg.config_hash;
  const Potential phi = cfg.potential();
  std::vector<double> ms;
  for (double m : cfg.m_list)
    if (!is_hard_congestion(m)) ms.push_back(m);
  if (ms.size() < 2) throw std::invalid_argument("converge_in_m: need at least two finite exponents");
  const GridDensity rho0 = cfg.initial_density(kHardCongestion);
  if (rho0.max_value() > 1.0 + kFeasibilityTolerance)
    throw std::invalid_argument("converge_in_m: initial density must satisfy max <= 1");
  const QuantileRep q0 = to_quantile(rho0, cfg.nodes);
  const std::size_t stride = snapshot_stride(cfg.T, cfg.h, cfg.snapshots);

  std::vector<double> all = ms;
  all.push_back(kHardCongestion);
  std::vector<JkoTrajectory> trajs(all.size());
  parallel_for(all.size(), opts.workers,
               [&](std::size_t i) { trajs[i] = jko_trajectory(q0, all[i], cfg.h, phi, cfg.T, cfg.jko, stride); });
  const JkoTrajectory& ref = trajs.back();

  Table table{"converge_m", {"m", "sup_w2"}, {}};
  std::vector<double> sup(ms.size(), 0.0);
  for (std::size_t i = 0; i < ms.size(); ++i) {
    for (std::size_t k = 0; k < ref.states.size(); ++k)
      sup[i] = std::max(sup[i], w2_distance(trajs[i].states[k], ref.states[k]));
    table.rows.push_back({ms[i], sup[i]});
  }
  double worst_ratio = 0.0;
  for (std::size_t i = 1; i < sup.size(); ++i) worst_ratio = std::max(worst_ratio, sup[i] / sup[i - 1]);
  rep.criteria.push_back(criterion("AC5-monotone", "sup-in-time W2 to the m = inf run strictly decreases in m",
                                   worst_ratio, 1.0, worst_ratio < 1.0));
  rep.criteria.push_back(
      at_most("AC5-ratio", "last over first sup-in-time W2", sup.back() / sup.front(), cfg.w2_ratio));
  rep.notes.push_back({"hele_shaw_identification",
                       phi.flags().a1 ? "asserted" : "not asserted: the Laplacian of the potential is not positive"});
  rep.tables.push_back(std::move(table));
  return rep;
}

// ---------------------------------------------------------------------------
// converge-h

SlopeFit fit_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_log_slope: need >= 2 paired points");
  const std::size_t n = x.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw std::invalid_argument("fit_log_slope: values must be positive");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("fit_log_slope: x values must not all coincide");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (n < 3) {
    fit.ci_low = -std::numeric_limits<double>::infinity();
    fit.ci_high = std::numeric_limits<double>::infinity();
    return fit;
  }
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - fit.intercept - fit.slope * lx[i];
    sse += r * r;
  }
  const double se = std::sqrt(sse / static_cast<double>(n - 2) / sxx);
  const boost::math::students_t dist(static_cast<double>(n - 2));
  const double tq = boost::math::quantile(dist, 0.975);
  fit.ci_low = fit.slope - tq * se;
  fit.ci_high = fit.slope + tq * se;
  return fit;
}

ExperimentReport converge_in_h(const ExperimentConfig& cfg, const RunOptions& opts) {
  ExperimentReport rep;
  rep.kind = ExperimentKind::ConvergeH;
  rep.config_hash = cfg.config_hash;
  const Potential phi = cfg.potential();
  const double m = cfg.m_list.front();
  const QuantileRep q0 = to_quantile(cfg.initial_density(m), cfg.nodes);
  const std::size_t levels = cfg.h_halvings + 1;
  const std::size_t stride0 = snapshot_stride(cfg.T, cfg.h, cfg.snapshots);

  std::vector<double> hs(levels);
  std::vector<JkoTrajectory> trajs(levels);
  for (std::size_t k = 0; k < levels; ++k) hs[k] = cfg.h / std::pow(2.0, static_cast<double>(k));
  parallel_for(levels, opts.workers, [&](std::size_t k) {
    trajs[k] = jko_trajectory(q0, m, hs[k], phi, cfg.T, cfg.jko, stride0 << k);
  });

  Table table{"converge_h", {"h", "sup_w2"}, {}};
  std::vector<double> xs, ys;
  for (std::size_t k = 0; k + 1 < levels; ++k) {
    const auto& a = trajs[k];
    const auto& b = trajs[k + 1];
    if (a.states.size() != b.states.size()) throw NumericalError("converge_in_h: snapshot grids do not align");
    double sup = 0.0;
    for (std::size_t j = 0; j < a.states.size(); ++j) sup = std::max(sup, w2_distance(a.states[j], b.states[j]));
    table.rows.push_back({hs[k], sup});
    xs.push_back(hs[k]);
    ys.push_back(sup);
  }
  if (std::any_of(ys.begin(), ys.end(), [](double v) { return !(v > 0.0); }))
    throw NumericalError("converge_in_h: zero distance between consecutive step sizes; slope undefined");
  const SlopeFit fit = fit_log_slope(xs, ys);
  rep.criteria.push_back(criterion("AC6", "fitted exponent of sup-W2 against h", fit.slope, cfg.min_slope,
                                   fit.slope >= cfg.min_slope));
  rep.metrics = {{"slope", fit.slope}, {"slope_ci95_low", fit.ci_low}, {"slope_ci95_high", fit.ci_high}};
  rep.tables.push_back(std::move(table));
  return rep;
}

// ---------------------------------------------------------------------------
// compare

std::pair<GridDensity, GridDensity> random_ordered_pair(const GridSpec& grid, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double width = grid.x_hi - grid.x_lo;
  const double len = width * (0.25 + 0.25 * u(gen));
  const double lo2 = grid.x_lo + width * 0.1 + (width * 0.8 - len) * u(gen);
  const double hi2 = lo2 + len;
  const double base = 0.3 + 0.3 * u(gen);
  double amp[3], freq[3], phase[3];
  for (int k = 0; k < 3; ++k) {
    amp[k] = 0.1 * u(gen);
    freq[k] = 1.0 + 4.0 * u(gen);
    phase[k] = 6.283185307179586 * u(gen);
  }
  const double sub_len = len * (0.3 + 0.6 * u(gen));
  const double a1 = lo2 + (len - sub_len) * u(gen);
  const double b1 = a1 + sub_len;
  const double c = std::min(1.0, 0.5 + 0.6 * u(gen));

  std::vector<double> v2(grid.n_cells, 0.0), v1(grid.n_cells, 0.0);
  const double dx = grid.dx();
  for (std::size_t i = 0; i < grid.n_cells; ++i) {
    const double a = grid.edge(i);
    const double b = grid.edge(i + 1);
    const double frac2 = std::max(0.0, std::min(b, hi2) - std::max(a, lo2)) / dx;
    if (frac2 <= 0.0) continue;
    const double x = grid.center(i);
    double val = base;
    for (int k = 0; k < 3; ++k) val += amp[k] * std::sin(freq[k] * 6.283185307179586 * (x - lo2) / len + phase[k]);
    val = std::min(0.95, std::max(0.05, val)) * frac2;
    v2[i] = val;
    const double frac1 = std::max(0.0, std::min(b, b1) - std::max(a, a1)) / dx;
    v1[i] = c * val * std::min(1.0, frac1 / frac2);
  }
  return {GridDensity(grid, std::move(v1)), GridDensity(grid, std::move(v2))};
}

ExperimentReport compare_sweep(const ExperimentConfig& cfg, const RunOptions& opts) {
  ExperimentReport rep;
  rep.kind = ExperimentKind::Compare;
  rep.config_hash = cfg.config_hash;
  const Potential phi = cfg.potential();
  const std::size_t nm = cfg.m_list.size();
  const std::size_t cases = cfg.pairs * nm;
  if (cases == 0) throw std::invalid_argument("compare_sweep: no cases");
  std::vector<ComparisonReport> results(cases);
  ComparisonOptions co;
  co.reference_cells = cfg.nodes;
  co.jko = cfg.jko;
  parallel_for(cases, opts.workers, [&](std::size_t idx) {
    const std::size_t p = idx / nm;
    const double m = cfg.m_list[idx % nm];
    const auto [r1, r2] = random_ordered_pair(cfg.grid, cfg.seed + p);
    results[idx] = verify_comparison(r1, r2, m, cfg.h, phi, co);
  });
  Table table{"compare", {"pair", "m", "max_violation", "tolerance", "pass"}, {}};
  double worst = -std::numeric_limits<double>::infinity();
  std::size_t failures = 0;
  for (std::size_t idx = 0; idx < cases; ++idx) {
    const auto& r = results[idx];
    table.rows.push_back({static_cast<double>(idx / nm), cfg.m_list[idx % nm], r.max_violation, r.tolerance,
                          r.pass ? 1.0 : 0.0});
    worst = std::max(worst, r.max_violation / r.tolerance);
    failures += r.pass ? 0 : 1;
  }
  rep.criteria.push_back(at_most("AC4", "max over cases of the order violation relative to its tolerance", worst, 1.0));
  rep.metrics = {{"cases", static_cast<double>(cases)}, {"failures", static_cast<double>(failures)}};
  rep.tables.push_back(std::move(table));
  return rep;
}

// ---------------------------------------------------------------------------
// longtime

ExperimentReport longtime_decay(const ExperimentConfig& cfg, const RunOptions& opts) {
  ExperimentReport rep;
  rep.kind = ExperimentKind::Longtime;
  rep.config_hash = cfg.config_hash;
  const Potential phi = cfg.potential();
  const double lambda = phi.lambda();
  if (!(lambda > 0.0)) throw std::invalid_argument("longtime_decay: needs a uniformly convex potential");
  const std::size_t stride = snapshot_stride(cfg.T, cfg.h, cfg.snapshots);
  const std::size_t nm = cfg.m_list.size();
  const bool pair = cfg.initial2.has_value();

  struct Result {
    JkoTrajectory a, b;
    QuantileRep stationary{1.0, {0.0, 1.0}};
    QuantileRep q01{1.0, {0.0, 1.0}};
    QuantileRep q02{1.0, {0.0, 1.0}};
  };
  std::vector<Result> res(nm);
  parallel_for(nm * (pair ? 2 : 1), opts.workers, [&](std::size_t idx) {
    const std::size_t i = idx % nm;
    const double m = cfg.m_list[i];
    if (idx < nm) {
      const GridDensity rho0 = cfg.initial_density(m);
      const QuantileRep q0 = to_quantile(rho0, cfg.nodes);
      const auto st = stationary_profile(m, phi, rho0.mass(), cfg.grid, StationaryForm::EnergyMinimizer);
      const QuantileRep qs = to_quantile(st.rho, cfg.nodes);
      res[i].stationary = QuantileRep(q0.mass(), std::vector<double>(qs.nodes().begin(), qs.nodes().end()));
      res[i].q01 = q0;
      res[i].a = jko_trajectory(q0, m, cfg.h, phi, cfg.T, cfg.jko, stride);
    } else {
      const GridDensity rho02 = make_grid_density(cfg.initial2->shape(m, 1), cfg.grid);
      res[i].q02 = to_quantile(rho02, cfg.nodes);
      res[i].b = jko_trajectory(res[i].q02, m, cfg.h, phi, cfg.T, cfg.jko, stride);
    }
  });

  Table table{"longtime", {"m", "t", "w2_stationary", "bound", "w2_pair", "bound_pair"}, {}};
  double worst_decay = 0.0;
  double worst_pair = 0.0;
  const double slack = 1.0 + cfg.rate_tolerance;
  for (std::size_t i = 0; i < nm; ++i) {
    const auto& r = res[i];
    const double w0 = w2_distance(r.q01, r.stationary);
    const double p0 = pair ? w2_distance(r.q01, QuantileRep(r.q01.mass(), {r.q02.nodes().begin(), r.q02.nodes().end()}))
                           : 0.0;
    for (std::size_t k = 0; k < r.a.states.size(); ++k) {
      const double t = r.a.times[k];
      const double decay = std::exp(-lambda * t);
      const double w = w2_distance(r.a.states[k], r.stationary);
      if (w0 > 0.0) worst_decay = std::max(worst_decay, w / (w0 * decay));
      double wp = 0.0;
      if (pair) {
        const auto& sb = r.b.states[k];
        wp = w2_distance(r.a.states[k], QuantileRep(r.q01.mass(), {sb.nodes().begin(), sb.nodes().end()}));
        if (p0 > 0.0) worst_pair = std::max(worst_pair, wp / (p0 * decay));
      }
      table.rows.push_back({cfg.m_list[i], t, w, w0 * decay * slack, wp, p0 * decay * slack});
    }
  }
  rep.criteria.push_back(
      at_most("AC10-decay", "max of W2(rho(t), rho_S) / (W2(rho0, rho_S) e^(-lambda t))", worst_decay, slack));
  if (pair)
    rep.criteria.push_back(
        at_most("AC10-contraction", "max of W2(rho1(t), rho2(t)) / (W2(rho01, rho02) e^(-lambda t))", worst_pair, slack));
  rep.metrics = {{"lambda", lambda}};
  rep.tables.push_back(std::move(table));
  return rep;
}

// ---------------------------------------------------------------------------
// crossval

ExperimentReport crossval(const ExperimentConfig& cfg, const RunOptions& opts) {
  ExperimentReport rep;
  rep.kind = ExperimentKind::Crossval;
  rep.config_hash = cfg.config_hash;
  const Potential phi = cfg.potential();
  if (cfg.initial.kind != InitialData::Kind::Indicator || cfg.initial.height != 1.0)
    throw ConfigError("crossval needs unit-height indicator initial data");
  const Patch patch0 = Patch::linear(cfg.initial.intervals);
  const std::size_t nt = cfg.times.size();
  std::vector<Patch> omegas(nt);
  for (std::size_t k = 0; k < nt; ++k) omegas[k] = heleshaw_patch_at(patch0, phi, cfg.times[k], cfg.heleshaw_dt);

  const GridDensity rho0 = cfg.initial_density(kHardCongestion);
  const std::size_t nm = cfg.m_list.size();
  std::vector<PmeRun> runs(nm);
  JkoTrajectory jko;
  parallel_for(nm + 1, opts.workers, [&](std::size_t i) {
    if (i == nm) {
      jko = jko_trajectory(to_quantile(rho0, cfg.nodes), kHardCongestion, cfg.h, phi, cfg.times.back(), cfg.jko);
      return;
    }
    PmeOptions po;
    po.cfl = cfg.pme_cfl;
    po.snapshot_times = cfg.times;
    runs[i] = pme_run(rho0, cfg.m_list[i], phi, cfg.times.back(), po);
  });

  const double dx = cfg.grid.dx();
  Table hd{"crossval", {"m", "t", "hausdorff", "hausdorff_cells"}, {}};
  std::vector<std::vector<double>> dh(nm, std::vector<double>(nt));
  for (std::size_t i = 0; i < nm; ++i) {
    for (std::size_t k = 0; k < nt; ++k) {
      const Patch supp = support_set(runs[i].snapshots[k + 1].rho, cfg.support_eps);
      dh[i][k] = supp.empty() ? std::numeric_limits<double>::infinity() : hausdorff_distance(supp, omegas[k]);
      hd.rows.push_back({cfg.m_list[i], cfg.times[k], dh[i][k], dh[i][k] / dx});
    }
  }
  if (nm >= 2) {
    // Distances are quantized to cell edges, so neighbouring exponents may tie;
    // require no increase between neighbours and a strict overall decrease.
    double step_worst = 0.0;
    double overall = 0.0;
    for (std::size_t k = 0; k < nt; ++k) {
      for (std::size_t i = 1; i < nm; ++i) step_worst = std::max(step_worst, dh[i][k] / dh[i - 1][k]);
      overall = std::max(overall, dh[nm - 1][k] / dh[0][k]);
    }
    rep.criteria.push_back(criterion("AC7-monotone", "Hausdorff distance to the Hele-Shaw patch is nonincreasing in m",
                                     step_worst, 1.0, step_worst <= 1.0));
    rep.criteria.push_back(criterion("AC7-decrease", "Hausdorff distance at the largest m over that at the smallest",
                                     overall, 1.0, overall < 1.0));
  }
  double last = 0.0;
  for (std::size_t k = 0; k < nt; ++k) last = std::max(last, dh[nm - 1][k] / dx);
  rep.criteria.push_back(at_most("AC7-hausdorff", "Hausdorff distance at the largest m, in cells", last, cfg.hausdorff_cells));

  // Interior density at the largest m.
  double interior = 0.0;
  Table inner{"interior", {"t", "max_deviation", "cells"}, {}};
  for (std::size_t k = 0; k < nt; ++k) {
    const GridDensity& rho = runs[nm - 1].snapshots[k + 1].rho;
    double dev = 0.0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < rho.size(); ++c) {
      const double x = cfg.grid.center(c);
      if (!omegas[k].contains(x)) continue;
      double to_boundary = std::numeric_limits<double>::infinity();
      for (const auto& iv : omegas[k].intervals())
        to_boundary = std::min({to_boundary, std::abs(x - iv.lo), std::abs(x - iv.hi)});
      // The whole cell must lie at least the margin inside.
      if (to_boundary - 0.5 * dx < cfg.interior_margin_cells * dx) continue;
      dev = std::max(dev, std::abs(rho[c] - 1.0));
      ++count;
    }
    interior = std::max(interior, dev);
    inner.rows.push_back({cfg.times[k], dev, static_cast<double>(count)});
  }
  rep.criteria.push_back(
      at_most("AC7-interior", "max |rho - 1| on cells well inside the patch at the largest m", interior, cfg.interior_tolerance));

  // Congested scheme against the patch.
  Table pj{"patch_jko", {"t", "l1_to_indicator", "l1_bound", "w2_to_heleshaw"}, {}};
  double worst_l1 = 0.0;
  double worst_w2 = 0.0;
  const double w = jko.states.front().cell_mass();
  const double l1_bound = 3.0 * dx + 3.0 * w;
  for (std::size_t k = 0; k < nt; ++k) {
    const auto it = std::find_if(jko.times.begin(), jko.times.end(),
                                 [&](double t) { return std::abs(t - cfg.times[k]) <= 1e-9 * std::max(1.0, t); });
    if (it == jko.times.end()) throw ConfigError("crossval.times must be multiples of jko.h");
    const QuantileRep& q = jko.states[static_cast<std::size_t>(it - jko.times.begin())];
    const GridDensity g = to_grid(q, cfg.grid);
    double l1 = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) l1 += std::abs(g[c] - (g[c] >= 0.5 ? 1.0 : 0.0)) * dx;
    const double w2 = w2_distance(q, patch_quantile(omegas[k], q));
    worst_l1 = std::max(worst_l1, l1 / l1_bound);
    worst_w2 = std::max(worst_w2, w2);
    pj.rows.push_back({cfg.times[k], l1, l1_bound, w2});
  }
  rep.criteria.push_back(at_most("AC8-patch", "L1 distance to the nearest indicator over 3dx + 3w", worst_l1, 1.0));
  rep.criteria.push_back(at_most("AC8-w2", "W2 between the congested scheme and the Hele-Shaw patch", worst_w2, 0.05));
  rep.tables.push_back(std::move(hd));
  rep.tables.push_back(std::move(inner));
  rep.tables.push_back(std::move(pj));
  return rep;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  switch (cfg.kind) {
    case ExperimentKind::SingleRun:
      return single_run(cfg, opts);
    case ExperimentKind::ConvergeM:
      return converge_in_m(cfg, opts);
    case ExperimentKind::ConvergeH:
      return converge_in_h(cfg, opts);
    case ExperimentKind::Compare:
      return compare_sweep(cfg, opts);
    case ExperimentKind::Longtime:
      return longtime_decay(cfg, opts);
    case ExperimentKind::Crossval:
      return crossval(cfg, opts);
  }
  throw std::invalid_argument("run_experiment: unknown experiment");
}

int execute(std::optional<ExperimentKind> kind, const std::filesystem::path& config_path,
            const std::filesystem::path& out_dir, const RunOptions& opts, std::optional<std::uint64_t> seed,
            std::ostream& log) {
  ExperimentConfig ec;
  try {
    Config cfg = Config::load(config_path);
    if (kind) {
      if (cfg.has("experiment") && parse_experiment_kind(cfg.text("experiment")) != *kind)
        throw ConfigError(fmt::format("config declares experiment '{}' but '{}' was requested", cfg.text("experiment"),
                                      to_string(*kind)));
      cfg.set("experiment", std::string(to_string(*kind)));
    }
    if (seed) cfg.set("seed", std::to_string(*seed));
    ec = ExperimentConfig::from(cfg);
  } catch (const std::invalid_argument& e) {
    log << "config error: " << e.what() << '\n';
    return 2;
  }
  ExperimentReport report;
  try {
    report = run_experiment(ec, opts);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    log << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    log << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    log << "numerical failure: " << e.what() << '\n';
    return 3;
  }
  try {
    write_report(report, out_dir, opts.plots);
  } catch (const std::exception& e) {
    log << "output error: " << e.what() << '\n';
    return 3;
  }
  for (const auto& c : report.criteria)
    log << fmt::format("{} {}: value {} threshold {}\n", c.pass ? "PASS" : "FAIL", c.id, detail::num(c.value),
                       detail::num(c.threshold));
  return report.all_pass() ? 0 : 1;
}

}  // namespace crowdflow
