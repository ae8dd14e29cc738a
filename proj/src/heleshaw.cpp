#include "crowdflow/heleshaw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "detail.hpp"

namespace crowdflow {

namespace {

constexpr double kSimpsonTol = 1e-10;

template <class F>
double simpson_rec(const F& f, double a, double b, double fa, double fm, double fb, double whole, double tol,
                   int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double diff = left + right - whole;
  if (depth <= 0 || std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <class F>
double adaptive_simpson(const F& f, double a, double b, double tol = kSimpsonTol) {
  if (b == a) return 0.0;
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, tol, 40);
}

void require_patch(const Patch& patch, const Potential& phi) {
  if (patch.empty()) throw std::invalid_argument("heleshaw: empty patch");
  for (const auto& iv : patch.intervals())
    if (!(iv.hi > iv.lo)) throw std::invalid_argument("heleshaw: degenerate interval");
  if (patch.geometry() == Geometry::Radial && !phi.is_even())
    throw std::invalid_argument("heleshaw: radial patches need a potential centered at the origin");
}

double inv_power(double r, int dim) { return dim == 1 ? 1.0 : std::pow(r, 1 - dim); }

}  // namespace

PatchPressure::PatchPressure(Patch patch, const Potential& phi) : patch_(std::move(patch)), phi_(phi) {
  require_patch(patch_, phi_);
  const bool radial = patch_.geometry() == Geometry::Radial;
  const int d = patch_.dim();
  for (const auto& iv : patch_.intervals()) {
    Component c{iv, 0.0, 0.0};
    if (!radial) {
      c.slope = (phi_.value(iv.hi) - phi_.value(iv.lo)) / (iv.hi - iv.lo);
    } else if (iv.lo > 0.0) {
      // u(R2) = 0 fixes kappa = int F s^(1-d) / int s^(1-d).
      const double num = adaptive_simpson([&](double s) { return source_flux(c, s) * inv_power(s, d); }, iv.lo, iv.hi);
      const double den = adaptive_simpson([&](double s) { return inv_power(s, d); }, iv.lo, iv.hi);
      c.kappa = num / den;
    }
    comps_.push_back(c);
  }
}

const PatchPressure::Component* PatchPressure::find(double x) const {
  for (const auto& c : comps_)
    if (c.iv.lo <= x && x <= c.iv.hi) return &c;
  return nullptr;
}

double PatchPressure::source_flux(const Component& c, double r) const {
  const int d = patch_.dim();
  return adaptive_simpson(
      [&](double s) { return (d == 1 ? 1.0 : std::pow(s, d - 1)) * phi_.laplacian(s, d); }, c.iv.lo, r);
}

double PatchPressure::operator()(double x) const {
  const Component* c = find(x);
  if (!c) return 0.0;
  if (patch_.geometry() == Geometry::Linear) {
    if (x == c->iv.lo || x == c->iv.hi) return 0.0;
    return phi_.value(c->iv.lo) + c->slope * (x - c->iv.lo) - phi_.value(x);
  }
  const int d = patch_.dim();
  if (c->iv.lo == 0.0) {
    // Ball: regularity at the origin forces kappa = 0.
    return adaptive_simpson(
        [&](double s) { return s == 0.0 ? 0.0 : source_flux(*c, s) * inv_power(s, d); }, x, c->iv.hi);
  }
  return adaptive_simpson([&](double s) { return (c->kappa - source_flux(*c, s)) * inv_power(s, d); }, c->iv.lo, x);
}

double PatchPressure::derivative(double x) const {
  const Component* c = find(x);
  if (!c) throw std::invalid_argument("PatchPressure::derivative: point outside the patch");
  if (patch_.geometry() == Geometry::Linear) return c->slope - phi_.gradient(x);
  if (x == 0.0) return 0.0;
  return (c->kappa - source_flux(*c, x)) * inv_power(x, patch_.dim());
}

PatchPressure patch_pressure(const Patch& patch, const Potential& phi) { return PatchPressure(patch, phi); }

std::vector<EndpointVelocity> interval_velocity(const Patch& patch, const Potential& phi) {
  const PatchPressure u(patch, phi);
  std::vector<EndpointVelocity> out;
  out.reserve(2 * patch.intervals().size());
  for (const auto& iv : patch.intervals()) {
    if (patch.geometry() == Geometry::Linear) {
      // Both ends share the chord-slope velocity bit for bit.
      const double v = -(phi.value(iv.hi) - phi.value(iv.lo)) / (iv.hi - iv.lo);
      out.push_back({iv.lo, v, -v});
      out.push_back({iv.hi, v, v});
      continue;
    }
    if (iv.lo == 0.0) {
      out.push_back({0.0, 0.0, 0.0});
    } else {
      const double v = -(u.derivative(iv.lo) + phi.gradient(iv.lo));
      out.push_back({iv.lo, v, -v});
    }
    const double v = -(u.derivative(iv.hi) + phi.gradient(iv.hi));
    out.push_back({iv.hi, v, v});
  }
  return out;
}

namespace {

class Stepper {
 public:
  Stepper(Geometry g, int dim, const Potential& phi) : geometry_(g), dim_(dim), phi_(phi) {}

  std::vector<Interval> advance(const std::vector<Interval>& s, double h) const {
    const auto k1 = rate(s);
    const auto k2 = rate(axpy(s, k1, 0.5 * h));
    const auto k3 = rate(axpy(s, k2, 0.5 * h));
    const auto k4 = rate(axpy(s, k3, h));
    std::vector<Interval> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      out[i].lo = s[i].lo + h / 6.0 * (k1[i].lo + 2.0 * k2[i].lo + 2.0 * k3[i].lo + k4[i].lo);
      out[i].hi = s[i].hi + h / 6.0 * (k1[i].hi + 2.0 * k2[i].hi + 2.0 * k3[i].hi + k4[i].hi);
    }
    return out;
  }

  // Smallest gap between neighbours (radial: also the inner radius of the
  // innermost annulus). Infinite when nothing can touch.
  double contact(const std::vector<Interval>& s) const {
    double c = std::numeric_limits<double>::infinity();
    if (geometry_ == Geometry::Radial && s.front().lo > 0.0) c = s.front().lo;
    for (std::size_t i = 1; i < s.size(); ++i) c = std::min(c, s[i].lo - s[i - 1].hi);
    return c;
  }

 private:
  std::vector<Interval> rate(const std::vector<Interval>& s) const {
    for (const auto& iv : s)
      if (!(iv.hi > iv.lo)) throw NumericalError("heleshaw_run: interval collapsed");
    std::vector<Interval> out(s.size());
    if (geometry_ == Geometry::Linear) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double v = -(phi_.value(s[i].hi) - phi_.value(s[i].lo)) / (s[i].hi - s[i].lo);
        out[i] = {v, v};
      }
      return out;
    }
    std::vector<Interval> clamped = s;
    if (clamped.front().lo < 0.0) clamped.front().lo = 0.0;
    const auto vel = interval_velocity(Patch(geometry_, dim_, clamped), phi_);
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = {vel[2 * i].velocity, vel[2 * i + 1].velocity};
    return out;
  }

  static std::vector<Interval> axpy(const std::vector<Interval>& s, const std::vector<Interval>& k, double h) {
    std::vector<Interval> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = {s[i].lo + h * k[i].lo, s[i].hi + h * k[i].hi};
    return out;
  }

  Geometry geometry_;
  int dim_;
  const Potential& phi_;
};

double volume_of(Geometry g, int dim, const std::vector<Interval>& s) {
  double v = 0.0;
  for (const auto& iv : s)
    v += g == Geometry::Linear ? iv.hi - iv.lo
                               : unit_ball_volume(dim) * (std::pow(iv.hi, dim) - std::pow(std::max(iv.lo, 0.0), dim));
  return v;
}

// Union of intervals that touch or overlap; an inner radius at or below zero
// closes the hole.
std::vector<Interval> merge_touching(Geometry g, std::vector<Interval> s, double tol) {
  if (g == Geometry::Radial && s.front().lo <= tol) s.front().lo = 0.0;
  std::vector<Interval> out;
  for (const auto& iv : s) {
    if (!out.empty() && iv.lo - out.back().hi <= tol)
      out.back().hi = std::max(out.back().hi, iv.hi);
    else
      out.push_back(iv);
  }
  return out;
}

}  // namespace

HeleShawRun heleshaw_run(const Patch& patch0, const Potential& phi, double T, double dt, const HeleShawOptions& opts) {
  require_patch(patch0, phi);
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("heleshaw_run: dt must be positive");
  if (!(T >= 0.0) || !std::isfinite(T)) throw std::invalid_argument("heleshaw_run: T must be >= 0");
  const Geometry g = patch0.geometry();
  const int dim = patch0.dim();
  {
    const double lo = patch0.intervals().front().lo;
    const double hi = patch0.intervals().back().hi;
    for (int k = 0; k <= 1000; ++k) {
      const double x = lo + (hi - lo) * k / 1000.0;
      if (!(phi.laplacian(x, dim) > 0.0))
        throw std::invalid_argument("heleshaw_run: Laplacian of the potential must be positive on the patch hull");
    }
  }

  const Stepper stepper(g, dim, phi);
  std::vector<Interval> s = patch0.intervals();
  HeleShawRun run;
  const auto record = [&](double t) {
    run.times.push_back(t);
    run.patches.emplace_back(g, dim, s);
    run.volumes.push_back(volume_of(g, dim, s));
  };
  record(0.0);

  const std::size_t stride = std::max<std::size_t>(opts.stride, 1);
  const auto n_steps = static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
  double t = 0.0;
  for (std::size_t step = 1; step <= n_steps; ++step) {
    const double t_end = step == n_steps ? T : static_cast<double>(step) * dt;
    double remaining = t_end - t;
    while (remaining > 0.0) {
      auto trial = stepper.advance(s, remaining);
      if (stepper.contact(trial) > 0.0) {
        s = std::move(trial);
        t = t_end;
        break;
      }
      // Locate the contact time inside the step, then merge there.
      double lo = 0.0;
      double hi = remaining;
      for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, t_end); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (stepper.contact(stepper.advance(s, mid)) > 0.0)
          lo = mid;
        else
          hi = mid;
      }
      auto at_contact = stepper.advance(s, hi);
      const double v_before = volume_of(g, dim, at_contact);
      double scale = 0.0;
      for (const auto& iv : at_contact) scale = std::max({scale, std::abs(iv.lo), std::abs(iv.hi)});
      s = merge_touching(g, std::move(at_contact), 1e-13 * std::max(1.0, scale));
      const double v_after = volume_of(g, dim, s);
      run.merge_volume_jump = std::max(run.merge_volume_jump, std::abs(v_after - v_before) / v_before);
      t += hi;
      run.merge_times.push_back(t);
      remaining = t_end - t;
    }
    t = t_end;
    if (step % stride == 0 || step == n_steps) record(t);
  }
  return run;
}

double hausdorff_distance(const Patch& a, const Patch& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("hausdorff_distance: empty patch");
  const auto directed = [](const Patch& p, const Patch& q) {
    double d = 0.0;
    for (const auto& iv : p.intervals()) d = std::max({d, q.distance(iv.lo), q.distance(iv.hi)});
    const auto& qi = q.intervals();
    for (std::size_t k = 1; k < qi.size(); ++k) {
      const double mid = 0.5 * (qi[k - 1].hi + qi[k].lo);
      if (p.contains(mid)) d = std::max(d, q.distance(mid));
    }
    return d;
  };
  return std::max(directed(a, b), directed(b, a));
}

void write_csv(std::ostream& os, const HeleShawRun& run) {
  std::size_t width = 0;
  for (const auto& p : run.patches) width = std::max(width, p.intervals().size());
  os << "t";
  for (std::size_t k = 1; k <= width; ++k) os << ",a" << k << ",b" << k;
  os << ",volume\n";
  for (std::size_t r = 0; r < run.times.size(); ++r) {
    os << detail::num(run.times[r]);
    const auto& ivs = run.patches[r].intervals();
    for (std::size_t k = 0; k < width; ++k) {
      if (k < ivs.size())
        os << ',' << detail::num(ivs[k].lo) << ',' << detail::num(ivs[k].hi);
      else
        os << ",,";
    }
    os << ',' << detail::num(run.volumes[r]) << '\n';
  }
}

}  // namespace crowdflow
