#pragma once

// Quasi-static Hele-Shaw flow with drift: -Lap u = Lap Phi in the patch, u = 0
// on its boundary, and the boundary moves with velocity -grad(u + Phi).

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "crowdflow/model.hpp"

namespace crowdflow {

/// Pressure of a patch, evaluable anywhere (zero outside the patch).
class PatchPressure {
 public:
  PatchPressure(Patch patch, const Potential& phi);

  double operator()(double x) const;
  /// du/dx (radial: du/dr) inside the patch; one-sided at boundary points.
  double derivative(double x) const;
  const Patch& patch() const { return patch_; }

 private:
  struct Component {
    Interval iv;
    double slope = 0.0;  // linear: chord slope of Phi
    double kappa = 0.0;  // radial: flux constant r^(d-1) u'(r) + F(r)
  };
  const Component* find(double x) const;
  double source_flux(const Component& c, double r) const;  // int_{lo}^{r} s^(d-1) Lap Phi ds

  Patch patch_;
  Potential phi_;
  std::vector<Component> comps_;
};

PatchPressure patch_pressure(const Patch& patch, const Potential& phi);

struct EndpointVelocity {
  double position;
  double velocity;      // dx/dt (radial: dr/dt)
  double normal_speed;  // outward normal speed V
};

/// Two entries per interval (lo first). The lower end of a centered ball is
/// not a boundary point and is reported with zero velocity.
std::vector<EndpointVelocity> interval_velocity(const Patch& patch, const Potential& phi);

struct HeleShawOptions {
  std::size_t stride = 1;  // record every stride-th step
};

struct HeleShawRun {
  std::vector<double> times;
  std::vector<Patch> patches;
  std::vector<double> volumes;
  std::vector<double> merge_times;
  /// Largest relative volume change over any step that contained a merge.
  double merge_volume_jump = 0.0;
};

/// Classical RK4 on the boundary points; intervals that touch are merged at
/// the located contact time.
HeleShawRun heleshaw_run(const Patch& patch0, const Potential& phi, double T, double dt,
                         const HeleShawOptions& opts = {});

double hausdorff_distance(const Patch& a, const Patch& b);

/// Rows t, a1, b1, a2, b2, ..., volume.
void write_csv(std::ostream& os, const HeleShawRun& run);

}  // namespace crowdflow
