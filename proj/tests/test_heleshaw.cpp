#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "crowdflow/heleshaw.hpp"
#include "crowdflow/oracles.hpp"

using namespace crowdflow;

namespace {

const GridSpec kBox{-6.0, 6.0, 120, Geometry::Linear, 1};

Potential catalog(PotentialKind k, std::vector<double> p, const GridSpec& box = kBox) {
  return potential_catalog(k, p, box);
}

}  // namespace

TEST(Pressure, QuadraticChordFormula) {
  const Potential phi = catalog(PotentialKind::Quadratic, {1.0});
  const double a = -0.4, b = 1.3;
  const PatchPressure u(Patch::linear({{a, b}}), phi);
  EXPECT_EQ(u(a), 0.0);
  EXPECT_NEAR(u(b), 0.0, 1e-15);
  EXPECT_EQ(u(2.0), 0.0);
  for (double x : {-0.3, 0.0, 0.5, 1.2}) {
    EXPECT_NEAR(u(x), 0.5 * (x - a) * (b - x), 1e-14);
    const double h = 1e-4;
    EXPECT_NEAR(-(u(x + h) - 2 * u(x) + u(x - h)) / (h * h), 1.0, 1e-6);
  }
}

TEST(Pressure, PositiveInsideForConvexPotential) {
  const Potential phi = catalog(PotentialKind::CustomPolynomial, {0.0, 0.3, 0.5, 0.0, 0.1});
  const PatchPressure u(Patch::linear({{-2.0, -0.5}, {0.5, 2.5}}), phi);
  for (const auto& iv : u.patch().intervals())
    for (int k = 1; k < 1000; ++k) EXPECT_GT(u(iv.lo + iv.length() * k / 1000.0), 0.0);
  EXPECT_EQ(u(0.0), 0.0);
}

TEST(Velocity, ChordSlopeAndTranslation) {
  const Potential phi = catalog(PotentialKind::Quadratic, {1.0});
  EXPECT_THROW(Patch::linear({{0.5, 2.0}, {-1.0, 0.0}}), std::invalid_argument);
  const auto v = interval_velocity(Patch::linear({{-1.0, 0.0}, {0.5, 2.0}}), phi);
  ASSERT_EQ(v.size(), 4u);
  EXPECT_DOUBLE_EQ(v[0].position, -1.0);
  EXPECT_DOUBLE_EQ(v[0].velocity, 0.5);
  EXPECT_EQ(v[0].velocity, v[1].velocity);
  EXPECT_DOUBLE_EQ(v[2].velocity, -1.25);
  EXPECT_EQ(v[2].velocity, v[3].velocity);
  // Outward speed is -velocity at the left end and +velocity at the right end.
  EXPECT_DOUBLE_EQ(v[2].normal_speed, 1.25);
  EXPECT_DOUBLE_EQ(v[3].normal_speed, -1.25);
  const auto s = interval_velocity(Patch::linear({{-0.7, 0.7}}), phi);
  EXPECT_EQ(s[0].velocity, 0.0);
}

TEST(Velocity, MatchesPressureGradientFormula) {
  const Potential phi = catalog(PotentialKind::CustomPolynomial, {0.0, 0.3, 0.5, 0.1, 0.1});
  const Patch p = Patch::linear({{-1.0, 0.7}});
  const PatchPressure u(p, phi);
  const auto v = interval_velocity(p, phi);
  EXPECT_NEAR(v[1].normal_speed, -u.derivative(0.7) - phi.gradient(0.7), 1e-12);
  EXPECT_NEAR(v[0].normal_speed, u.derivative(-1.0) + phi.gradient(-1.0), 1e-12);
}

TEST(Velocity, SublevelSetsAreStationary) {
  const Potential phi = catalog(PotentialKind::CustomPolynomial, {0.0, 0.4, 0.5, 0.0, 0.2});
  for (double c : {0.3, 1.0, 2.5}) {
    const auto ivs = sublevel_set(phi, c, kBox.x_lo, kBox.x_hi);
    for (const auto& e : interval_velocity(Patch(Geometry::Linear, 1, ivs), phi))
      EXPECT_LE(std::abs(e.velocity), 1e-10);
  }
}

TEST(Velocity, RadialBallIsStationary) {
  const GridSpec rbox{0.0, 4.0, 40, Geometry::Radial, 2};
  for (int d : {2, 3}) {
    const Potential phi = catalog(PotentialKind::CustomPolynomial, {0.0, 0.0, 0.5, 0.0, 0.1}, rbox);
    const auto v = interval_velocity(Patch(Geometry::Radial, d, {{0.0, 1.3}}), phi);
    EXPECT_LE(std::abs(v[1].velocity), 1e-8);
    EXPECT_EQ(v[0].velocity, 0.0);
  }
}

TEST(Velocity, RadialAnnulusPressureVanishesAtBothRadii) {
  const GridSpec rbox{0.0, 4.0, 40, Geometry::Radial, 2};
  const Potential phi = catalog(PotentialKind::Quadratic, {1.0}, rbox);
  const PatchPressure u(Patch(Geometry::Radial, 2, {{1.0, 2.0}}), phi);
  EXPECT_NEAR(u(1.0), 0.0, 1e-10);
  EXPECT_NEAR(u(2.0), 0.0, 1e-10);
  EXPECT_GT(u(1.5), 0.0);
  // -(r u')' / r = 2 in 2D for q = 1.
  const double r = 1.4, h = 1e-3;
  const double flux_hi = (r + h / 2) * u.derivative(r + h / 2), flux_lo = (r - h / 2) * u.derivative(r - h / 2);
  EXPECT_NEAR(-(flux_hi - flux_lo) / h / r, 2.0, 1e-5);
}

TEST(Run, QuadraticClosedForm) {
  const Potential phi = catalog(PotentialKind::Quadratic, {1.0});
  const auto run = heleshaw_run(Patch::linear({{1.0, 2.0}}), phi, 3.0, 1e-3);
  ASSERT_EQ(run.times.size(), 3001u);
  double err = 0.0, drift = 0.0;
  for (std::size_t k = 0; k < run.times.size(); ++k) {
    const auto [a, b] = quadratic_interval_flow(1.0, 2.0, 1.0, run.times[k]);
    err = std::max({err, std::abs(run.patches[k].intervals()[0].lo - a), std::abs(run.patches[k].intervals()[0].hi - b)});
    drift = std::max(drift, std::abs(run.volumes[k] - 1.0));
  }
  EXPECT_LE(err, 1e-8);
  EXPECT_LE(drift / 3.0, 1e-9);
  EXPECT_TRUE(run.merge_times.empty());
}

TEST(Run, MergeAtClosedFormTime) {
  const Potential phi = catalog(PotentialKind::Quadratic, {1.0});
  const double dt = 1e-3;
  const auto run = heleshaw_run(Patch::linear({{-3.0, -2.0}, {1.5, 3.0}}), phi, 2.5, dt);
  ASSERT_EQ(run.merge_times.size(), 1u);
  EXPECT_NEAR(run.merge_times[0], std::log(3.8), 2 * dt);
  EXPECT_LE(run.merge_volume_jump, 1e-10);
  EXPECT_EQ(run.patches.back().intervals().size(), 1u);
  EXPECT_NEAR(run.patches.back().volume(), 2.5, 1e-10);
}

TEST(Run, ConvergesToEquilibrium) {
  const Potential phi = catalog(PotentialKind::CustomPolynomial, {0.0, 0.0, 0.5, 0.0, 0.05});
  const auto run = heleshaw_run(Patch::linear({{1.0, 2.5}}), phi, 20.0, 1e-2, {100});
  // Equilibrium: the sublevel set with the same length.
  double lo = 0.0, hi = 10.0;
  for (int k = 0; k < 200; ++k) {
    const double c = 0.5 * (lo + hi);
    const auto ivs = sublevel_set(phi, c, kBox.x_lo, kBox.x_hi);
    (ivs.front().length() < 1.5 ? lo : hi) = c;
  }
  const Patch eq(Geometry::Linear, 1, sublevel_set(phi, 0.5 * (lo + hi), kBox.x_lo, kBox.x_hi));
  EXPECT_NEAR(eq.volume(), 1.5, 1e-9);
  EXPECT_LE(hausdorff_distance(run.patches.back(), eq), 1e-6);
  EXPECT_EQ(run.times.size(), 21u);
}

TEST(Run, RejectsNonconvexHullAndOffCenterRadialPotential) {
  const Potential well = catalog(PotentialKind::QuarticWell, {1.0, 2.0});
  EXPECT_THROW(heleshaw_run(Patch::linear({{-0.5, 0.5}}), well, 1.0, 1e-2), std::invalid_argument);
  const GridSpec rbox{0.0, 4.0, 40, Geometry::Radial, 2};
  const Potential odd = catalog(PotentialKind::CustomPolynomial, {0.0, 0.1, 0.5}, rbox);
  EXPECT_THROW(heleshaw_run(Patch(Geometry::Radial, 2, {{0.0, 1.0}}), odd, 1.0, 1e-2), std::invalid_argument);
  const Potential phi = catalog(PotentialKind::Quadratic, {1.0});
  EXPECT_THROW(heleshaw_run(Patch::linear({{0.0, 1.0}}), phi, 1.0, 0.0), std::invalid_argument);
}

TEST(Run, RadialAnnulusConservesVolume) {
  const GridSpec rbox{0.0, 4.0, 40, Geometry::Radial, 2};
  const Potential phi = catalog(PotentialKind::Quadratic, {1.0}, rbox);
  const auto run = heleshaw_run(Patch(Geometry::Radial, 2, {{1.0, 1.5}}), phi, 0.5, 1e-3, {50});
  for (double v : run.volumes) EXPECT_NEAR(v, run.volumes.front(), 1e-9 * run.volumes.front());
  // Inward drift toward the center.
  EXPECT_LT(run.patches.back().intervals()[0].lo, 1.0);
}

TEST(Hausdorff, Examples) {
  const Patch a = Patch::linear({{0.0, 1.0}});
  EXPECT_EQ(hausdorff_distance(a, a), 0.0);
  EXPECT_NEAR(hausdorff_distance(a, Patch::linear({{0.1, 1.1}})), 0.1, 1e-15);
  EXPECT_DOUBLE_EQ(hausdorff_distance(a, Patch::linear({{0.0, 1.0}, {5.0, 6.0}})), 5.0);
  // Gap midpoint of one set is the farthest point from the other.
  EXPECT_DOUBLE_EQ(hausdorff_distance(Patch::linear({{0.0, 4.0}}), Patch::linear({{0.0, 1.0}, {3.0, 4.0}})), 1.0);
  EXPECT_THROW(hausdorff_distance(a, Patch{}), std::invalid_argument);
}

TEST(Hausdorff, SymmetricAndTriangleOnRandomPatches) {
  std::mt19937_64 gen(61);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto random_patch = [&]() {
    std::vector<Interval> ivs;
    double x = -3.0 + u(gen);
    const int k = 1 + static_cast<int>(3 * u(gen));
    for (int i = 0; i < k; ++i) {
      const double len = 0.1 + u(gen);
      ivs.push_back({x, x + len});
      x += len + 0.1 + u(gen);
    }
    return Patch::linear(ivs);
  };
  for (int trial = 0; trial < 50; ++trial) {
    const Patch a = random_patch(), b = random_patch(), c = random_patch();
    EXPECT_EQ(hausdorff_distance(a, b), hausdorff_distance(b, a));
    EXPECT_LE(hausdorff_distance(a, c), hausdorff_distance(a, b) + hausdorff_distance(b, c) + 1e-12);
    // Brute-force check on a fine sample of both sets.
    double brute = 0.0;
    for (const auto* pair : {&a, &b}) {
      const Patch& from = *pair;
      const Patch& to = pair == &a ? b : a;
      for (const auto& iv : from.intervals())
        for (int k = 0; k <= 2000; ++k) brute = std::max(brute, to.distance(iv.lo + iv.length() * k / 2000.0));
    }
    EXPECT_NEAR(hausdorff_distance(a, b), brute, 2e-3);
    EXPECT_GE(hausdorff_distance(a, b), brute - 1e-12);
  }
}

TEST(Csv, PatchTrajectoryColumns) {
  const Potential phi = catalog(PotentialKind::Quadratic, {1.0});
  const auto run = heleshaw_run(Patch::linear({{-3.0, -2.0}, {1.5, 3.0}}), phi, 2.0, 0.1);
  std::ostringstream os;
  write_csv(os, run);
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "t,a1,b1,a2,b2,volume");
  EXPECT_EQ(static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')), run.times.size() + 1);
}
