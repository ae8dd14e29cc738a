#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "crowdflow/energy.hpp"
#include "crowdflow/transport.hpp"

using namespace crowdflow;

namespace {

QuantileRep uniform(double lo, double hi, std::size_t n, double mass = 1.0) {
  std::vector<double> x(n + 1);
  for (std::size_t j = 0; j <= n; ++j) x[j] = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(n);
  return QuantileRep(mass, x);
}

QuantileRep shifted(const QuantileRep& q, double s) {
  std::vector<double> x(q.nodes().begin(), q.nodes().end());
  for (double& v : x) v += s;
  return QuantileRep(q.mass(), x);
}

// Random quantile with strictly increasing nodes and n cells.
QuantileRep random_quantile(std::mt19937_64& gen, std::size_t n, double mass = 1.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(n + 1);
  x[0] = -2.0 + 2.0 * u(gen);
  const double scale = 0.2 + 3.0 * u(gen);
  for (std::size_t j = 1; j <= n; ++j) x[j] = x[j - 1] + scale * (0.05 + u(gen)) / static_cast<double>(n);
  return QuantileRep(mass, x);
}

}  // namespace

TEST(W2, SelfDistanceIsZero) {
  const QuantileRep a = uniform(0, 1, 50);
  EXPECT_EQ(w2_distance(a, a), 0.0);
}

TEST(W2, Translation) {
  EXPECT_NEAR(w2_distance(uniform(0, 1, 64), uniform(2, 3, 64)), 2.0, 1e-14);
}

TEST(W2, DilationClosedForm) {
  // Quantiles s and 2s: the trapezoid rule is exact for the quadratic integrand up to O(w^2).
  const std::size_t n = 1000;
  const double d = w2_distance(uniform(0, 1, n), uniform(0, 2, n));
  EXPECT_NEAR(d, 1.0 / std::sqrt(3.0), 1e-6);
}

TEST(W2, BruteForceAgreesOnDilation) {
  const QuantileRep a = uniform(0, 1, 100), b = uniform(0, 2, 100);
  const auto atoms_a = quantile_atoms(a, 100), atoms_b = quantile_atoms(b, 100);
  EXPECT_NEAR(brute_force_w2(atoms_a, atoms_b), 1.0 / std::sqrt(3.0), 2e-2);
}

TEST(W2, MismatchErrors) {
  EXPECT_THROW(w2_distance(uniform(0, 1, 4), uniform(0, 1, 4, 2.0)), std::invalid_argument);
  EXPECT_THROW(w2_distance(uniform(0, 1, 4), uniform(0, 1, 8)), std::invalid_argument);
  EXPECT_NEAR(w2_distance(uniform(0, 1, 4), uniform(0, 1, 8), Resample::Yes), 0.0, 1e-14);
}

TEST(W2, MetricAxiomsOnRandomTriples) {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 100; ++trial) {
    const QuantileRep a = random_quantile(gen, 40), b = random_quantile(gen, 40), c = random_quantile(gen, 40);
    const double ab = w2_distance(a, b), ba = w2_distance(b, a);
    EXPECT_EQ(ab, ba);
    EXPECT_LE(w2_distance(a, c), ab + w2_distance(b, c) + 1e-10);
    EXPECT_GT(ab, 0.0);
  }
}

TEST(W2, TranslationInvariance) {
  std::mt19937_64 gen(22);
  for (int trial = 0; trial < 20; ++trial) {
    const QuantileRep a = random_quantile(gen, 30), b = random_quantile(gen, 30);
    const double s = 5.0 * (trial - 10) / 10.0;
    EXPECT_NEAR(w2_distance(shifted(a, s), shifted(b, s)), w2_distance(a, b), 1e-12);
  }
}

TEST(W2, BruteForceAgreesOnRandomPairs) {
  std::mt19937_64 gen(23);
  for (int trial = 0; trial < 20; ++trial) {
    const QuantileRep a = random_quantile(gen, 200), b = random_quantile(gen, 200);
    const double exact = w2_distance(a, b);
    const double bf = brute_force_w2(quantile_atoms(a, 500), quantile_atoms(b, 500));
    EXPECT_NEAR(bf, exact, 1e-2);
  }
}

TEST(BruteForce, SmallCases) {
  const std::vector<double> a = {0.3, 1.0, -2.0};
  EXPECT_EQ(brute_force_w2(a, a), 0.0);
  const std::vector<double> z = {0.0}, t = {3.0};
  EXPECT_DOUBLE_EQ(brute_force_w2(z, t), 3.0);
  const std::vector<double> two = {0.0, 1.0};
  EXPECT_THROW(brute_force_w2(z, two), std::invalid_argument);
  // Sorted pairing: {0,1} -> {1,0} costs nothing.
  const std::vector<double> rev = {1.0, 0.0};
  EXPECT_EQ(brute_force_w2(two, rev), 0.0);
}

TEST(BruteForce, SortedPairingBeatsEveryPermutation) {
  std::mt19937_64 gen(24);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(6), b(6);
    for (auto& v : a) v = u(gen);
    for (auto& v : b) v = u(gen);
    std::vector<int> perm = {0, 1, 2, 3, 4, 5};
    double best = INFINITY;
    std::vector<double> as = a;
    std::sort(as.begin(), as.end());
    do {
      double c = 0.0;
      for (int k = 0; k < 6; ++k) c += (as[k] - b[perm[k]]) * (as[k] - b[perm[k]]) / 6.0;
      best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_NEAR(brute_force_w2(a, b), std::sqrt(best), 1e-12);
  }
}

TEST(OptimalMap, IdentityTranslationDilation) {
  const QuantileRep a = uniform(0, 1, 50);
  const MonotoneMap id = optimal_map(a, a);
  for (std::size_t j = 0; j <= 50; ++j) EXPECT_EQ(id.images[j], a.node(j));
  const MonotoneMap tr = optimal_map(a, uniform(2, 3, 50));
  for (std::size_t j = 0; j <= 50; ++j) EXPECT_NEAR(tr.images[j], a.node(j) + 2.0, 1e-14);
  const QuantileRep b = uniform(0, 2, 50);
  const MonotoneMap dil = optimal_map(a, b);
  for (std::size_t j = 0; j <= 50; ++j) EXPECT_NEAR(dil.images[j], 2.0 * a.node(j), 1e-14);
  EXPECT_NEAR(map_cost(dil), std::pow(w2_distance(a, b), 2), 1e-14);
  EXPECT_NEAR(std::sqrt(map_cost(dil)), brute_force_w2(quantile_atoms(a, 50), quantile_atoms(b, 50)), 1e-2);
}

TEST(Pushforward, ReproducesTargetAndComposes) {
  std::mt19937_64 gen(25);
  const QuantileRep a = random_quantile(gen, 60), b = random_quantile(gen, 60);
  const QuantileRep pb = pushforward(a, optimal_map(a, b));
  EXPECT_EQ(w2_distance(pb, b), 0.0);
  EXPECT_DOUBLE_EQ(pb.mass(), a.mass());
  EXPECT_EQ(w2_distance(pushforward(a, optimal_map(a, a)), a), 0.0);

  const QuantileRep s1 = shifted(a, 0.7);
  const QuantileRep s2 = pushforward(s1, optimal_map(s1, shifted(s1, -1.9)));
  const QuantileRep once = shifted(a, 0.7 - 1.9);
  for (std::size_t j = 0; j <= a.cells(); ++j) EXPECT_NEAR(s2.node(j), once.node(j), 1e-13);
}

TEST(Pushforward, RejectsSizeMismatch) {
  const QuantileRep a = uniform(0, 1, 4);
  const MonotoneMap m = optimal_map(uniform(0, 1, 8), uniform(1, 2, 8));
  EXPECT_THROW(pushforward(a, m), std::invalid_argument);
}

TEST(Geodesic, Endpoints) {
  std::mt19937_64 gen(26);
  const QuantileRep base = random_quantile(gen, 30), m2 = random_quantile(gen, 30), m3 = random_quantile(gen, 30);
  EXPECT_EQ(w2_distance(generalized_geodesic(base, m2, m3, 0.0), m2), 0.0);
  EXPECT_EQ(w2_distance(generalized_geodesic(base, m2, m3, 1.0), m3), 0.0);
  EXPECT_THROW(generalized_geodesic(base, m2, m3, 1.5), std::invalid_argument);
}

TEST(Geodesic, AverageOfOppositeTranslatesIsBase) {
  const QuantileRep base = uniform(0, 1, 40);
  const QuantileRep mid = generalized_geodesic(base, shifted(base, 1.0), shifted(base, -1.0), 0.5);
  for (std::size_t j = 0; j <= 40; ++j) EXPECT_NEAR(mid.node(j), base.node(j), 1e-14);
  EXPECT_NEAR(generalized_geodesic_spread(base, shifted(base, 1.0), shifted(base, -1.0)), 2.0, 1e-14);
}

TEST(Geodesic, PotentialEnergyIsLambdaConvex) {
  std::mt19937_64 gen(27);
  const GridSpec box{-10, 10, 100, Geometry::Linear, 1};
  const double p[] = {1.0, 0.0};
  const Potential phi = potential_catalog(PotentialKind::Quadratic, p, box);
  for (int trial = 0; trial < 10; ++trial) {
    const QuantileRep base = random_quantile(gen, 80), m2 = random_quantile(gen, 80), m3 = random_quantile(gen, 80);
    const double spread = generalized_geodesic_spread(base, m2, m3);
    for (double t : {0.25, 0.5, 0.75}) {
      const double lhs = potential_energy(generalized_geodesic(base, m2, m3, t), phi);
      const double rhs = (1 - t) * potential_energy(m2, phi) + t * potential_energy(m3, phi) -
                         0.5 * phi.lambda() * t * (1 - t) * spread * spread;
      EXPECT_LE(lhs, rhs + 1e-8);
    }
  }
}

TEST(Resample, ExactOnPiecewiseLinearQuantile) {
  const QuantileRep q(1.0, {0.0, 0.2, 1.0});
  const QuantileRep r = resample(q, 4);
  const double want[] = {0.0, 0.1, 0.2, 0.6, 1.0};
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(r.node(j), want[j], 1e-14);
  EXPECT_DOUBLE_EQ(r.mass(), 1.0);
}
