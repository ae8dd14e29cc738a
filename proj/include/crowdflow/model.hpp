#pragma once

// Core state types: drift potentials, cell-averaged grid densities, quantile
// (inverse distribution function) representations and free-boundary patches,
// together with the conversions between grid and quantile coordinates.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace crowdflow {

/// Exponent value used for the hard-congestion limit (density constraint rho <= 1).
inline constexpr double kHardCongestion = std::numeric_limits<double>::infinity();

/// Cells with density above this value count as support.
inline constexpr double kSupportThreshold = 1e-8;

inline bool is_hard_congestion(double m) { return m == kHardCongestion; }

/// A computation failed numerically (non-convergence, instability, support
/// reaching the box walls). Distinct from invalid input, which throws
/// std::invalid_argument.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Geometry { Linear, Radial };

/// Volume of the unit ball in R^d.
double unit_ball_volume(int dim);

/// Uniform grid on [x_lo, x_hi]. In radial mode the coordinate is r >= 0 and
/// each cell is a spherical shell in R^dim.
struct GridSpec {
  double x_lo = 0.0;
  double x_hi = 1.0;
  std::size_t n_cells = 1;
  Geometry geometry = Geometry::Linear;
  int dim = 1;

  double dx() const { return (x_hi - x_lo) / static_cast<double>(n_cells); }
  double edge(std::size_t i) const;
  double center(std::size_t i) const { return edge(i) + 0.5 * dx(); }
  double cell_measure(std::size_t i) const;
  /// Measure of [lo, hi] intersected with cell i (length or shell volume).
  double overlap_measure(std::size_t i, double lo, double hi) const;
  void validate() const;
};

// ---------------------------------------------------------------------------
// Potential

enum class PotentialKind { Quadratic, ShiftedQuadratic, QuarticWell, Linear, CustomPolynomial };

PotentialKind parse_potential_kind(std::string_view name);
std::string_view to_string(PotentialKind kind);

struct AssumptionFlags {
  bool a1 = false;   // Laplacian strictly positive on the working domain
  bool a2 = false;   // bounded below; normalized so that inf = 0
  bool a3p = false;  // Laplacian bounded on the working domain
};

/// Polynomial drift potential with exact derivatives.
///
/// Stored in the monomial basis in x after the normalization shift. Every
/// catalog entry is a polynomial, which lets the congested JKO solver build
/// block objectives in closed form.
class Potential {
 public:
  /// The zero potential on the given domain.
  static Potential zero(const GridSpec& box);

  double value(double x) const;
  double gradient(double x) const;
  double second_derivative(double x) const;
  /// Laplacian of x -> Phi(|x|) in R^dim evaluated at radius r; equals the
  /// second derivative when dim == 1.
  double laplacian(double r, int dim = 1) const;

  /// Coefficients of z -> Phi(z + s) in powers of z.
  std::vector<double> shifted_coefficients(double s) const;

  PotentialKind kind() const { return kind_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<double>& coefficients() const { return coeffs_; }
  double center() const { return center_; }
  /// Largest lambda with D^2 Phi >= lambda Id on the working domain.
  double lambda() const { return lambda_; }
  /// sup |Laplacian| on the working domain.
  double laplacian_bound() const { return laplacian_bound_; }
  double normalization_shift() const { return shift_; }
  const AssumptionFlags& flags() const { return flags_; }
  int degree() const { return static_cast<int>(coeffs_.size()) - 1; }
  /// True if the polynomial only has even powers (needed for radial use).
  bool is_even() const;

 private:
  friend Potential potential_catalog(PotentialKind, std::span<const double>, const GridSpec&);

  PotentialKind kind_ = PotentialKind::CustomPolynomial;
  std::vector<double> params_;
  std::vector<double> coeffs_{0.0};
  double center_ = 0.0;
  double lambda_ = 0.0;
  double laplacian_bound_ = 0.0;
  double shift_ = 0.0;
  AssumptionFlags flags_;
};

/// Builds a catalog potential. Parameter layouts:
///   quadratic          {q, c = 0}         q/2 (x - c)^2
///   shifted-quadratic  {q, c, s}          q/2 (x - c)^2 + s
///   quartic-well       {a, b, c = 0}      a (x - c)^4 - b (x - c)^2, a > 0
///   linear             {g}                g x
///   custom-polynomial  {c0, c1, ...}      sum_k c_k x^k
/// Potentials bounded below are shifted so that their infimum is zero.
/// `box` is the working domain on which lambda and the flags are evaluated.
Potential potential_catalog(PotentialKind kind, std::span<const double> params,
                            const GridSpec& box);

// ---------------------------------------------------------------------------
// GridDensity

class GridDensity {
 public:
  GridDensity(GridSpec grid, std::vector<double> values);

  const GridSpec& grid() const { return grid_; }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::size_t size() const { return values_.size(); }

  double mass() const;
  double max_value() const;
  /// [lo, hi] spanned by the cells whose density exceeds eps.
  std::optional<std::pair<double, double>> support_extent(double eps = kSupportThreshold) const;

 private:
  GridSpec grid_;
  std::vector<double> values_;
};

struct ShapeSpec {
  struct Indicator {
    double lo;
    double hi;
    double height = 1.0;
  };
  std::vector<Indicator> indicators;
  /// Optional pointwise profile added to the indicators; cell-averaged by
  /// Gauss-Legendre quadrature on [profile_lo, profile_hi].
  std::function<double(double)> profile;
  double profile_lo = 0.0;
  double profile_hi = 0.0;
  std::optional<double> target_mass;
};

GridDensity make_grid_density(const ShapeSpec& shape, const GridSpec& grid);

// ---------------------------------------------------------------------------
// QuantileRep

/// Samples X_0 < X_1 < ... < X_n of the inverse distribution function at mass
/// levels j*w with w = M/n. Between consecutive nodes the density is the
/// constant w / (X_{j+1} - X_j).
class QuantileRep {
 public:
  QuantileRep(double mass, std::vector<double> nodes);

  double mass() const { return mass_; }
  std::size_t cells() const { return nodes_.size() - 1; }
  double cell_mass() const { return mass_ / static_cast<double>(cells()); }
  std::span<const double> nodes() const { return nodes_; }
  double node(std::size_t j) const { return nodes_[j]; }
  double gap(std::size_t j) const { return nodes_[j + 1] - nodes_[j]; }
  double density(std::size_t j) const { return cell_mass() / gap(j); }
  double max_density() const;
  /// Trapezoid weight of node j over mass levels (w/2 at the ends, w inside).
  double weight(std::size_t j) const;
  double lo() const { return nodes_.front(); }
  double hi() const { return nodes_.back(); }

 private:
  double mass_;
  std::vector<double> nodes_;
};

/// Trapezoid weights over mass levels for n cells of mass w.
std::vector<double> trapezoid_weights(std::size_t n_cells, double cell_mass);

QuantileRep to_quantile(const GridDensity& rho, std::size_t n);
GridDensity to_grid(const QuantileRep& q, const GridSpec& grid);

// ---------------------------------------------------------------------------
// Patch

struct Interval {
  double lo;
  double hi;
  double length() const { return hi - lo; }
};

/// Finite union of disjoint intervals (linear) or centered annuli (radial; an
/// interval with lo == 0 is a ball).
class Patch {
 public:
  Patch() = default;
  Patch(Geometry geometry, int dim, std::vector<Interval> intervals);

  static Patch linear(std::vector<Interval> intervals) {
    return Patch(Geometry::Linear, 1, std::move(intervals));
  }

  Geometry geometry() const { return geometry_; }
  int dim() const { return dim_; }
  const std::vector<Interval>& intervals() const { return intervals_; }
  bool empty() const { return intervals_.empty(); }
  double volume() const;
  bool contains(double x) const;
  /// Distance from x to the set (radial: x is a radius).
  double distance(double x) const;

 private:
  Geometry geometry_ = Geometry::Linear;
  int dim_ = 1;
  std::vector<Interval> intervals_;
};

// ---------------------------------------------------------------------------
// RunLedger

struct LedgerRow {
  std::size_t step = 0;
  double t = 0.0;
  double energy = 0.0;
  double internal = 0.0;
  double potential = 0.0;
  double w2_increment = 0.0;
  double mass = 0.0;
  double support_lo = 0.0;
  double support_hi = 0.0;
  double excess = 0.0;
};

class RunLedger {
 public:
  /// Appends a row; time must be strictly increasing.
  void append(const LedgerRow& row);
  const std::vector<LedgerRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  /// Largest relative deviation of the mass column from its first entry.
  double max_mass_drift() const;

 private:
  std::vector<LedgerRow> rows_;
};

// CSV serialization
void write_csv(std::ostream& os, const GridDensity& rho);
void write_csv(std::ostream& os, const QuantileRep& q);
void write_csv(std::ostream& os, const RunLedger& ledger);

}  // namespace crowdflow
