#pragma once

// Config-driven experiments that wire the solvers together, and the report
// writer behind the command line tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crowdflow/config.hpp"
#include "crowdflow/jko.hpp"
#include "crowdflow/model.hpp"

namespace crowdflow {

enum class ExperimentKind { SingleRun, ConvergeM, ConvergeH, Compare, Longtime, Crossval };

ExperimentKind parse_experiment_kind(std::string_view name);
std::string_view to_string(ExperimentKind kind);

struct InitialData {
  enum class Kind { Indicator, Barenblatt };
  Kind kind = Kind::Indicator;
  std::vector<Interval> intervals{{1.0, 2.0}};
  double height = 1.0;
  double tau = 1.0;  // Barenblatt only
  double C = 0.5;
  double center = 0.0;

  ShapeSpec shape(double m, int dim) const;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::SingleRun;
  GridSpec grid{-3.0, 3.0, 600, Geometry::Linear, 1};
  PotentialKind potential_kind = PotentialKind::Quadratic;
  std::vector<double> potential_params{1.0};
  InitialData initial;
  std::optional<InitialData> initial2;  // second solution for contraction
  std::string solver = "jko";           // single-run: jko | pme | heleshaw
  std::vector<double> m_list{kHardCongestion};
  double h = 1e-2;
  std::size_t h_halvings = 4;
  std::size_t nodes = 400;
  double T = 1.0;
  std::size_t snapshots = 16;
  std::uint64_t seed = 1;
  std::size_t pairs = 20;
  double rate_tolerance = 0.1;
  double w2_ratio = 0.5;
  double min_slope = 0.45;
  std::vector<double> times{0.25, 0.5, 1.0};
  double heleshaw_dt = 1e-3;
  double pme_cfl = 0.4;
  double hausdorff_cells = 5.0;
  double interior_tolerance = 0.05;
  double interior_margin_cells = 3.0;
  double support_eps = 1e-2;  // crossval: density level counted as support
  JkoOptions jko;
  std::string config_hash;

  Potential potential() const;
  GridDensity initial_density(double m) const;

  /// Reads and validates a parsed config; every key must be recognized.
  static ExperimentConfig from(const Config& cfg);
};

struct Criterion {
  std::string id;  // acceptance criterion or module invariant
  std::string description;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct Artifact {
  std::string file_name;
  std::string content;
};

struct ExperimentReport {
  ExperimentKind kind = ExperimentKind::SingleRun;
  std::vector<Criterion> criteria;
  std::vector<Table> tables;
  std::vector<Artifact> artifacts;
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<std::pair<std::string, std::string>> notes;
  std::string config_hash;

  bool all_pass() const;
  const Criterion* find(std::string_view id) const;
  const Table* table(std::string_view name) const;
};

struct RunOptions {
  std::size_t workers = 1;
  bool plots = false;
};

ExperimentReport single_run(const ExperimentConfig& cfg, const RunOptions& opts = {});
ExperimentReport converge_in_m(const ExperimentConfig& cfg, const RunOptions& opts = {});
ExperimentReport converge_in_h(const ExperimentConfig& cfg, const RunOptions& opts = {});
ExperimentReport compare_sweep(const ExperimentConfig& cfg, const RunOptions& opts = {});
ExperimentReport longtime_decay(const ExperimentConfig& cfg, const RunOptions& opts = {});
ExperimentReport crossval(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Dispatches on cfg.kind.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Random ordered pair rho01 <= rho02 on the grid (max rho02 <= 0.95).
std::pair<GridDensity, GridDensity> random_ordered_pair(const GridSpec& grid, std::uint64_t seed);

/// Least-squares slope of log(y) against log(x) with a 95% interval.
struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};
SlopeFit fit_log_slope(const std::vector<double>& x, const std::vector<double>& y);

// Report output (report.cpp)

std::string report_json(const ExperimentReport& report);
std::string table_csv(const Table& table);
/// Self-contained SVG line chart of every column of `table` against column 0.
std::string table_svg(const Table& table, bool log_x, bool log_y);

/// Writes report.json, one CSV per table, the artifacts and optionally SVG
/// plots. Each file is written to a temporary name and renamed into place.
void write_report(const ExperimentReport& report, const std::filesystem::path& out_dir, bool plots);

/// Full CLI flow: load config, run, write. Returns the process exit code
/// (0 all pass, 1 a verdict failed, 2 config error, 3 numerical failure).
int execute(std::optional<ExperimentKind> kind, const std::filesystem::path& config_path,
            const std::filesystem::path& out_dir, const RunOptions& opts, std::optional<std::uint64_t> seed,
            std::ostream& log);

}  // namespace crowdflow
