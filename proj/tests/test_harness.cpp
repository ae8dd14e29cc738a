#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "crowdflow/config.hpp"
#include "crowdflow/harness.hpp"

using namespace crowdflow;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per test.
class Scratch {
 public:
  Scratch() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           (std::string("crowdflow_") + info->test_suite_name() + "_" + info->name() + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Scratch() { fs::remove_all(dir_); }
  const fs::path& dir() const { return dir_; }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

 private:
  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CROWDFLOW_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentConfig from_text(const std::string& text) { return ExperimentConfig::from(Config::parse(text)); }

const char* kHeleShaw =
    "experiment = single-run\nsolver = heleshaw\ngrid.lo = -5\ngrid.hi = 5\ngrid.cells = 100\n"
    "initial.intervals = -3, -2, 1.5, 3\nheleshaw.dt = 1e-2\nT = 2\n";

const char* kSmallConvergeM =
    "experiment = converge-m\ngrid.lo = -1\ngrid.hi = 3\ngrid.cells = 100\ninitial.lo = 1\ninitial.hi = 2\n"
    "m.list = 4, 8, 16, 32\njko.h = 0.05\njko.nodes = 100\nT = 0.5\nsnapshots = 5\n";

}  // namespace

TEST(Config, ParsesCommentsListsAndInfinity) {
  const Config c = Config::parse("# header\n a.b = 1.5  # trailing\nlist = 1, 2 ,inf\nname = quadratic\n\n");
  EXPECT_DOUBLE_EQ(c.number("a.b"), 1.5);
  const auto v = c.numbers("list");
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[2], INFINITY);
  EXPECT_EQ(c.text("name"), "quadratic");
  EXPECT_DOUBLE_EQ(c.number_or("missing", 7.0), 7.0);
  EXPECT_TRUE(c.unused().empty());
  EXPECT_EQ(parse_number("Infinity"), INFINITY);
  EXPECT_DOUBLE_EQ(parse_number("-2.5e-3"), -2.5e-3);
}

TEST(Config, RejectsMalformedLines) {
  EXPECT_THROW(Config::parse("just words\n"), ConfigError);
  EXPECT_THROW(Config::parse("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(Config::parse("a =\n"), ConfigError);
  EXPECT_THROW(Config::parse("bad key = 1\n"), ConfigError);
  EXPECT_THROW(parse_number("1.5x"), ConfigError);
  EXPECT_THROW(parse_number(""), ConfigError);
  EXPECT_THROW(Config::parse("x = one\n").number("x"), ConfigError);
  EXPECT_THROW(Config::parse("n = 2.5\n").count_or("n", 1), ConfigError);
}

TEST(Config, UnusedKeysAreErrors) {
  const Config c = Config::parse("a = 1\nb = 2\n");
  (void)c.number("a");
  ASSERT_EQ(c.unused(), std::vector<std::string>{"b"});
  EXPECT_THROW(c.require_all_used(), ConfigError);
  EXPECT_THROW(from_text("experiment = single-run\njko.hh = 0.1\n"), ConfigError);
}

TEST(Config, HashIgnoresOrderAndComments) {
  const Config a = Config::parse("x = 1\ny = 2\n");
  const Config b = Config::parse("# c\ny = 2\n\nx   =   1\n");
  EXPECT_EQ(a.canonical(), "x=1\ny=2\n");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  EXPECT_NE(a.hash(), Config::parse("x = 1\ny = 3\n").hash());
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cull);
}

TEST(ExperimentConfig, DefaultsAndOverrides) {
  const ExperimentConfig c = from_text("experiment = converge-m\nm.list = 4, 8, 16, 32, 64\ntol.w2_ratio = 0.4\n");
  EXPECT_EQ(c.kind, ExperimentKind::ConvergeM);
  EXPECT_EQ(c.m_list.size(), 5u);
  EXPECT_DOUBLE_EQ(c.w2_ratio, 0.4);
  EXPECT_DOUBLE_EQ(c.h, 1e-2);
  EXPECT_EQ(c.grid.n_cells, 600u);
  EXPECT_EQ(c.config_hash.size(), 16u);
}

TEST(ExperimentConfig, ValidationErrors) {
  EXPECT_THROW(from_text("experiment = nonsense\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = single-run\nm.list = 8, 4\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = single-run\nm = 1\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = single-run\nm = 2\nm.list = 2, 3\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = converge-m\nm.list = 4, 8, 16\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = converge-m\nm.list = 4, 8, 16, inf\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = converge-h\nh.halvings = 3\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = crossval\nm.list = 4, inf\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = compare\ngrid.geometry = radial\ngrid.lo = 0\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = single-run\ngrid.geometry = radial\ngrid.lo = 0\nsolver = jko\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = single-run\nsolver = fem\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = single-run\njko.h = -1\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = single-run\ninitial.intervals = 0, 1, 0.5\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = single-run\ninitial.intervals = 0, 1, 0.5, 2\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = single-run\npotential.kind = cubic\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = single-run\npme.cfl = 1.5\n"), ConfigError);
  EXPECT_THROW(from_text("experiment = crossval\ncrossval.times = 0.5, 0.25\n"), ConfigError);
}

TEST(ExperimentConfig, ShippedConfigsAreValid) {
  std::size_t count = 0;
  for (const auto& entry : fs::directory_iterator(CROWDFLOW_CONFIG_DIR)) {
    if (entry.path().extension() != ".cfg") continue;
    EXPECT_NO_THROW(ExperimentConfig::from(Config::load(entry.path()))) << entry.path();
    ++count;
  }
  EXPECT_GE(count, 6u);
}

TEST(Kinds, RoundTrip) {
  for (auto k : {ExperimentKind::SingleRun, ExperimentKind::ConvergeM, ExperimentKind::ConvergeH,
                 ExperimentKind::Compare, ExperimentKind::Longtime, ExperimentKind::Crossval})
    EXPECT_EQ(parse_experiment_kind(to_string(k)), k);
}

TEST(SlopeFit, ExactPowerLawAndInterval) {
  const std::vector<double> x = {1, 2, 4, 8, 16};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 * std::pow(v, 0.5));
  const SlopeFit f = fit_log_slope(x, y);
  EXPECT_NEAR(f.slope, 0.5, 1e-12);
  EXPECT_NEAR(std::exp(f.intercept), 3.0, 1e-12);
  EXPECT_NEAR(f.ci_low, 0.5, 1e-9);
  EXPECT_NEAR(f.ci_high, 0.5, 1e-9);

  std::mt19937_64 gen(71);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<double> yn;
  for (double v : x) yn.push_back(std::pow(v, 0.5) * std::exp(noise(gen)));
  const SlopeFit g = fit_log_slope(x, yn);
  EXPECT_LT(g.ci_low, g.slope);
  EXPECT_GT(g.ci_high, g.slope);
  EXPECT_THROW(fit_log_slope({1}, {1}), std::invalid_argument);
  EXPECT_THROW(fit_log_slope({1, 2, 4}, {1, 2}), std::invalid_argument);
}

TEST(OrderedPair, IsOrderedAndBounded) {
  const GridSpec g{-2, 2, 200, Geometry::Linear, 1};
  for (std::uint64_t s = 1; s <= 30; ++s) {
    const auto [a, b] = random_ordered_pair(g, s);
    EXPECT_LE(b.max_value(), 0.95 + 1e-15);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_LE(a[i], b[i]);
    EXPECT_GT(a.mass(), 0.0);
    const auto [a2, b2] = random_ordered_pair(g, s);
    EXPECT_EQ(a2.mass(), a.mass());
  }
}

TEST(Experiments, SingleRunJkoLedger) {
  const auto rep = run_experiment(from_text(
      "experiment = single-run\ngrid.lo = -3\ngrid.hi = 4\ngrid.cells = 140\ninitial.lo = 0\ninitial.hi = 1\n"
      "m = 10\njko.h = 0.05\njko.nodes = 100\nT = 0.5\n"));
  EXPECT_TRUE(rep.all_pass());
  ASSERT_NE(rep.find("INV-jko-energy"), nullptr);
  ASSERT_NE(rep.find("AC2"), nullptr);
  const Table* e = rep.table("energy");
  ASSERT_NE(e, nullptr);
  for (std::size_t k = 1; k < e->rows.size(); ++k) EXPECT_LE(e->rows[k][1], e->rows[k - 1][1] + 1e-12);
  EXPECT_EQ(rep.artifacts.size(), 3u);
}

TEST(Experiments, SingleRunHeleShawMerge) {
  const auto rep = run_experiment(from_text(kHeleShaw));
  EXPECT_TRUE(rep.all_pass());
  EXPECT_NE(rep.find("AC9"), nullptr);
  EXPECT_NE(rep.find("AC9-merge"), nullptr);
  EXPECT_EQ(rep.find("AC11"), nullptr);
}

TEST(Experiments, SingleRunPmeRadial) {
  const auto rep = run_experiment(from_text(
      "experiment = single-run\nsolver = pme\ngrid.geometry = radial\ngrid.dim = 2\ngrid.lo = 0\ngrid.hi = 3\n"
      "grid.cells = 60\ninitial.lo = 0.5\ninitial.hi = 1.5\ninitial.height = 0.8\nm = 3\nT = 0.1\n"));
  EXPECT_TRUE(rep.all_pass());
  EXPECT_NE(rep.find("INV-pme-mass"), nullptr);
}

TEST(Experiments, ConvergeMWithoutDriftIsFlagged) {
  const auto rep = run_experiment(from_text(std::string(kSmallConvergeM) + "potential.kind = linear\npotential.g = 0\n"));
  bool found = false;
  for (const auto& [k, v] : rep.notes)
    if (k == "hele_shaw_identification") found = v.find("not asserted") != std::string::npos;
  EXPECT_TRUE(found);
  EXPECT_EQ(rep.table("converge_m")->rows.size(), 4u);
}

TEST(Experiments, LongtimeFromStationaryStateStaysPut) {
  const auto rep = run_experiment(from_text(
      "experiment = longtime\ngrid.lo = -3\ngrid.hi = 3\ngrid.cells = 600\ninitial.lo = -0.5\ninitial.hi = 0.5\n"
      "m = inf\njko.h = 0.05\njko.nodes = 200\nT = 1\n"));
  for (const auto& row : rep.table("longtime")->rows) EXPECT_LE(row[2], 1e-10);
  EXPECT_EQ(rep.find("AC10-contraction"), nullptr);
}

TEST(Experiments, LongtimeNeedsUniformConvexity) {
  EXPECT_THROW(run_experiment(from_text("experiment = longtime\npotential.kind = linear\npotential.g = 1\n")),
               std::invalid_argument);
}

TEST(Experiments, SweepsAreIndependentOfWorkerCount) {
  const ExperimentConfig c = from_text(kSmallConvergeM);
  const auto a = converge_in_m(c, {1, false});
  const auto b = converge_in_m(c, {3, false});
  EXPECT_EQ(table_csv(*a.table("converge_m")), table_csv(*b.table("converge_m")));
  ExperimentConfig cmp = from_text("experiment = compare\ngrid.lo = -2\ngrid.hi = 2\ngrid.cells = 100\n"
                                   "m.list = 5, inf\ncompare.pairs = 3\njko.nodes = 2000\n");
  EXPECT_EQ(table_csv(*compare_sweep(cmp, {1, false}).table("compare")),
            table_csv(*compare_sweep(cmp, {4, false}).table("compare")));
}

TEST(Report, JsonCarriesCriteriaAndProvenance) {
  ExperimentReport r;
  r.kind = ExperimentKind::Compare;
  r.config_hash = "0123456789abcdef";
  r.criteria.push_back({"AC4", "order", 0.25, 1.0, true});
  r.criteria.push_back({"X", "overflow", INFINITY, 1.0, false});
  r.metrics = {{"slope", 0.5}};
  const auto j = nlohmann::json::parse(report_json(r));
  EXPECT_EQ(j["experiment"], "compare");
  EXPECT_EQ(j["config_hash"], "0123456789abcdef");
  EXPECT_FALSE(j["pass"].get<bool>());
  EXPECT_EQ(j["criteria"][0]["id"], "AC4");
  EXPECT_DOUBLE_EQ(j["criteria"][0]["value"].get<double>(), 0.25);
  EXPECT_EQ(j["criteria"][1]["value"], "inf");
  EXPECT_TRUE(j["versions"].contains("crowdflow"));
}

TEST(Report, CsvAndSvg) {
  Table t{"converge_m", {"m", "sup_w2"}, {{4, 0.5}, {8, 0.25}}};
  EXPECT_EQ(table_csv(t), "m,sup_w2\n4,0.5\n8,0.25\n");
  const std::string svg = table_svg(t, true, true);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Report, WritesAllFilesWithoutTemporaries) {
  Scratch s;
  ExperimentReport r;
  r.tables.push_back({"energy", {"t", "E"}, {{0, 1}, {1, 0.5}}});
  r.artifacts.push_back({"ledger.csv", "a,b\n"});
  write_report(r, s.dir() / "out", true);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(s.dir() / "out")) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  EXPECT_EQ(names, (std::vector<std::string>{"energy.csv", "energy.svg", "ledger.csv", "report.json"}));
}

TEST(Execute, ExitCodes) {
  Scratch s;
  std::ostringstream log;
  const auto bad = s.write("bad.cfg", "experiment = single-run\ngrid.cells = many\n");
  EXPECT_EQ(execute(std::nullopt, bad, s.dir() / "o1", {}, std::nullopt, log), 2);
  EXPECT_FALSE(fs::exists(s.dir() / "o1"));
  EXPECT_EQ(execute(std::nullopt, s.dir() / "missing.cfg", s.dir() / "o2", {}, std::nullopt, log), 2);

  const auto good = s.write("hs.cfg", kHeleShaw);
  EXPECT_EQ(execute(ExperimentKind::SingleRun, good, s.dir() / "o3", {}, std::nullopt, log), 0);
  EXPECT_TRUE(fs::exists(s.dir() / "o3" / "report.json"));
  EXPECT_EQ(execute(ExperimentKind::Compare, good, s.dir() / "o4", {}, std::nullopt, log), 2);

  // A verdict that cannot be met.
  const auto strict = s.write("strict.cfg", std::string(kSmallConvergeM) + "tol.w2_ratio = 1e-9\n");
  EXPECT_EQ(execute(std::nullopt, strict, s.dir() / "o5", {}, std::nullopt, log), 1);
  EXPECT_TRUE(fs::exists(s.dir() / "o5" / "converge_m.csv"));

  // Support pushed into the wall is a numerical failure.
  const auto wall = s.write("wall.cfg",
                            "experiment = single-run\nsolver = pme\ngrid.lo = -1\ngrid.hi = 1\ngrid.cells = 50\n"
                            "initial.lo = -0.9\ninitial.hi = 0.9\npotential.kind = linear\npotential.g = 0\nm = 2\nT = 2\n");
  EXPECT_EQ(execute(std::nullopt, wall, s.dir() / "o6", {}, std::nullopt, log), 3);
  EXPECT_FALSE(fs::exists(s.dir() / "o6"));
}

TEST(Cli, MalformedConfigLeavesNoFiles) {
  Scratch s;
  const auto bad = s.write("bad.cfg", "experiment = converge-m\nm.list = 4, 8\n");
  EXPECT_EQ(run_cli("converge-m --config " + bad.string() + " --out " + (s.dir() / "out").string()), 2);
  EXPECT_FALSE(fs::exists(s.dir() / "out"));
  EXPECT_EQ(run_cli("converge-m --out " + (s.dir() / "out").string()), 2);
  EXPECT_EQ(run_cli("no-such-experiment --config " + bad.string()), 2);
}

TEST(Cli, RunsAreByteIdentical) {
  Scratch s;
  const auto cfg = s.write("hs.cfg", kHeleShaw);
  const auto cm = s.write("cm.cfg", kSmallConvergeM);
  ASSERT_EQ(run_cli("single-run --config " + cfg.string() + " --out " + (s.dir() / "a").string() + " --plots"), 0);
  ASSERT_EQ(run_cli("single-run --config " + cfg.string() + " --out " + (s.dir() / "b").string() + " --plots"), 0);
  for (const char* f : {"patch.csv", "volume.csv", "volume.svg", "report.json"})
    EXPECT_EQ(slurp(s.dir() / "a" / f), slurp(s.dir() / "b" / f)) << f;
  ASSERT_EQ(run_cli("converge-m --config " + cm.string() + " --out " + (s.dir() / "c").string() + " --workers 1"), 0);
  ASSERT_EQ(run_cli("converge-m --config " + cm.string() + " --out " + (s.dir() / "d").string() + " --workers 4"), 0);
  EXPECT_EQ(slurp(s.dir() / "c" / "converge_m.csv"), slurp(s.dir() / "d" / "converge_m.csv"));
  const auto j = nlohmann::json::parse(slurp(s.dir() / "c" / "report.json"));
  EXPECT_EQ(j["config_hash"], Config::load(cm).hash());
}

TEST(Cli, SeedOverrideChangesComparePairs) {
  Scratch s;
  const auto cfg = s.write("cmp.cfg", "experiment = compare\ngrid.lo = -2\ngrid.hi = 2\ngrid.cells = 100\n"
                                      "m.list = 5\ncompare.pairs = 2\njko.nodes = 4000\n");
  run_cli("compare --config " + cfg.string() + " --out " + (s.dir() / "a").string() + " --seed 5");
  run_cli("compare --config " + cfg.string() + " --out " + (s.dir() / "b").string() + " --seed 6");
  ASSERT_TRUE(fs::exists(s.dir() / "a" / "compare.csv"));
  EXPECT_NE(slurp(s.dir() / "a" / "compare.csv"), slurp(s.dir() / "b" / "compare.csv"));
}
