// Command line front end: crowdflow <experiment> --config FILE --out DIR

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "crowdflow/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Congested crowd transport laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  bool plots = false;
  std::size_t workers = 1;
  std::optional<std::uint64_t> seed;

  const char* names[] = {"single-run", "converge-m", "converge-h", "compare", "longtime", "crossval"};
  for (const char* name : names) {
    CLI::App* sub = app.add_subcommand(name, std::string("run the ") + name + " experiment");
    sub->add_option("--config", config_path, "config file (key = value)")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_flag("--plots", plots, "write SVG plots");
    sub->add_option("--workers", workers, "concurrent sweep entries")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "random seed override");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  crowdflow::RunOptions opts;
  opts.workers = workers;
  opts.plots = plots;
  try {
    return crowdflow::execute(crowdflow::parse_experiment_kind(chosen->get_name()), config_path, out_dir, opts, seed,
                              std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
