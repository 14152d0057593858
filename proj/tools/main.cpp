#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cli.hpp"
#include "csflock/errors.hpp"

using namespace csflock;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cucker-Smale flocking with common noise: simulations and checks"};
  app.require_subcommand(1);

  struct RunFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool quiet = false;
  } flags;

  std::vector<std::pair<CLI::App*, cli::Experiment>> runners;
  for (auto e : {cli::Experiment::simulate, cli::Experiment::phase_sweep, cli::Experiment::meanfield,
                 cli::Experiment::stability, cli::Experiment::gronwall_check, cli::Experiment::wasserstein,
                 cli::Experiment::weak_residual}) {
    auto* sub = app.add_subcommand(std::string(cli::to_string(e)), "run the " + std::string(cli::to_string(e)) + " experiment");
    sub->add_option("--config", flags.config, "JSON config file")->required();
    sub->add_option("--seed", flags.seed, "master seed (overrides numerics.seed)");
    sub->add_option("--out", flags.out, "output directory (overrides output.directory)");
    sub->add_flag("--quiet", flags.quiet, "suppress the per-assertion summary");
    runners.emplace_back(sub, e);
  }

  std::string report_path, kind = "series", svg_out;
  auto* plot = app.add_subcommand("plot", "render an SVG from a report.json");
  plot->add_option("report", report_path, "report.json")->required();
  plot->add_option("--kind", kind, "series | phase-diagram | violin");
  plot->add_option("--out", svg_out, "SVG path (default: <kind>.svg next to the report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (plot->parsed()) {
      const auto k = cli::plot_kind_from_string(kind);
      json doc;
      try {
        doc = json::parse(slurp(report_path));
      } catch (const json::parse_error& e) {
        throw ConfigError(std::string("report is not valid JSON: ") + e.what());
      }
      const auto svg = cli::render_svg(doc, k);
      if (svg_out.empty())
        svg_out = (std::filesystem::path(report_path).parent_path() / (std::string(cli::to_string(k)) + ".svg")).string();
      std::ofstream f(svg_out);
      f << svg;
      if (!f) {
        std::cerr << "error: cannot write '" << svg_out << "'\n";
        return 2;
      }
      return 0;
    }
    for (auto& [sub, e] : runners) {
      if (!sub->parsed()) continue;
      auto config = cli::parse_config(slurp(flags.config), e);
      if (flags.seed) {
        config.seed = *flags.seed;
        config.normalized["numerics"]["seed"] = *flags.seed;
      }
      if (!flags.out.empty()) {
        config.directory = flags.out;
        config.normalized["output"]["directory"] = flags.out;
      }
      return cli::run(config, flags.quiet, std::cout, std::cerr);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
