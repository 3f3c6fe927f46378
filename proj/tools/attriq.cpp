#include "attriq/bench.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"attriq: post-hoc attribution and explanation-quality benchmarking"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::string format;
  std::optional<int> jobs;
  bool verbose = false;

  struct Sub {
    const char* name;
    const char* help;
    attriq::Command command;
  };
  const Sub subs[] = {
      {"explain", "write one attribution table per (instance, explainer)", attriq::Command::kExplain},
      {"evaluate", "score explanations with the metric suite", attriq::Command::kEvaluate},
      {"benchmark", "explainer x metric comparison matrix", attriq::Command::kBenchmark},
      {"validate", "check config, paths and identifiers without computing", attriq::Command::kValidate},
  };
  std::optional<attriq::Command> chosen;
  for (const Sub& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_path, "run config (JSON)")->required();
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--format", format, "report format")
        ->check(CLI::IsMember({"csv", "json", "markdown", "md"}));
    sub->add_option("--jobs", jobs, "worker threads (default: $ATTRIQ_JOBS or 1)")
        ->check(CLI::PositiveNumber);
    sub->add_flag("--verbose", verbose, "progress on stderr");
    sub->callback([&chosen, command = s.command] { chosen = command; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? attriq::kExitOk : attriq::kExitConfig;
  }

  attriq::RunOptions options;
  options.seed = seed;
  options.out_dir = out_dir;
  if (!format.empty()) options.format = attriq::ParseReportFormat(format);
  options.jobs = jobs;
  options.verbose = verbose;
  return attriq::RunCommand(*chosen, config_path, options, std::cout, std::cerr);
}
