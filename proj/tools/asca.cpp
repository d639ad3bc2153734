// asca: command line front end for the ASCA pipeline.

#include <CLI11.hpp>

#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "asca/error.hpp"
#include "asca/io/csv.hpp"
#include "asca/pipeline.hpp"

namespace {

struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

// Flags that map one-to-one onto config keys.
const FlagSpec kFlags[] = {
    {"--data", "data", "response CSV: sample id column, then one column per variable"},
    {"--design", "design", "design CSV: sample id column, then one column per factor"},
    {"--model", "model", "model formula, e.g. 'Responder + Time + Patient(Responder) + Responder*Time'"},
    {"--coding", "coding", "sum | reference | weighted"},
    {"--ss", "ss", "simultaneous | type1 | type2 | type3"},
    {"--perms", "perms", "number of permutations K"},
    {"--strategy", "strategy", "rows | residual"},
    {"--seed", "seed", "master random seed"},
    {"--scale", "scale", "autoscale | mean_center | reference_group:Factor=Level | none"},
    {"--transform", "transform", "log | sqrt | rank | box_cox[:lambda|:auto] | none"},
    {"--impute", "impute", "drop_rows | drop_cols | mean | cell_mean"},
    {"--exclude", "exclude", "comma list of sample ids or Factor=Level entries to exclude"},
    {"--out", "out", "output directory"},
    {"--threads", "threads", "worker threads for permutations and power simulations"},
    {"--random", "random", "comma list of random factors"},
    {"--statistic", "statistic", "F | SS | MS | EV"},
    {"--alpha", "alpha", "significance level"},
    {"--sca-term", "sca", "comma list of Term:components"},
};

struct Invocation {
  std::string config_path;
  std::map<std::string, std::string> values;
  bool svg = false;
  bool no_closure = false;
  bool dump_x = false;
};

void add_common(CLI::App* app, Invocation& inv) {
  app->add_option("--config", inv.config_path, "key = value settings file; flags override it");
  for (const auto& f : kFlags) app->add_option(f.flag, inv.values[f.key], f.help);
  app->add_flag("--svg", inv.svg, "also write SVG plots");
  app->add_flag("--dump-x", inv.dump_x, "write the coded model matrix to model_matrix.csv");
  app->add_flag("--no-closure", inv.no_closure, "do not add the lower-order terms implied by interactions");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ANOVA simultaneous component analysis"};
  app.require_subcommand(1);
  Invocation inv;
  std::map<CLI::App*, asca::Command> commands;
  commands[app.add_subcommand("fit", "ASCA table, residual diagnostics and assumption checks")] = asca::Command::fit;
  commands[app.add_subcommand("sca", "component models (scores, loadings, D/Q, scree) per term")] = asca::Command::sca;
  commands[app.add_subcommand("power", "simulated power curve for a planned design")] = asca::Command::power;
  commands[app.add_subcommand("check", "assumption checks and residual diagnostics only")] = asca::Command::check;
  for (auto& [sub, cmd] : commands) add_common(sub, inv);
  CLI11_PARSE(app, argc, argv);

  asca::Command command = asca::Command::fit;
  for (auto& [sub, cmd] : commands) {
    if (sub->parsed()) command = cmd;
  }

  asca::ConfigMap settings;
  std::string out_dir;
  try {
    if (!inv.config_path.empty()) settings = asca::read_config(inv.config_path);
    for (const auto& [key, value] : inv.values) {
      if (!value.empty()) settings[key] = value;
    }
    if (inv.svg) settings["svg"] = "true";
    if (inv.dump_x) settings["dump_x"] = "true";
    if (inv.no_closure) settings["closure"] = "false";
    out_dir = settings.count("out") ? settings["out"] : asca::RunConfig{}.output_dir;
    const asca::RunConfig config = asca::make_run_config(settings);
    const asca::RunOutcome outcome = asca::run_pipeline(config, command);
    for (const auto& w : outcome.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << "wrote " << outcome.files.size() << " files to " << config.output_dir << '\n';
    return 0;
  } catch (const asca::Error& e) {
    const std::string record = asca::error_record(asca::to_string(e.kind()), e.what());
    std::cerr << record << '\n';
    if (!out_dir.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(out_dir, ec);
      try {
        if (!ec) asca::io::write_file((std::filesystem::path(out_dir) / "error.json").string(), record + "\n");
      } catch (const asca::Error&) {
      }
    }
    return asca::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << asca::error_record("internal", e.what()) << '\n';
    return 1;
  }
}
