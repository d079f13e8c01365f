#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "metareg/commands.hpp"
#include "metareg/parallel.hpp"

using namespace metareg;

namespace {

struct Common {
  std::string config_path;
  std::string preset_name;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool serial = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--preset", c.preset_name, "named preset (see `metareg presets`)");
  cmd->add_option("--seed", c.seed, "experiment seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_flag("--serial", c.serial, "single worker, bitwise reproducible");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = load_config(c.config_path, c.preset_name);
  if (c.seed) cfg.seed = *c.seed;
  set_serial(c.serial);
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{"Meta-learned initialisation for interactive volume-to-sparse registration"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("generate-data", "generate the synthetic train/test phantoms");
  add_common(gen, common);

  auto* train = app.add_subcommand("train", "train a model and write its checkpoint");
  add_common(train, common);
  std::string data_dir, mode;
  train->add_option("--data", data_dir, "dataset directory (default: paths.data_dir)");
  train->add_option("--mode", mode, "meta | joint | conventional-dense | conventional-sparse | none");

  auto* adapt = app.add_subcommand("adapt", "run the meta-test sweep on a split");
  add_common(adapt, common);
  std::string checkpoint, split = "test";
  bool no_few_shot = false;
  adapt->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  adapt->add_option("--data", data_dir, "dataset directory (default: paths.data_dir)");
  adapt->add_option("--split", split, "dataset split");
  adapt->add_flag("--no-few-shot", no_few_shot, "evaluate every mask with the initial weights");

  auto* compare = app.add_subcommand("compare", "paired comparison of adaptation runs");
  add_common(compare, common);
  std::vector<std::string> inputs;
  std::string baseline;
  compare->add_option("inputs", inputs, "name=adapt_cases.csv pairs")->required();
  compare->add_option("--baseline", baseline, "reference method (default: first)");

  auto* report = app.add_subcommand("report", "summarise adaptation results");
  add_common(report, common);
  std::string run_dir;
  bool no_reference = false;
  report->add_option("run_dir", run_dir, "directory with adaptation CSVs")->required();
  report->add_flag("--no-paper-reference", no_reference, "omit the published anchor numbers");

  auto* presets = app.add_subcommand("presets", "list presets or print one as JSON");
  std::string show;
  presets->add_option("name", show, "preset to print");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  if (presets->parsed()) {
    if (show.empty()) {
      for (const auto& n : preset_names()) std::cout << n << "\n";
    } else {
      std::cout << preset(show).to_json_text();
    }
    return 0;
  }

  ExperimentConfig cfg = resolve(common);
  if (gen->parsed()) {
    const std::string out = common.out.empty() ? cfg.paths.data_dir : common.out;
    const Manifest m = cmd_generate_data(cfg, out);
    std::cout << "wrote " << m.cases.size() << " cases to " << out << " (config " << m.config_hash << ", seed "
              << m.experiment_seed << ")\n";
  } else if (train->parsed()) {
    if (!mode.empty()) cfg.train.mode = train_mode_from_string(mode);
    const std::string out = common.out.empty() ? cfg.paths.run_dir + "/" + cfg.preset : common.out;
    const Checkpoint ck = cmd_train(cfg, data_dir.empty() ? cfg.paths.data_dir : data_dir, out, std::cout);
    std::cout << "checkpoint " << out << "/" << kCheckpointFile << " after " << ck.metadata.at("episodes")
              << " steps (config " << cfg.hash() << ", seed " << cfg.seed << ")\n";
  } else if (adapt->parsed()) {
    if (no_few_shot) cfg.adapt.few_shot = false;
    const std::string out = common.out.empty() ? cfg.paths.run_dir + "/adapt" : common.out;
    cmd_adapt(cfg, checkpoint, data_dir.empty() ? cfg.paths.data_dir : data_dir, split, out, std::cout);
    std::cout << "wrote " << out << "/" << kSummaryFile << "\n";
  } else if (compare->parsed()) {
    std::vector<MethodInput> methods;
    for (const auto& s : inputs) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        methods.push_back({s, s});
      } else {
        methods.push_back({s.substr(0, eq), s.substr(eq + 1)});
      }
    }
    cmd_compare(methods, baseline, common.out, std::cout);
  } else if (report->parsed()) {
    cmd_report(run_dir, cfg.eval.paper_reference && !no_reference, std::cout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kConfig);
  } catch (const NumericalFault& e) {
    std::cerr << "numerical fault: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kNumerical);
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
