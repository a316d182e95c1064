#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sevtrain/runner.hpp"

namespace fs = std::filesystem;
using namespace sevtrain;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out;
  std::string checkpoint;
  std::string preset;
  std::string scale;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool print_config = false;
};

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) {
    cfg = load_run_config(args.config_path);
  } else {
    cfg = parse_run_config("{}");
  }
  if (args.seed_set) cfg.seed = args.seed;
  if (!args.out.empty()) cfg.out = args.out;
  if (!args.preset.empty()) {
    cfg.recipe.preset = args.preset;
    cfg.recipe.stages.clear();
  }
  if (!args.scale.empty()) {
    if (args.scale != "desk" && args.scale != "paper") {
      throw ConfigError("config: recipe.scale: must be desk or paper");
    }
    cfg.recipe.scale = args.scale;
  }
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool with_checkpoint, bool with_recipe) {
  cmd->add_option("--config", args.config_path, "Run configuration JSON file");
  cmd->add_option("--out", args.out, "Output directory (overrides the config)");
  cmd->add_option("--seed", args.seed, "Random seed (overrides the config)")
      ->each([&](const std::string&) { args.seed_set = true; });
  if (with_checkpoint) {
    cmd->add_option("--checkpoint", args.checkpoint, "Checkpoint manifest path")->required();
  }
  if (with_recipe) {
    cmd->add_option("--preset", args.preset,
                    "Recipe preset: Standard|AdvRobust|LE-SmT|HE-SmT|HE-SmT-LM|ST");
    cmd->add_option("--scale", args.scale, "Preset scale: paper|desk");
  }
  cmd->add_flag("--print-config", args.print_config,
                "Print the fully resolved configuration and exit");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sevtrain: semantically targeted adversarial training and mistake-severity evaluation"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_adv_args, eval_corrupt_args, targets_args, gen_args;
  std::vector<std::string> report_dirs;
  std::string report_out = "report";

  auto* train_cmd = app.add_subcommand("train", "Train a recipe and write checkpoints and logs");
  add_common(train_cmd, train_args, false, true);

  auto* eval_adv_cmd =
      app.add_subcommand("eval-adv", "Adversarial epsilon sweep of a trained checkpoint");
  add_common(eval_adv_cmd, eval_adv_args, true, false);

  auto* eval_corrupt_cmd =
      app.add_subcommand("eval-corrupt", "Corruption kind x severity grid evaluation");
  add_common(eval_corrupt_cmd, eval_corrupt_args, true, false);

  auto* report_cmd = app.add_subcommand("report", "Compare evaluation results across runs");
  report_cmd->add_option("dirs", report_dirs, "Run directories to compare")->required();
  report_cmd->add_option("--out", report_out, "Output directory for comparison tables");

  auto* targets_cmd =
      app.add_subcommand("make-targets", "Export the similarity matrix and semantic target sets");
  add_common(targets_cmd, targets_args, false, false);

  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic dataset and taxonomy");
  add_common(gen_cmd, gen_args, false, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    std::cerr << "sevtrain: error: usage: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*train_cmd) {
      const auto cfg = resolve_config(train_args);
      if (train_args.print_config) {
        std::cout << resolved_config_json(cfg);
        return 0;
      }
      const auto out = cmd_train(cfg);
      std::cout << "run dir: " << out.run_dir.string() << "\n"
                << "final checkpoint: " << out.final_checkpoint.string() << "\n";
    } else if (*eval_adv_cmd) {
      const auto cfg = resolve_config(eval_adv_args);
      if (eval_adv_args.print_config) {
        std::cout << resolved_config_json(cfg);
        return 0;
      }
      cmd_eval_adv(cfg, eval_adv_args.checkpoint, cfg.out);
      std::cout << "adversarial sweep written to " << cfg.out << "\n";
    } else if (*eval_corrupt_cmd) {
      const auto cfg = resolve_config(eval_corrupt_args);
      if (eval_corrupt_args.print_config) {
        std::cout << resolved_config_json(cfg);
        return 0;
      }
      cmd_eval_corrupt(cfg, eval_corrupt_args.checkpoint, cfg.out);
      std::cout << "corruption grid written to " << cfg.out << "\n";
    } else if (*report_cmd) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      cmd_report(dirs, report_out);
      std::cout << "comparison written to " << report_out << "\n";
    } else if (*targets_cmd) {
      const auto cfg = resolve_config(targets_args);
      if (targets_args.print_config) {
        std::cout << resolved_config_json(cfg);
        return 0;
      }
      cmd_make_targets(cfg, cfg.out);
      std::cout << "similarity matrix and target sets written to " << cfg.out << "\n";
    } else if (*gen_cmd) {
      const auto cfg = resolve_config(gen_args);
      if (gen_args.print_config) {
        std::cout << resolved_config_json(cfg);
        return 0;
      }
      cmd_gen_data(cfg, cfg.out);
      std::cout << "synthetic dataset written to " << cfg.out << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "sevtrain: error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "sevtrain: error: runtime: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
