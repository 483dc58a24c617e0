// SPDX-License-Identifier: Apache-2.0
//
// rob: train a baseline teacher, distill a student against it, evaluate
// checkpoints, and run the standard ablations. Every subcommand takes
// --config/--preset/--seed/--output; see README.md for examples.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rob/cli/commands.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string preset;
  std::optional<std::int64_t> seed;
  std::string output;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_path, "JSON config file (merged over the preset)")
      ->check(CLI::ExistingFile);
  sub->add_option("--preset", args.preset, "named preset to start from");
  sub->add_option("--seed", args.seed, "override config seed");
  sub->add_option("--output", args.output, "override config output directory");
}

rob::RunConfig resolve_config(const CommonArgs& args) {
  nlohmann::json base = args.preset.empty() ? nlohmann::json(rob::RunConfig{})
                                            : nlohmann::json(rob::preset_config(args.preset));
  if (!args.config_path.empty()) {
    std::ifstream is(args.config_path);
    if (!is) throw rob::ConfigError("cannot open config file: " + args.config_path);
    nlohmann::json overrides;
    try {
      is >> overrides;
    } catch (const nlohmann::json::exception& e) {
      throw rob::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    base = rob::merge_config_json(std::move(base), overrides);
  }
  rob::RunConfig cfg = rob::parse_run_config(base);
  if (args.seed) cfg.seed = static_cast<std::uint64_t>(*args.seed);
  if (!args.output.empty()) cfg.output_dir = args.output;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised distillation with a frozen teacher branch"};
  app.require_subcommand(1);

  CommonArgs train_args, distill_args, eval_args, ablate_args;
  std::string eval_checkpoint, ablate_axis = "head_variant";

  CLI::App* train = app.add_subcommand("train-teacher", "train and register a baseline teacher");
  add_common(train, train_args);
  CLI::App* distill = app.add_subcommand("distill", "distill a student against a frozen teacher");
  add_common(distill, distill_args);
  CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a saved checkpoint");
  add_common(evaluate, eval_args);
  evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint path (overrides config)");
  CLI::App* ablate = app.add_subcommand("ablate", "compare variants along one axis");
  add_common(ablate, ablate_args);
  ablate->add_option("--axis", ablate_axis, "head_variant | multicrop | view_policy");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      rob::TeacherRegistryEntry entry = rob::cmd_train_teacher(resolve_config(train_args));
      std::cout << "registered teacher '" << entry.name << "' (" << entry.checkpoint << ")\n"
                << "file digest: " << entry.file_digest << "\n";
    } else if (distill->parsed()) {
      rob::DistillCommandResult r = rob::cmd_distill(resolve_config(distill_args));
      std::cout << "distillation finished, final loss " << r.final_loss << "\n"
                << r.report.render_text();
    } else if (evaluate->parsed()) {
      rob::EvalReport report = rob::cmd_evaluate(resolve_config(eval_args), eval_checkpoint);
      std::cout << report.render_text();
    } else if (ablate->parsed()) {
      nlohmann::json table = rob::cmd_ablate(resolve_config(ablate_args), ablate_axis);
      std::cout << table.dump(2) << "\n";
    }
  } catch (const rob::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
