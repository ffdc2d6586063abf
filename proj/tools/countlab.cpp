#include <CLI11.hpp>
#include <cstdio>
#include <spdlog/spdlog.h>

#include "countlab/error.hpp"
#include "countlab/pipeline.hpp"

using namespace countlab;

int main(int argc, char** argv) {
  CLI::App app{"Multi-class cell counting with rank-aware teacher agglomeration"};
  app.require_subcommand(1);

  std::string config_path, data_dir, checkpoint, image, out_dir;
  std::optional<uint64_t> seed;
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  auto add_config = [&](CLI::App* cmd, bool required) {
    auto* opt = cmd->add_option("--config", config_path, "run configuration (INI)");
    if (required) opt->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "override run.seed");
    cmd->add_option("--out", out_dir, "output directory")->required();
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_config(gen, true);
  auto* agg = app.add_subcommand("agglomerate", "distil the teacher pool into the student");
  add_config(agg, true);
  agg->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  auto* fine = app.add_subcommand("finetune", "train the counting decoder on a distilled student");
  add_config(fine, true);
  fine->add_option("--checkpoint", checkpoint, "student checkpoint")->required()->check(CLI::ExistingFile);
  fine->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  auto* eval = app.add_subcommand("evaluate", "count the held-out split and report errors");
  add_config(eval, false);
  eval->add_option("--checkpoint", checkpoint, "fine-tuned checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  auto* pred = app.add_subcommand("predict", "density maps, heatmaps and counts for one image");
  add_config(pred, false);
  pred->add_option("--checkpoint", checkpoint, "fine-tuned checkpoint")->required()->check(CLI::ExistingFile);
  pred->add_option("--image", image, "PNG image")->required()->check(CLI::ExistingFile);
  auto* abl = app.add_subcommand("ablate", "compare rats, equal and tdrop agglomeration");
  add_config(abl, true);
  abl->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    auto config = [&] {
      RunConfig c = load_config(config_path);
      if (seed) c.seed = *seed;
      c.synth.seed = c.seed;
      return c;
    };
    if (gen->parsed()) cmd_gen_data(config(), out_dir);
    if (agg->parsed()) cmd_agglomerate(config(), data_dir, out_dir);
    if (fine->parsed()) cmd_finetune(config(), checkpoint, data_dir, out_dir);
    if (abl->parsed()) cmd_ablate(config(), data_dir, out_dir);
    // evaluate and predict run with the configuration stored in the checkpoint.
    if (eval->parsed() || pred->parsed()) {
      if (!config_path.empty() || seed) spdlog::warn("--config and --seed are ignored; using the checkpoint's configuration");
      if (eval->parsed()) cmd_evaluate(checkpoint, data_dir, out_dir);
      else cmd_predict(checkpoint, image, out_dir);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "countlab: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
