// blursplat command-line entry point.
#include "blursplat/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace blursplat;
  CLI::App app{"Blur-aware Gaussian splatting: synthetic data, training, rendering and evaluation"};
  app.require_subcommand(1);

  SynthOptions synth;
  std::string synth_preset, synth_config;
  std::uint64_t synth_seed = 0;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset");
  s->add_option("--preset", synth_preset, "Scene preset (slow-object, fast-object, small-shake, large-shake, dense-static)");
  s->add_option("--config", synth_config, "JSON synthetic spec")->check(CLI::ExistingFile);
  s->add_option("--out", synth.out_dir, "Output dataset directory")->required();
  auto* s_seed = s->add_option("--seed", synth_seed, "Override the spec seed");

  TrainOptions train;
  std::string train_config, train_resume;
  std::uint64_t train_seed = 0;
  int train_threads = 1;
  auto* t = app.add_subcommand("train", "Run the three-stage optimisation");
  t->add_option("--data", train.dataset_dir, "Dataset directory")->required();
  t->add_option("--config", train_config, "JSON training config")->check(CLI::ExistingFile);
  t->add_option("--out", train.out_dir, "Output directory")->required();
  auto* t_seed = t->add_option("--seed", train_seed, "Override the config seed");
  auto* t_threads = t->add_option("--threads", train_threads, "Subframe render threads")->check(CLI::PositiveNumber);
  t->add_option("--resume", train_resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  RenderOptions render;
  auto* r = app.add_subcommand("render", "Render one frame of a checkpoint");
  r->add_option("--checkpoint", render.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  r->add_option("--data", render.dataset_dir, "Dataset directory")->required();
  r->add_option("--t", render.t, "Timestamp")->required();
  r->add_option("--choice", render.choice, "Subframe: start|middle|end")
      ->check(CLI::IsMember({"start", "middle", "end"}));
  r->add_option("--out", render.out_dir, "Output directory")->required();

  EvalOptions eval;
  auto* e = app.add_subcommand("eval", "Per-frame PSNR/SSIM/pose report");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  e->add_option("--data", eval.dataset_dir, "Dataset directory")->required();
  e->add_option("--out", eval.out_csv, "Report CSV")->required();

  GradcheckOptions grad;
  std::string corrupt;
  auto* g = app.add_subcommand("gradcheck", "Analytic vs finite-difference gradients per parameter class");
  g->add_option("--gaussians", grad.gaussians, "Gaussian count");
  g->add_option("--size", grad.size, "Image size in pixels");
  g->add_option("--seed", grad.seed, "Scene seed");
  auto* g_corrupt = g->add_option("--corrupt", corrupt, "Scale one class's analytic gradient by 1.5 (negative control)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (s->parsed()) {
      if (!synth_preset.empty()) synth.preset = synth_preset;
      if (!synth_config.empty()) synth.spec_file = synth_config;
      if (s_seed->count()) synth.seed = synth_seed;
      cmd_synth(synth, std::cout);
    } else if (t->parsed()) {
      if (!train_config.empty()) train.config_file = train_config;
      if (!train_resume.empty()) train.resume = train_resume;
      if (t_seed->count()) train.seed = train_seed;
      if (t_threads->count()) train.threads = train_threads;
      cmd_train(train, std::cout);
    } else if (r->parsed()) {
      cmd_render(render, std::cout);
    } else if (e->parsed()) {
      cmd_eval(eval, std::cout);
    } else if (g->parsed()) {
      if (g_corrupt->count()) grad.corrupt = corrupt;
      return cmd_gradcheck(grad, std::cout) ? 0 : 1;
    }
  } catch (const std::exception& ex) {
    std::cerr << "blursplat: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
