// facepipe: 3D face identification pipeline.
//
//   facepipe preprocess --config c.json --input raw/ --output aligned/
//   facepipe augment    --config c.json --input aligned/ --output augmented/
//   facepipe render     --config c.json --input aligned/ --output maps/ [--patches]
//   facepipe evaluate   --config c.json --gallery g/ --probe p/ --report report/

#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "facepipe/error.hpp"
#include "facepipe/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"3D face identification pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  int workers = 0;
  std::string input, output, gallery, probe, report;
  bool patches = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "pipeline JSON config")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--workers", workers, "worker threads (default: number of processors)")->check(CLI::NonNegativeNumber);
  };
  auto* pre = app.add_subcommand("preprocess", "nose-tip crop and ICP alignment to the reference face");
  auto* aug = app.add_subcommand("augment", "expression and pose augmentation of preprocessed scans");
  auto* ren = app.add_subcommand("render", "render 224x224 normalized depth maps as 16-bit PGM");
  auto* eva = app.add_subcommand("evaluate", "embed, match and report CMC/ROC");
  for (auto* sub : {pre, aug, ren}) {
    add_common(sub);
    sub->add_option("--input", input, "input directory of <subject>_<scan>.ply")->required();
    sub->add_option("--output", output, "output directory")->required();
  }
  ren->add_flag("--patches", patches, "also write random-patch variants");
  add_common(eva);
  eva->add_option("--gallery", gallery, "gallery depth maps")->required();
  eva->add_option("--probe", probe, "probe depth maps")->required();
  eva->add_option("--report", report, "report directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    facepipe::PipelineConfig config =
        config_path.empty() ? facepipe::PipelineConfig{} : facepipe::load_config(config_path);
    if (seed) facepipe::override_seed(config, *seed);
    const facepipe::CommandOptions options{workers, nullptr};

    if (pre->parsed()) return facepipe::cmd_preprocess(input, output, config, options);
    if (aug->parsed()) return facepipe::cmd_augment(input, output, config, options);
    if (ren->parsed()) return facepipe::cmd_render(input, output, config, patches, options);
    if (eva->parsed()) return facepipe::cmd_evaluate(gallery, probe, config, report, options);
  } catch (const std::exception& e) {
    std::cerr << "facepipe: error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
