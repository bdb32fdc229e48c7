#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <optional>
#include <string>

#include "facepipe/augmentation.hpp"
#include "facepipe/depthmap.hpp"
#include "facepipe/matching.hpp"
#include "facepipe/morphable.hpp"
#include "facepipe/registration.hpp"

namespace facepipe {

struct ToyModelConfig {
  std::size_t vertices = 20000;
  int shape_dim = 10;
  int expression_dim = kDefaultExpressionDim;
  std::uint64_t seed = 7;
};

struct RenderConfig {
  RenderParams params;
  int embedding_size = kEmbeddingInputSize;
  int median_kernel = 3;
  // When set, depth is mapped through this fixed window instead of the
  // per-image min/max stretch.
  std::optional<std::pair<double, double>> depth_window;
};

struct EmbeddingConfig {
  std::string backend = "baseline";  // baseline | external
  int dimension = 256;
  std::filesystem::path training_dir;  // baseline; empty -> gallery maps
  std::filesystem::path feature_dir;   // external
  double pca_variance_target = 0.95;
};

struct MatchingConfig {
  std::string pca_mode = "union";  // union | gallery | none
  std::size_t max_rank = 0;        // 0 -> gallery size
  int roc_thresholds = kDefaultRocThresholds;
};

// Single JSON document; every field is optional and defaults as below.
struct PipelineConfig {
  std::filesystem::path reference_model_path;   // PLY; empty -> toy model mean
  std::filesystem::path morphable_model_path;   // MLMM1; empty -> toy model
  ToyModelConfig toy_model;
  IcpParams icp;
  FitSettings fit;
  RenderConfig render;
  AugmentPlan augment;
  // Patch variants are also produced for expression/pose augmented scans.
  bool patch_augmented_scans = true;
  EmbeddingConfig embedding;
  MatchingConfig matching;
  std::uint64_t seed = 0;

  static PipelineConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

PipelineConfig load_config(const std::filesystem::path& path);
// Sets the master seed and the augmentation seed together.
void override_seed(PipelineConfig& config, std::uint64_t seed);

// "<subject>_<scan>" file stems; the subject is everything before the last
// underscore.
struct ScanLabel {
  std::string subject;
  std::string scan;
};
std::optional<ScanLabel> parse_label(const std::filesystem::path& file);

MorphableModel load_morphable_model(const PipelineConfig& config);
PointCloud load_reference(const PipelineConfig& config);

// 200 x 200 render, median filter, normalization, resize to 224 x 224.
DepthMap render_for_embedding(const PointCloud& aligned, const RenderConfig& config);

struct CommandOptions {
  int workers = 0;  // 0 -> hardware concurrency
  std::ostream* log = nullptr;  // nullptr -> std::cerr
};

// Each command returns 0 when every item succeeded and 1 otherwise; fatal
// problems (no inputs, unreadable config, accounting errors) throw.
int cmd_preprocess(const std::filesystem::path& input_dir, const std::filesystem::path& output_dir,
                   const PipelineConfig& config, const CommandOptions& options = {});
int cmd_augment(const std::filesystem::path& input_dir, const std::filesystem::path& output_dir,
                const PipelineConfig& config, const CommandOptions& options = {});
int cmd_render(const std::filesystem::path& input_dir, const std::filesystem::path& output_dir,
               const PipelineConfig& config, bool patches, const CommandOptions& options = {});
int cmd_evaluate(const std::filesystem::path& gallery_dir, const std::filesystem::path& probe_dir,
                 const PipelineConfig& config, const std::filesystem::path& report_dir,
                 const CommandOptions& options = {});

}  // namespace facepipe
