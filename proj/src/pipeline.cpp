#include "facepipe/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "facepipe/embedding.hpp"
#include "facepipe/error.hpp"
#include "facepipe/matching.hpp"
#include "facepipe/ply.hpp"

namespace facepipe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

void read_path(const json& j, const char* key, fs::path& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<std::string>();
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j) {
  PipelineConfig c;
  try {
    read_path(j, "reference_model_path", c.reference_model_path);
    read_path(j, "morphable_model_path", c.morphable_model_path);
    read_field(j, "seed", c.seed);
    c.augment.seed = c.seed;
    if (auto t = j.find("toy_model"); t != j.end()) {
      read_field(*t, "vertices", c.toy_model.vertices);
      read_field(*t, "shape_dim", c.toy_model.shape_dim);
      read_field(*t, "expression_dim", c.toy_model.expression_dim);
      read_field(*t, "seed", c.toy_model.seed);
    }
    if (auto t = j.find("icp"); t != j.end()) {
      read_field(*t, "max_iterations", c.icp.max_iterations);
      read_field(*t, "convergence_eps", c.icp.convergence_eps);
      read_field(*t, "rejection_multiplier", c.icp.rejection_multiplier);
      read_field(*t, "max_correspondences", c.icp.max_correspondences);
    }
    if (auto t = j.find("fit"); t != j.end()) {
      read_field(*t, "max_iterations", c.fit.max_iterations);
      read_field(*t, "convergence_eps", c.fit.convergence_eps);
      read_field(*t, "ridge", c.fit.ridge);
      read_field(*t, "rejection_multiplier", c.fit.rejection_multiplier);
    }
    if (auto t = j.find("render"); t != j.end()) {
      read_field(*t, "crop_radius", c.render.params.crop_radius);
      read_field(*t, "output_size", c.render.params.output_size);
      read_field(*t, "embedding_size", c.render.embedding_size);
      read_field(*t, "median_kernel", c.render.median_kernel);
      if (auto w = t->find("depth_window"); w != t->end() && !w->is_null()) {
        if (!w->is_array() || w->size() != 2) throw FormatError("render.depth_window must be [lo, hi]");
        c.render.depth_window = std::make_pair((*w)[0].get<double>(), (*w)[1].get<double>());
      }
    }
    if (auto t = j.find("augment"); t != j.end()) {
      read_field(*t, "expressions_per_subject", c.augment.expressions_per_subject);
      read_field(*t, "poses_per_scan", c.augment.poses_per_scan);
      read_field(*t, "patch_variants_per_scan", c.augment.patch_variants_per_scan);
      read_field(*t, "angle_bound", c.augment.angle_bound);
      read_field(*t, "translation_bound", c.augment.translation_bound);
      read_field(*t, "patch_count", c.augment.patch_count);
      read_field(*t, "patch_size", c.augment.patch_size);
      read_field(*t, "seed", c.augment.seed);
      read_field(*t, "patch_augmented_scans", c.patch_augmented_scans);
    }
    if (auto t = j.find("embedding"); t != j.end()) {
      read_field(*t, "backend", c.embedding.backend);
      read_field(*t, "dimension", c.embedding.dimension);
      read_path(*t, "training_dir", c.embedding.training_dir);
      read_path(*t, "feature_dir", c.embedding.feature_dir);
      read_field(*t, "pca_variance_target", c.embedding.pca_variance_target);
    }
    if (auto t = j.find("matching"); t != j.end()) {
      read_field(*t, "pca_mode", c.matching.pca_mode);
      read_field(*t, "max_rank", c.matching.max_rank);
      read_field(*t, "roc_thresholds", c.matching.roc_thresholds);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

json PipelineConfig::to_json() const {
  json j;
  j["reference_model_path"] = reference_model_path.string();
  j["morphable_model_path"] = morphable_model_path.string();
  j["seed"] = seed;
  j["toy_model"] = {{"vertices", toy_model.vertices},
                    {"shape_dim", toy_model.shape_dim},
                    {"expression_dim", toy_model.expression_dim},
                    {"seed", toy_model.seed}};
  j["icp"] = {{"max_iterations", icp.max_iterations},
              {"convergence_eps", icp.convergence_eps},
              {"rejection_multiplier", icp.rejection_multiplier},
              {"max_correspondences", icp.max_correspondences}};
  j["fit"] = {{"max_iterations", fit.max_iterations},
              {"convergence_eps", fit.convergence_eps},
              {"ridge", fit.ridge},
              {"rejection_multiplier", fit.rejection_multiplier}};
  j["render"] = {{"crop_radius", render.params.crop_radius},
                 {"output_size", render.params.output_size},
                 {"embedding_size", render.embedding_size},
                 {"median_kernel", render.median_kernel},
                 {"depth_window", render.depth_window ? json{render.depth_window->first, render.depth_window->second}
                                                     : json(nullptr)}};
  j["augment"] = {{"expressions_per_subject", augment.expressions_per_subject},
                  {"poses_per_scan", augment.poses_per_scan},
                  {"patch_variants_per_scan", augment.patch_variants_per_scan},
                  {"angle_bound", augment.angle_bound},
                  {"translation_bound", augment.translation_bound},
                  {"patch_count", augment.patch_count},
                  {"patch_size", augment.patch_size},
                  {"seed", augment.seed},
                  {"patch_augmented_scans", patch_augmented_scans}};
  j["embedding"] = {{"backend", embedding.backend},
                    {"dimension", embedding.dimension},
                    {"training_dir", embedding.training_dir.string()},
                    {"feature_dir", embedding.feature_dir.string()},
                    {"pca_variance_target", embedding.pca_variance_target}};
  j["matching"] = {{"pca_mode", matching.pca_mode},
                   {"max_rank", matching.max_rank},
                   {"roc_thresholds", matching.roc_thresholds}};
  return j;
}

void PipelineConfig::validate() const {
  icp.validate();
  render.params.validate();
  augment.validate();
  if (render.embedding_size < 2) throw ContractViolation("config: render.embedding_size must be >= 2");
  if (render.median_kernel < 3 || render.median_kernel % 2 == 0)
    throw ContractViolation("config: render.median_kernel must be odd and >= 3");
  if (embedding.backend != "baseline" && embedding.backend != "external")
    throw ContractViolation("config: embedding.backend must be 'baseline' or 'external'");
  if (embedding.dimension < 1) throw ContractViolation("config: embedding.dimension must be >= 1");
  if (matching.pca_mode != "union" && matching.pca_mode != "gallery" && matching.pca_mode != "none")
    throw ContractViolation("config: matching.pca_mode must be union, gallery or none");
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  return PipelineConfig::from_json(j);
}

void override_seed(PipelineConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.augment.seed = seed;
}

std::optional<ScanLabel> parse_label(const fs::path& file) {
  const std::string stem = file.stem().string();
  const auto us = stem.rfind('_');
  if (us == std::string::npos || us == 0 || us + 1 == stem.size()) return std::nullopt;
  return ScanLabel{stem.substr(0, us), stem.substr(us + 1)};
}

MorphableModel load_morphable_model(const PipelineConfig& config) {
  if (!config.morphable_model_path.empty()) return load_model(config.morphable_model_path);
  const auto& t = config.toy_model;
  return make_toy_model(t.vertices, t.shape_dim, t.expression_dim, t.seed);
}

PointCloud load_reference(const PipelineConfig& config) {
  if (!config.reference_model_path.empty()) return load_ply(config.reference_model_path);
  const MorphableModel model = load_morphable_model(config);
  return synthesize(model, ModelParams::zero(model));
}

DepthMap render_for_embedding(const PointCloud& aligned, const RenderConfig& config) {
  DepthMap map = median_filter(render_depth(aligned, config.params), config.median_kernel);
  map = config.depth_window ? normalize_window(map, config.depth_window->first, config.depth_window->second)
                            : normalize(map);
  return resize(map, config.embedding_size);
}

namespace {

class Logger {
 public:
  explicit Logger(const CommandOptions& options) : out_(options.log ? *options.log : std::cerr) {}
  void line(const std::string& s) {
    std::lock_guard lock(mutex_);
    out_ << s << '\n';
    out_.flush();
  }

 private:
  std::ostream& out_;
  std::mutex mutex_;
};

int worker_count(const CommandOptions& options) {
  if (options.workers > 0) return options.workers;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

// Runs fn(i) for i in [0, n) on a pool. fn must not throw.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), n);
  if (count <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < count; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::vector<fs::path> list_files(const fs::path& dir, const std::string& extension) {
  if (!fs::is_directory(dir)) throw IoError("input directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == extension) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("no inputs: no " + extension + " files in " + dir.string());
  return files;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_resolved_config(const fs::path& dir, const PipelineConfig& config) {
  write_text(dir / "resolved_config.json", config.to_json().dump(2) + "\n");
}

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

std::string exact(double v) { return format("%.17g", v); }

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

int summarize(Logger& log, const std::string& command, std::size_t total, const std::vector<std::string>& failures) {
  log.line(format("%s: %zu ok, %zu failed", command.c_str(), total - failures.size(), failures.size()));
  for (const auto& f : failures) log.line("  failed: " + f);
  return failures.empty() ? 0 : 1;
}

}  // namespace

int cmd_preprocess(const fs::path& input_dir, const fs::path& output_dir, const PipelineConfig& config,
                   const CommandOptions& options) {
  config.validate();
  Logger log(options);
  const auto files = list_files(input_dir, ".ply");
  fs::create_directories(output_dir);
  write_resolved_config(output_dir, config);
  const ReferenceFace reference(load_reference(config));

  std::vector<std::string> failure(files.size());
  parallel_for(files.size(), worker_count(options), [&](std::size_t i) {
    const std::string name = files[i].filename().string();
    try {
      const PreprocessResult r =
          preprocess(load_ply(files[i]), reference, config.icp, config.render.params.crop_radius);
      save_ply(r.aligned, output_dir / files[i].filename());
      log.line(format("preprocess %s: rmse=%.6f mm iterations=%d converged=%s", name.c_str(), r.icp.rmse,
                      r.icp.iterations_used, r.icp.converged ? "yes" : "no"));
    } catch (const std::exception& e) {
      failure[i] = name + ": " + e.what();
      log.line("preprocess " + name + ": FAILED: " + e.what());
    }
  });
  std::vector<std::string> failures;
  for (auto& f : failure)
    if (!f.empty()) failures.push_back(std::move(f));
  return summarize(log, "preprocess", files.size(), failures);
}

int cmd_augment(const fs::path& input_dir, const fs::path& output_dir, const PipelineConfig& config,
                const CommandOptions& options) {
  config.validate();
  Logger log(options);
  const auto files = list_files(input_dir, ".ply");
  fs::create_directories(output_dir);
  write_resolved_config(output_dir, config);

  // subject -> scans ordered by scan id; the first is the expression source.
  std::map<std::string, std::vector<std::pair<std::string, fs::path>>> subjects;
  std::vector<std::string> failures;
  for (const auto& f : files) {
    if (auto label = parse_label(f)) subjects[label->subject].emplace_back(label->scan, f);
    else failures.push_back(f.filename().string() + ": name is not <subject>_<scan>.ply");
  }
  for (auto& [_, scans] : subjects) std::sort(scans.begin(), scans.end());
  std::vector<std::string> subject_ids;
  for (const auto& [id, _] : subjects) subject_ids.push_back(id);

  const MorphableModel model = load_morphable_model(config);
  std::vector<json> entries(subject_ids.size(), json::array());
  std::vector<std::string> subject_failure(subject_ids.size());

  parallel_for(subject_ids.size(), worker_count(options), [&](std::size_t s) {
    const std::string& subject = subject_ids[s];
    const std::uint64_t subject_seed = config.augment.seed ^ static_cast<std::uint64_t>(s);
    try {
      const auto& scans = subjects.at(subject);
      for (std::size_t k = 0; k < scans.size(); ++k) {
        const auto& [scan_id, path] = scans[k];
        AugmentPlan plan = config.augment;
        plan.seed = k == 0 ? subject_seed : mix_seed(subject_seed, k);
        if (k != 0) plan.expressions_per_subject = 0;
        const PointCloud scan = load_ply(path);
        const auto outputs = augment_subject(scan, model, plan, config.fit);

        int expr = 0, pose = 0;
        for (const AugmentedCloud& a : outputs) {
          const bool is_expr = a.kind == AugmentedCloud::Kind::Expression;
          const std::string file = format("%s_%s-%s%02d.ply", subject.c_str(), scan_id.c_str(),
                                          is_expr ? "expr" : "pose", is_expr ? expr : pose);
          save_ply(a.cloud, output_dir / file);
          json e = {{"file", file},
                    {"subject", subject},
                    {"source", path.filename().string()},
                    {"kind", to_string(a.kind)},
                    {"index", is_expr ? expr : pose},
                    {"seed", plan.seed}};
          if (is_expr) {
            e["beta"] = std::vector<double>(a.beta.data(), a.beta.data() + a.beta.size());
          } else {
            const Vec3 angles = a.transform.euler_zyx() * (180.0 / std::numbers::pi);
            e["angles_deg"] = {angles.x(), angles.y(), angles.z()};
            const Vec3& t = a.transform.translation();
            e["translation"] = {t.x(), t.y(), t.z()};
          }
          entries[s].push_back(std::move(e));
          (is_expr ? expr : pose)++;
        }
        log.line(format("augment %s: %d expression, %d pose outputs", path.filename().string().c_str(), expr, pose));
      }
    } catch (const std::exception& e) {
      subject_failure[s] = "subject " + subject + ": " + e.what();
      log.line("augment subject " + subject + ": FAILED: " + e.what());
    }
  });

  json manifest = {{"seed", config.augment.seed}, {"entries", json::array()}};
  for (auto& list : entries)
    for (auto& e : list) manifest["entries"].push_back(std::move(e));
  write_text(output_dir / "manifest.json", manifest.dump(2) + "\n");
  for (auto& f : subject_failure)
    if (!f.empty()) failures.push_back(std::move(f));
  return summarize(log, "augment", files.size(), failures);
}

int cmd_render(const fs::path& input_dir, const fs::path& output_dir, const PipelineConfig& config, bool patches,
               const CommandOptions& options) {
  config.validate();
  Logger log(options);
  const auto files = list_files(input_dir, ".ply");
  fs::create_directories(output_dir);
  write_resolved_config(output_dir, config);

  std::vector<std::string> failure(files.size());
  parallel_for(files.size(), worker_count(options), [&](std::size_t i) {
    const std::string stem = files[i].stem().string();
    try {
      const DepthMap map = render_for_embedding(load_ply(files[i]), config.render);
      export_pgm(map, output_dir / (stem + ".pgm"));
      int variants = 0;
      const bool augmented = stem.find("-expr") != std::string::npos || stem.find("-pose") != std::string::npos;
      if (patches && (config.patch_augmented_scans || !augmented)) {
        Rng rng(mix_seed(config.seed, name_hash(stem)));
        for (; variants < config.augment.patch_variants_per_scan; ++variants) {
          const DepthMap patched = apply_patches(map, rng, config.augment.patch_count, config.augment.patch_size);
          export_pgm(patched, output_dir / format("%s-patch%02d.pgm", stem.c_str(), variants));
        }
      }
      log.line(format("render %s: %zu valid pixels, %d patch variants", files[i].filename().string().c_str(),
                      map.valid_count(), variants));
    } catch (const std::exception& e) {
      failure[i] = files[i].filename().string() + ": " + e.what();
      log.line("render " + files[i].filename().string() + ": FAILED: " + e.what());
    }
  });
  std::vector<std::string> failures;
  for (auto& f : failure)
    if (!f.empty()) failures.push_back(std::move(f));
  return summarize(log, "render", files.size(), failures);
}

namespace {

struct LabeledMap {
  std::string name;
  std::string subject;
  DepthMap map;
  std::string bytes;  // raw PGM file contents
};

std::vector<LabeledMap> load_maps(const fs::path& dir, bool need_labels) {
  std::vector<LabeledMap> out;
  for (const auto& path : list_files(dir, ".pgm")) {
    LabeledMap m;
    m.name = path.filename().string();
    if (auto label = parse_label(path)) m.subject = label->subject;
    else if (need_labels) throw FormatError("map " + m.name + " is not named <subject>_<scan>.pgm");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    m.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    m.map = decode_pgm(m.bytes);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

int cmd_evaluate(const fs::path& gallery_dir, const fs::path& probe_dir, const PipelineConfig& config,
                 const fs::path& report_dir, const CommandOptions& options) {
  config.validate();
  Logger log(options);
  const auto gallery_maps = load_maps(gallery_dir, true);
  const auto probe_maps = load_maps(probe_dir, true);
  fs::create_directories(report_dir);
  write_resolved_config(report_dir, config);

  std::unique_ptr<EmbeddingBackend> backend;
  std::unique_ptr<ExternalBackend> external;
  if (config.embedding.backend == "external") {
    external = external_backend(config.embedding.feature_dir, 0);
  } else {
    std::vector<DepthMap> training;
    if (config.embedding.training_dir.empty()) {
      for (const auto& g : gallery_maps) training.push_back(g.map);
    } else {
      for (auto& m : load_maps(config.embedding.training_dir, false)) training.push_back(std::move(m.map));
    }
    const int d = std::min<int>(config.embedding.dimension, static_cast<int>(training.size()) - 1);
    backend = baseline_train(training, d);
    log.line(format("evaluate: baseline backend trained on %zu maps, dimension %d", training.size(), d));
  }

  auto embed_all = [&](const std::vector<LabeledMap>& maps) {
    std::vector<FeatureVector> out(maps.size());
    std::vector<std::string> errors(maps.size());
    parallel_for(maps.size(), worker_count(options), [&](std::size_t i) {
      try {
        out[i] = sqrt_normalize(external ? external->lookup(sha256_hex(maps[i].bytes)) : backend->embed(maps[i].map));
      } catch (const std::exception& e) {
        errors[i] = maps[i].name + ": " + e.what();
      }
    });
    for (const auto& e : errors)
      if (!e.empty()) throw LookupError("evaluate: embedding failed for " + e);
    return out;
  };
  std::vector<FeatureVector> gallery_features = embed_all(gallery_maps);
  std::vector<FeatureVector> probe_features = embed_all(probe_maps);

  int components = 0;
  std::vector<FeatureVector> fit_set;
  if (config.matching.pca_mode != "none") {
    fit_set = gallery_features;
    if (config.matching.pca_mode == "union")
      fit_set.insert(fit_set.end(), probe_features.begin(), probe_features.end());
  }
  const int cap = static_cast<int>(fit_set.size()) - 1;
  if (cap >= 1) {
    const PcaModel pca = pca_fit_variance(fit_set, config.embedding.pca_variance_target, cap);
    components = static_cast<int>(pca.output_dim());
    for (auto& f : gallery_features) f = pca_transform(pca, f);
    for (auto& f : probe_features) f = pca_transform(pca, f);
    log.line(format("evaluate: PCA (%s) kept %d components", config.matching.pca_mode.c_str(), components));
  }

  Gallery gallery;
  for (std::size_t i = 0; i < gallery_maps.size(); ++i) gallery.enroll(gallery_maps[i].subject, gallery_features[i]);

  std::vector<ProbeResult> results(probe_maps.size());
  std::vector<std::string> errors(probe_maps.size());
  parallel_for(probe_maps.size(), worker_count(options), [&](std::size_t i) {
    try {
      results[i] = {probe_maps[i].name, probe_maps[i].subject, identify(probe_features[i], gallery)};
    } catch (const std::exception& e) {
      errors[i] = probe_maps[i].name + ": " + e.what();
    }
  });
  for (const auto& e : errors)
    if (!e.empty()) throw Error("evaluate: identification failed for " + e);

  const std::size_t max_rank = config.matching.max_rank ? config.matching.max_rank : gallery.size();
  const std::vector<double> curve = cmc(results, max_rank);

  std::vector<double> genuine, impostor;
  std::ostringstream matches;
  matches << "probe,true_id,rank,top1_id,top1_distance\n";
  for (const ProbeResult& r : results) {
    for (const Match& m : r.matches) (m.subject_id == r.true_id ? genuine : impostor).push_back(m.distance);
    matches << r.probe_name << ',' << r.true_id << ',' << rank_of(r) << ',' << r.matches.front().subject_id << ','
            << exact(r.matches.front().distance) << '\n';
  }

  std::ostringstream cmc_csv;
  cmc_csv << "rank,accuracy\n";
  for (std::size_t r = 0; r < curve.size(); ++r) cmc_csv << r + 1 << ',' << exact(curve[r]) << '\n';
  std::ostringstream roc_csv;
  roc_csv << "far,vr\n";
  if (!genuine.empty() && !impostor.empty()) {
    for (const RocPoint& p : roc(genuine, impostor, config.matching.roc_thresholds))
      roc_csv << exact(p.far) << ',' << exact(p.vr) << '\n';
  }

  const double rank1 = curve.front();
  const double rank2 = curve[std::min<std::size_t>(1, curve.size() - 1)];
  const json summary = {{"gallery", gallery.size()},      {"probes", results.size()},
                        {"backend", config.embedding.backend}, {"pca_components", components},
                        {"rank1", rank1},                  {"rank2", rank2}};
  write_text(report_dir / "cmc.csv", cmc_csv.str());
  write_text(report_dir / "roc.csv", roc_csv.str());
  write_text(report_dir / "matches.csv", matches.str());
  write_text(report_dir / "summary.json", summary.dump(2) + "\n");
  log.line(format("evaluate: %zu probes vs %zu gallery entries, rank-1 %.4f, rank-2 %.4f", results.size(),
                  gallery.size(), rank1, rank2));
  return 0;
}

}  // namespace facepipe
