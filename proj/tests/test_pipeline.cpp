#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "facepipe/error.hpp"
#include "facepipe/pipeline.hpp"
#include "facepipe/ply.hpp"

using namespace facepipe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

PipelineConfig small_config() {
  PipelineConfig c;
  c.toy_model.vertices = 2000;
  c.toy_model.shape_dim = 10;
  c.toy_model.expression_dim = 10;
  c.toy_model.seed = 3;
  return c;
}

const MorphableModel& small_model() {
  static const MorphableModel m = load_morphable_model(small_config());
  return m;
}

PointCloud subject_scan(std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p = ModelParams::zero(small_model());
  for (Eigen::Index i = 0; i < p.alpha.size(); ++i) p.alpha(i) = rng.uniform(-1, 1);
  return synthesize(small_model(), p);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> names_in(const fs::path& dir, const std::string& ext) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ext) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("facepipe_pipe_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_ / "in");
  }
  void TearDown() override { fs::remove_all(root_); }

  CommandOptions quiet() { return {1, &log_}; }

  fs::path root_;
  std::ostringstream log_;
};

}  // namespace

TEST(Config, JsonRoundTrip) {
  PipelineConfig c = small_config();
  c.icp.max_iterations = 17;
  c.render.depth_window = std::make_pair(-80.0, 10.0);
  c.embedding.backend = "external";
  c.matching.pca_mode = "gallery";
  override_seed(c, 99);
  const PipelineConfig back = PipelineConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.augment.seed, 99u);
}

TEST(Config, DefaultsAndRejections) {
  const PipelineConfig d = PipelineConfig::from_json(json::object());
  EXPECT_EQ(d.to_json(), PipelineConfig{}.to_json());
  EXPECT_THROW(PipelineConfig::from_json({{"render", {{"median_kernel", 4}}}}), ContractViolation);
  EXPECT_THROW(PipelineConfig::from_json({{"embedding", {{"backend", "cnn"}}}}), ContractViolation);
  EXPECT_THROW(PipelineConfig::from_json({{"icp", {{"max_iterations", "many"}}}}), FormatError);
}

TEST(Labels, SubjectIsBeforeLastUnderscore) {
  auto l = parse_label("dir/s01_a.ply");
  ASSERT_TRUE(l);
  EXPECT_EQ(l->subject, "s01");
  EXPECT_EQ(l->scan, "a");
  l = parse_label("p_q_r-expr03.ply");
  ASSERT_TRUE(l);
  EXPECT_EQ(l->subject, "p_q");
  EXPECT_FALSE(parse_label("noscan.ply"));
  EXPECT_FALSE(parse_label("_x.ply"));
  EXPECT_FALSE(parse_label("x_.ply"));
}

TEST_F(PipelineTest, PreprocessOneScan) {
  const auto t = RigidTransform::from_euler_zyx(0.05, -0.04, 0.02, Vec3(2, -3, 1));
  save_ply(apply_transform(subject_scan(1), t), root_ / "in" / "s01_a.ply");
  EXPECT_EQ(cmd_preprocess(root_ / "in", root_ / "out", small_config(), quiet()), 0);
  EXPECT_EQ(names_in(root_ / "out", ".ply"), std::vector<std::string>{"s01_a.ply"});
  EXPECT_TRUE(fs::exists(root_ / "out" / "resolved_config.json"));
}

TEST_F(PipelineTest, PreprocessReferenceStaysPut) {
  const PointCloud ref = load_reference(small_config());
  save_ply(ref, root_ / "in" / "ref_0.ply");
  ASSERT_EQ(cmd_preprocess(root_ / "in", root_ / "out", small_config(), quiet()), 0);
  const PointCloud raw = load_ply(root_ / "in" / "ref_0.ply");
  const PointCloud in = crop_sphere(raw, detect_nose_tip(raw), kDefaultCropRadius);
  const PointCloud out = load_ply(root_ / "out" / "ref_0.ply");
  ASSERT_EQ(in.size(), out.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) worst = std::max(worst, (in[i] - out[i]).norm());
  EXPECT_LT(worst, 0.1);
}

TEST_F(PipelineTest, EmptyInputIsFatal) {
  try {
    cmd_preprocess(root_ / "in", root_ / "out", small_config(), quiet());
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no inputs"), std::string::npos);
  }
}

TEST_F(PipelineTest, PerItemFailureGivesExitOne) {
  save_ply(subject_scan(2), root_ / "in" / "s01_a.ply");
  std::vector<Vec3> flat;
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) flat.emplace_back(x, y, 0.0);
  save_ply(PointCloud(flat), root_ / "in" / "s02_a.ply");
  EXPECT_EQ(cmd_preprocess(root_ / "in", root_ / "out", small_config(), quiet()), 1);
  EXPECT_TRUE(fs::exists(root_ / "out" / "s01_a.ply"));
  EXPECT_NE(log_.str().find("s02_a.ply"), std::string::npos);
}

TEST_F(PipelineTest, AugmentCountsAndDeterminism) {
  std::uint64_t seed = 100;
  for (const char* s : {"s01", "s02"})
    for (const char* k : {"a", "b"}) save_ply(subject_scan(seed++), root_ / "in" / (std::string(s) + "_" + k + ".ply"));
  PipelineConfig c = small_config();
  override_seed(c, 5);
  ASSERT_EQ(cmd_augment(root_ / "in", root_ / "out1", c, quiet()), 0);
  ASSERT_EQ(cmd_augment(root_ / "in", root_ / "out2", c, quiet()), 0);
  const auto files = names_in(root_ / "out1", ".ply");
  // Per subject: 25 expressions from the first scan, 10 poses per scan.
  EXPECT_EQ(files.size(), 90u);
  const json manifest = json::parse(slurp(root_ / "out1" / "manifest.json"));
  EXPECT_EQ(manifest["entries"].size(), 90u);
  EXPECT_EQ(slurp(root_ / "out1" / "manifest.json"), slurp(root_ / "out2" / "manifest.json"));
  for (const auto& f : files) EXPECT_EQ(slurp(root_ / "out1" / f), slurp(root_ / "out2" / f)) << f;
}

TEST_F(PipelineTest, AugmentZeroPlan) {
  save_ply(subject_scan(3), root_ / "in" / "s01_a.ply");
  PipelineConfig c = small_config();
  c.augment.expressions_per_subject = 0;
  c.augment.poses_per_scan = 0;
  ASSERT_EQ(cmd_augment(root_ / "in", root_ / "out", c, quiet()), 0);
  EXPECT_TRUE(names_in(root_ / "out", ".ply").empty());
  EXPECT_TRUE(json::parse(slurp(root_ / "out" / "manifest.json"))["entries"].empty());
}

TEST_F(PipelineTest, RenderWithAndWithoutPatches) {
  save_ply(load_reference(small_config()), root_ / "in" / "s01_a.ply");
  ASSERT_EQ(cmd_render(root_ / "in", root_ / "plain", small_config(), false, quiet()), 0);
  EXPECT_EQ(names_in(root_ / "plain", ".pgm").size(), 1u);
  ASSERT_EQ(cmd_render(root_ / "in", root_ / "patched", small_config(), true, quiet()), 0);
  ASSERT_EQ(cmd_render(root_ / "in", root_ / "again", small_config(), true, quiet()), 0);
  const auto names = names_in(root_ / "patched", ".pgm");
  EXPECT_EQ(names.size(), 11u);
  for (const auto& n : names) EXPECT_EQ(slurp(root_ / "patched" / n), slurp(root_ / "again" / n)) << n;
  const DepthMap m = import_pgm(root_ / "plain" / "s01_a.pgm");
  EXPECT_EQ(m.width(), 224);
  EXPECT_EQ(m.height(), 224);
}

TEST_F(PipelineTest, EvaluateSelfMatch) {
  fs::create_directories(root_ / "gallery");
  for (int s = 0; s < 4; ++s) {
    const std::string id = "s0" + std::to_string(s);
    export_pgm(render_for_embedding(subject_scan(10 + s), small_config().render), root_ / "gallery" / (id + "_a.pgm"));
  }
  ASSERT_EQ(cmd_evaluate(root_ / "gallery", root_ / "gallery", small_config(), root_ / "report", quiet()), 0);
  const json summary = json::parse(slurp(root_ / "report" / "summary.json"));
  EXPECT_EQ(summary["rank1"].get<double>(), 1.0);
  for (const char* f : {"cmc.csv", "roc.csv", "matches.csv", "resolved_config.json"})
    EXPECT_TRUE(fs::exists(root_ / "report" / f)) << f;
}

TEST_F(PipelineTest, EvaluateProbeWithUnknownSubject) {
  fs::create_directories(root_ / "gallery");
  fs::create_directories(root_ / "probe");
  for (int s = 0; s < 3; ++s)
    export_pgm(render_for_embedding(subject_scan(20 + s), small_config().render),
               root_ / "gallery" / ("s0" + std::to_string(s) + "_a.pgm"));
  export_pgm(render_for_embedding(subject_scan(30), small_config().render), root_ / "probe" / "s09_a.pgm");
  try {
    cmd_evaluate(root_ / "gallery", root_ / "probe", small_config(), root_ / "report", quiet());
    FAIL() << "expected AccountingError";
  } catch (const AccountingError& e) {
    EXPECT_NE(std::string(e.what()).find("s09_a.pgm"), std::string::npos);
  }
}

TEST_F(PipelineTest, CliExitCodes) {
  const std::string cli = FACEPIPE_CLI_PATH;
  const std::string sink = " >" + (root_ / "log.txt").string() + " 2>&1";
  auto run = [&](const std::string& args) {
    const int status = std::system((cli + " " + args + sink).c_str());
    return WEXITSTATUS(status);
  };
  std::ofstream(root_ / "c.json") << small_config().to_json().dump();
  save_ply(load_reference(small_config()), root_ / "in" / "s01_a.ply");
  const std::string cfg = " --config " + (root_ / "c.json").string();
  EXPECT_EQ(run("render" + cfg + " --input " + (root_ / "in").string() + " --output " + (root_ / "maps").string()), 0);
  EXPECT_TRUE(fs::exists(root_ / "maps" / "s01_a.pgm"));
  fs::create_directories(root_ / "empty");
  EXPECT_EQ(run("preprocess" + cfg + " --input " + (root_ / "empty").string() + " --output " +
                (root_ / "x").string()),
            2);
  EXPECT_NE(run("bogus"), 0);
}
