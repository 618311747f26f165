#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "gpatch/digest.hpp"
#include "gpatch/error.hpp"
#include "gpatch/experiment.hpp"
#include "gpatch/image_io.hpp"
#include "support/fixtures.hpp"

namespace gpatch {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json smoke_document(const fs::path& out) {
  return json{{"victim", "tiny_desk"},
              {"dataset", {{"kind", "desk"}, {"count", 200}, {"seed", 11}}},
              {"target_class", 2},
              {"k", 0.4},
              {"patch_size", 64},
              {"root_seed", 5},
              {"output_dir", out.string()},
              {"max_train_images", 24},
              {"max_eval_images", 40},
              {"train", {{"epochs", 2}, {"batch_size", 8}, {"eval_fraction", 0.5}}},
              {"generator", {{"latent_dim", 32}, {"stage_channels", {32, 16, 16, 8, 3}}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(ExperimentConfig, DefaultsAndRoundTrip) {
  const ExperimentConfig c = parse_experiment_config(json::object());
  EXPECT_EQ(c.victim, "tiny_desk");
  EXPECT_EQ(c.train.epochs, 40u);
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 2e-4);
  EXPECT_EQ(c.train.latent_policy, LatentPolicy::fixed);
  const ExperimentConfig again = parse_experiment_config(json::parse(c.to_json().dump()));
  EXPECT_EQ(again.to_json().dump(), c.to_json().dump());
}

TEST(ExperimentConfig, UnknownKeysAndAllProblemsAreReported) {
  json doc = smoke_document("x");
  doc["epochs"] = 3;                      // belongs under train
  doc["train"]["learning_rat"] = 0.1;     // typo
  doc["train"]["eval_fraction"] = 1.5;
  doc["k"] = 0.9;
  doc["target_class"] = 10;
  doc["dataset"]["kind"] = "imagenet";
  try {
    parse_experiment_config(doc);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    for (const char* needle : {"unknown key epochs", "unknown key train.learning_rat",
                               "eval_fraction", "k must", "target_class", "dataset.kind"}) {
      EXPECT_NE(what.find(needle), std::string::npos) << needle << "\n" << what;
    }
  }
}

TEST(ExperimentConfig, TypeErrorsAreReported) {
  json doc = smoke_document("x");
  doc["train"]["epochs"] = "many";
  doc["patch_size"] = "big";
  doc["max_eval_images"] = -3;
  try {
    parse_experiment_config(doc);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.epochs"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("patch_size"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("max_eval_images must be a non-negative integer"),
              std::string::npos);
  }
}

TEST(ExperimentConfig, PinnedConfigsParse) {
  for (const char* name : {"desk_smoke.json", "desk_80.json", "vit_b16_80.json"}) {
    EXPECT_NO_THROW(load_experiment_config(fs::path(GPATCH_SOURCE_DIR) / "configs" / name)) << name;
  }
}

class TrainedRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir = new gpatch::testing::ScopedTempDir("experiment_run");
    config = new ExperimentConfig(parse_experiment_config(smoke_document(dir->path() / "a")));
    run = new TrainRun(cmd_train(*config));
  }
  static void TearDownTestSuite() {
    delete run;
    delete config;
    delete dir;
  }
  static gpatch::testing::ScopedTempDir* dir;
  static ExperimentConfig* config;
  static TrainRun* run;
};

gpatch::testing::ScopedTempDir* TrainedRun::dir = nullptr;
ExperimentConfig* TrainedRun::config = nullptr;
TrainRun* TrainedRun::run = nullptr;

TEST_F(TrainedRun, DirectoryIsSelfDescribing) {
  for (const char* f : {"config.json", "patch.png", "patch.json", "history.json", "epochs.jsonl",
                        "report.jsonl", "report.txt"}) {
    EXPECT_TRUE(fs::exists(run->directory / f)) << f;
  }
  EXPECT_EQ(load_experiment_config(run->directory / "config.json").to_json(), config->to_json());
  const PatchArtifact a = load_artifact(run->directory / "patch.png");
  EXPECT_EQ(a.metadata.victim, "tiny_desk");
  EXPECT_EQ(a.metadata.target_class, 2u);
  EXPECT_DOUBLE_EQ(a.metadata.k, 0.4);
  EXPECT_EQ(a.metadata.victim_fingerprint, gpatch::testing::desk_victim().load_fingerprint());
  EXPECT_EQ(a.metadata.tool_version, tool_version());
  EXPECT_EQ(read_rows((run->directory / "report.jsonl").string()).size(), 1u);
}

TEST_F(TrainedRun, ArtifactRoundTripIsWithinQuantisation) {
  const PatchArtifact a = load_artifact(run->directory / "patch.png");
  const Image& mem = run->result.best_patch.pixels;
  ASSERT_EQ(a.patch.pixels.shape(), mem.shape());
  for (std::size_t i = 0; i < mem.size(); ++i) {
    EXPECT_LE(std::abs(a.patch.pixels[i] - mem[i]), 1.0f / 255.0f);
  }
  // Compositing the reloaded patch stays within the same bound.
  const Image base = *gpatch::testing::desk_corpus().items[0].image;
  const Image x = compose(a.patch, base, {3, 9});
  const Image y = compose(run->result.best_patch, base, {3, 9});
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::abs(x[i] - y[i]), 1.0f / 255.0f);
}

TEST_F(TrainedRun, RerunIsByteIdentical) {
  ExperimentConfig second = *config;
  second.output_dir = (dir->path() / "b").string();
  const TrainRun again = cmd_train(second);
  EXPECT_EQ(slurp(run->directory / "patch.png"), slurp(again.directory / "patch.png"));
  EXPECT_EQ(slurp(run->directory / "history.json"), slurp(again.directory / "history.json"));
  EXPECT_EQ(read_rows((run->directory / "report.jsonl").string())[0].q, again.row.q);
}

TEST_F(TrainedRun, EvalReproducesTheStoredAsr) {
  EvalRequest request;
  request.patch = run->directory / "patch.png";
  request.report = dir->path() / "eval.jsonl";
  const EvalRow row = cmd_eval(request);
  const PatchArtifact a = load_artifact(request.patch);
  EXPECT_LE(std::abs(row.asr - a.metadata.best_epoch_asr), 0.02);
  EXPECT_EQ(read_rows(request.report->string()).size(), 1u);

  request.seed = 12345;
  const EvalRow other = cmd_eval(request);
  const double p = std::max(0.05, std::min(0.95, row.asr));
  EXPECT_LE(std::abs(other.asr - row.asr), 2 * 2.576 * std::sqrt(p * (1 - p) / row.p));
  EXPECT_EQ(read_rows(request.report->string()).size(), 2u);
}

TEST_F(TrainedRun, EvalRejectsATargetTheVictimDoesNotHave) {
  EvalRequest request;
  request.patch = run->directory / "patch.png";
  request.target = 999;
  EXPECT_THROW(cmd_eval(request), ContractError);
}

TEST_F(TrainedRun, NoiseProtocolGivesOneRowPerLevel) {
  RobustnessRequest r;
  r.protocol = Protocol::noise;
  r.input = run->directory / "patch.png";
  r.snr_db = std::vector<double>{10, 7, 5.2, 4};
  r.report = dir->path() / "noise.jsonl";
  const auto rows = cmd_robustness(r);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].condition, "snr=10dB");
  EXPECT_EQ(rows[2].condition, "snr=5.2dB");
  EXPECT_EQ(read_rows(r.report->string()).size(), 4u);
}

TEST_F(TrainedRun, ColorProtocolIdentityShiftMatchesEval) {
  RobustnessRequest r;
  r.protocol = Protocol::color;
  r.input = run->directory / "patch.png";
  r.color_shifts = std::vector<ColorShift>{ColorShift{}};
  r.report = dir->path() / "color.jsonl";
  const auto rows = cmd_robustness(r);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].q, run->row.q);
}

TEST_F(TrainedRun, BrightnessRefusesAPatchFile) {
  RobustnessRequest r;
  r.protocol = Protocol::brightness;
  r.input = run->directory / "patch.png";
  try {
    cmd_robustness(r);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("training-time"), std::string::npos);
  }
}

TEST_F(TrainedRun, ExportNearestNeighbourAtPrintSize) {
  const fs::path out = dir->path() / "print.png";
  const ExportResult r = cmd_export(run->directory / "patch.png", 300, 100, out);
  // floor(100 / 25.4 * 300) = floor(1181.1) for a 64 px patch too.
  EXPECT_EQ(r.width_px, 1181u);
  EXPECT_EQ(r.height_px, 1181u);
  EXPECT_FALSE(r.warning.has_value());
  ASSERT_TRUE(read_png_dpi(out).has_value());
  EXPECT_NEAR(*read_png_dpi(out), 300.0, 0.1);

  // Averaging each source pixel's preimage recovers the patch.
  const Rgb8 big = read_png(out);
  const Rgb8 src = read_png(run->directory / "patch.png");
  std::vector<double> sum(src.pixels.size(), 0.0), count(src.pixels.size(), 0.0);
  for (std::size_t y = 0; y < big.height; ++y) {
    const std::size_t sy = y * src.height / big.height;
    for (std::size_t x = 0; x < big.width; ++x) {
      const std::size_t sx = x * src.width / big.width;
      for (std::size_t c = 0; c < 3; ++c) {
        sum[(sy * src.width + sx) * 3 + c] += big.pixels[(y * big.width + x) * 3 + c];
        count[(sy * src.width + sx) * 3 + c] += 1;
      }
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    EXPECT_LE(std::abs(sum[i] / count[i] - src.pixels[i]), 1.0);
  }
}

TEST_F(TrainedRun, ExportWarnsBeyondA4AndRejectsBadDpi) {
  const fs::path out = dir->path() / "huge.png";
  const ExportResult r = cmd_export(run->directory / "patch.png", 20, 250, out);
  EXPECT_TRUE(r.warning.has_value());
  EXPECT_THROW(cmd_export(run->directory / "patch.png", 0, 100, out), ConfigError);
  EXPECT_THROW(cmd_export(run->directory / "patch.png", -3, 100, out), ConfigError);
}

TEST_F(TrainedRun, ComposeExplicitRandomAndLossless) {
  const fs::path image = dir->path() / "base.png";
  write_image(image, *gpatch::testing::desk_corpus().items[1].image);
  const PatchArtifact a = load_artifact(run->directory / "patch.png");
  const Image base = read_image(image);

  const fs::path o1 = dir->path() / "c1.png";
  EXPECT_EQ(cmd_compose(run->directory / "patch.png", image, Placement{0, 0}, 0, o1),
            (Placement{0, 0}));
  const Image c1 = read_image(o1);
  EXPECT_EQ(c1, compose(a.patch, base, {0, 0}));
  EXPECT_EQ(c1.at(0, 0, 0), a.patch.pixels.at(0, 0, 0));

  const fs::path o2 = dir->path() / "c2.png", o3 = dir->path() / "c3.png";
  const Placement p2 = cmd_compose(run->directory / "patch.png", image, std::nullopt, 9, o2);
  const Placement p3 = cmd_compose(run->directory / "patch.png", image, std::nullopt, 9, o3);
  EXPECT_EQ(p2, p3);
  EXPECT_EQ(slurp(o2), slurp(o3));

  const fs::path small = dir->path() / "small.png";
  write_image(small, Image({32, 32, 3}));
  EXPECT_THROW(cmd_compose(run->directory / "patch.png", small, std::nullopt, 1, o3),
               ContractError);
}

TEST_F(TrainedRun, TamperedPatchIsDetected) {
  const fs::path copy_dir = dir->path() / "tamper";
  fs::create_directories(copy_dir);
  fs::copy_file(run->directory / "patch.png", copy_dir / "patch.png");
  fs::copy_file(run->directory / "patch.json", copy_dir / "patch.json");
  Rgb8 r = read_png(copy_dir / "patch.png");
  r.pixels[0] ^= 1;
  write_png(copy_dir / "patch.png", r);
  EXPECT_THROW(load_artifact(copy_dir / "patch.png"), IntegrityError);
}

TEST(ColorProtocol, FullRangePatchNeedsALowerK) {
  gpatch::testing::ScopedTempDir dir("color_guard");
  PatchArtifact a;
  a.patch = Patch{Image({32, 32, 3}), 0.5};
  for (std::size_t i = 0; i < a.patch.pixels.size(); ++i) a.patch.pixels[i] = (i % 2) ? 1.0f : 0.0f;
  a.metadata.k = 0.5;
  a.metadata.height = a.metadata.width = 32;
  a.metadata.victim = "tiny_desk";
  a.metadata.num_classes = 10;
  a.metadata.config = parse_experiment_config(smoke_document(dir.path())).to_json();
  save_artifact(dir.path() / "patch.png", a);
  RobustnessRequest r;
  r.protocol = Protocol::color;
  r.input = dir.path() / "patch.png";
  r.color_shifts = std::vector<ColorShift>{ColorShift{{0.2, 0, 0}}};
  try {
    cmd_robustness(r);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("smaller k"), std::string::npos);
  }
}

}  // namespace
}  // namespace gpatch
