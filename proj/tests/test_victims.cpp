#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "gpatch/desk_victim.hpp"
#include "gpatch/digest.hpp"
#include "gpatch/error.hpp"
#include "gpatch/victims.hpp"
#include "json.hpp"

namespace gpatch {
namespace {

namespace fs = std::filesystem;

class WeightsDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("gpatch_victims_" + std::string(
                                   ::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    VitConfig c = tiny_desk_architecture();
    net = std::make_unique<VisionTransformer<float>>(VisionTransformer<float>::random(c, 5));
    save_weights(dir / "tiny_desk.bin", *net);
    write_manifest(dir / "manifest.tsv",
                   {{"tiny_desk", "tiny_desk.bin", sha256_file((dir / "tiny_desk.bin").string())}});
  }
  void TearDown() override { fs::remove_all(dir); }

  fs::path dir;
  std::unique_ptr<VisionTransformer<float>> net;
};

TEST(Registry, KnowsThePinnedVictims) {
  EXPECT_EQ(find_victim_spec("tiny_desk").num_classes, 10u);
  EXPECT_EQ(find_victim_spec("vit_b16").checkpoint, "vit_base_patch16_224.augreg2_in21k_ft_in1k");
  EXPECT_EQ(find_victim_spec("vit_l16").num_classes, 1000u);
  EXPECT_EQ(find_victim_spec("swin_b16").architecture, "swin");
  try {
    find_victim_spec("resnet50");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("tiny_desk"), std::string::npos);
  }
}

TEST(Registry, EnvironmentOverridesWeightsDirectory) {
  ::setenv("GPATCH_WEIGHTS_DIR", "/some/where", 1);
  EXPECT_EQ(WeightsSource::from_environment().directory, fs::path("/some/where"));
  ::unsetenv("GPATCH_WEIGHTS_DIR");
  EXPECT_EQ(WeightsSource::from_environment().directory, fs::path(GPATCH_DEFAULT_WEIGHTS_DIR));
}

TEST_F(WeightsDir, LoadsAndMatchesTheSavedNetwork) {
  const VictimModel model = load_victim("tiny_desk", {dir});
  EXPECT_EQ(model.num_classes(), 10u);
  EXPECT_EQ(model.input_size(), 224u);
  EXPECT_EQ(model.load_fingerprint(), fingerprint(*net));
  EXPECT_EQ(fingerprint(model), fingerprint(*net));
  Image img({224, 224, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i % 17) / 16.0f;
  EXPECT_EQ(model.network().logits(img), net->logits(img));
}

TEST_F(WeightsDir, TamperedWeightsFailTheDigestCheck) {
  {
    std::fstream f(dir / "tiny_desk.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-4, std::ios::end);
    f.write("\x01\x02\x03\x04", 4);
  }
  EXPECT_THROW(load_victim("tiny_desk", {dir}), IntegrityError);
}

TEST_F(WeightsDir, MissingManifestEntryOrFileIsAnError) {
  EXPECT_THROW(load_victim("vit_b16", {dir}), IoError);
  fs::remove(dir / "tiny_desk.bin");
  EXPECT_THROW(load_victim("tiny_desk", {dir}), IoError);
  EXPECT_THROW(load_victim("tiny_desk", {dir / "nowhere"}), IoError);
}

TEST_F(WeightsDir, ArchitectureMismatchIsRejected) {
  VitConfig c = tiny_desk_architecture();
  c.num_classes = 7;
  save_weights(dir / "other.bin", VisionTransformer<float>::random(c, 1));
  write_manifest(dir / "manifest.tsv",
                 {{"tiny_desk", "other.bin", sha256_file((dir / "other.bin").string())}});
  EXPECT_THROW(load_victim("tiny_desk", {dir}), IntegrityError);
}

TEST(Fingerprint, ChangesWithAnyParameter) {
  auto net = VisionTransformer<float>::random(tiny_desk_architecture(), 2);
  const std::string before = fingerprint(net);
  EXPECT_EQ(before.size(), 64u);
  net.params().head_b[3] += 1e-6f;
  EXPECT_NE(fingerprint(net), before);
}

TEST(Predict, TiesGoToTheLowestIndex) {
  const std::vector<float> logits{0.5f, 2.0f, 2.0f, -1.0f};
  EXPECT_EQ(predict<float>(logits), 1u);
  const std::vector<double> flat(5, 0.0);
  EXPECT_EQ(predict<double>(flat), 0u);
  EXPECT_THROW(predict<float>(std::vector<float>{}), ContractError);
}

TEST(BatchedLogits, MatchSingleImageCalls) {
  auto net = std::make_shared<VisionTransformer<float>>(
      VisionTransformer<float>::random(tiny_desk_architecture(), 3));
  const VictimModel model("tiny_desk", net);
  std::vector<Image> images;
  for (int k = 0; k < 3; ++k) {
    Image img({224, 224, 3});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>((i * (k + 1)) % 13) / 12.0f;
    images.push_back(img);
  }
  const auto batched = logits(model, images);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(batched[k], net->logits(images[k]));
}

TEST(VictimInput, RejectsWrongShapeOrRange) {
  const auto net = VisionTransformer<float>::random(tiny_desk_architecture(), 4);
  EXPECT_THROW(net.logits(Image({200, 224, 3})), ContractError);
  Image img({224, 224, 3});
  img[10] = 1.5f;
  EXPECT_THROW(net.logits(img), ContractError);
}

// Fixtures written by tools/convert_timm.py from randomly initialised (and
// perturbed) timm models, with the logits PyTorch computed for three images.
class TimmReference : public ::testing::TestWithParam<const char*> {};

TEST_P(TimmReference, ForwardMatchesPyTorch) {
  const fs::path data = fs::path(GPATCH_SOURCE_DIR) / "tests" / "data";
  const std::string name = GetParam();
  for (const auto& e : read_manifest(data / "manifest.tsv")) {
    if (e.name == name) {
      EXPECT_EQ(sha256_file((data / e.file).string()), e.sha256);
    }
  }
  const auto net = read_weights(data / (name + ".bin"));
  std::ifstream in(data / (name + ".reference.json"));
  const auto ref = nlohmann::json::parse(in);
  const std::size_t side = ref.at("config").at("image_size").get<std::size_t>();
  ASSERT_EQ(net->input_size(), side);
  const auto& images = ref.at("images");
  const auto& logits = ref.at("logits");
  ASSERT_EQ(images.size(), logits.size());
  for (std::size_t n = 0; n < images.size(); ++n) {
    Image image({side, side, 3});
    const auto pixels = images[n].get<std::vector<float>>();
    ASSERT_EQ(pixels.size(), image.size());
    std::copy(pixels.begin(), pixels.end(), image.data());
    const auto got = net->logits(image);
    const auto want = logits[n].get<std::vector<double>>();
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t k = 0; k < want.size(); ++k) {
      EXPECT_NEAR(got[k], want[k], 1e-4 * std::max(1.0, std::abs(want[k]))) << name << " image " << n
                                                                            << " class " << k;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Pools, TimmReference, ::testing::Values("timm_token", "timm_avg"));

}  // namespace
}  // namespace gpatch
