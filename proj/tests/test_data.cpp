#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "gpatch/dataset.hpp"
#include "gpatch/error.hpp"
#include "gpatch/image_io.hpp"
#include "gpatch/rng.hpp"

namespace gpatch {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("gpatch_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
             "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Image solid(std::size_t size, float value) {
  Image img({size, size, 3});
  for (auto& v : img.values()) v = value;
  return img;
}

Dataset labelled(std::size_t classes, std::size_t per_class) {
  Dataset ds;
  for (std::size_t c = 0; c < classes; ++c) ds.label_map.push_back("c" + std::to_string(c));
  ds.image_size = 4;
  auto img = std::make_shared<const Image>(solid(4, 0.5f));
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < classes; ++c) {
      ds.items.push_back({img, c, "item" + std::to_string(ds.items.size())});
    }
  }
  return ds;
}

TEST(ImageIo, EightBitScaling) {
  TempDir dir;
  Rgb8 raster{1, 3, {0, 128, 255, 255, 0, 1, 10, 20, 30}};
  write_png(dir.path() / "a.png", raster);
  const Image img = read_image(dir.path() / "a.png");
  EXPECT_EQ(img.shape(), (Shape{1, 3, 3}));
  EXPECT_FLOAT_EQ(img.at(0, 0, 0), 0.0f);
  EXPECT_FLOAT_EQ(img.at(0, 0, 2), 1.0f);
  EXPECT_FLOAT_EQ(img.at(0, 0, 1), 128.0f / 255.0f);
  EXPECT_EQ(read_png(dir.path() / "a.png").pixels, raster.pixels);
}

TEST(ImageIo, QuantizeRoundsAndRoundTrips) {
  Image img({1, 2, 3});
  const float values[] = {0.0f, 1.0f, 0.5f, 0.002f, 0.998f, 0.3f};
  std::copy(std::begin(values), std::end(values), img.data());
  const Rgb8 q = quantize(img);
  EXPECT_EQ(q.pixels, (std::vector<std::uint8_t>{0, 255, 128, 1, 254, 77}));
  const Image back = dequantize(q);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_LE(std::abs(back[i] - img[i]), 0.5f / 255.0f + 1e-7f);
}

TEST(ImageIo, DecodeIsDeterministicAndDpiRoundTrips) {
  TempDir dir;
  RandomStream rng(1);
  Image img({7, 5, 3});
  for (auto& v : img.values()) v = static_cast<float>(rng.uniform());
  write_png(dir.path() / "b.png", quantize(img), 300.0);
  const Image a = read_image(dir.path() / "b.png");
  const Image b = read_image(dir.path() / "b.png");
  EXPECT_EQ(a, b);
  ASSERT_TRUE(read_png_dpi(dir.path() / "b.png").has_value());
  EXPECT_NEAR(*read_png_dpi(dir.path() / "b.png"), 300.0, 0.1);
  write_png(dir.path() / "c.png", quantize(img));
  EXPECT_FALSE(read_png_dpi(dir.path() / "c.png").has_value());
}

TEST(ImageIo, RejectsNonPng) {
  TempDir dir;
  std::ofstream(dir.path() / "x.png") << "not an image";
  EXPECT_THROW(read_image(dir.path() / "x.png"), IoError);
  EXPECT_THROW(read_image(dir.path() / "missing.png"), IoError);
}

class FolderFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    for (int i = 0; i < 10; ++i) {
      const std::string name = "img" + std::to_string(i) + ".png";
      write_image(dir.path() / name, solid(8, static_cast<float>(i) / 9.0f));
      // Reverse order in the manifest to check that iteration follows it.
      lines.insert(lines.begin(), name + "\t" + std::to_string(i % 3));
    }
  }
  fs::path write_manifest(const std::vector<std::string>& extra_front = {},
                          const std::vector<std::string>& extra_back = {}) {
    const fs::path m = dir.path() / "manifest.tsv";
    std::ofstream out(m);
    for (const auto& l : extra_front) out << l << "\n";
    for (const auto& l : lines) out << l << "\n";
    for (const auto& l : extra_back) out << l << "\n";
    return m;
  }
  TempDir dir;
  std::vector<std::string> lines;
};

TEST_F(FolderFixture, LoadsInManifestOrder) {
  const Dataset ds = load_folder_dataset(dir.path(), write_manifest({"#classes\ta,b,c"}));
  ASSERT_EQ(ds.size(), 10u);
  EXPECT_EQ(ds.num_classes(), 3u);
  EXPECT_EQ(ds.image_size, 8u);
  EXPECT_EQ(ds.items[0].source, "img9.png");
  EXPECT_EQ(ds.items[9].source, "img0.png");
  EXPECT_EQ(ds.items[0].label, 0u);
  EXPECT_FLOAT_EQ((*ds.items[0].image)[0], 1.0f);
  EXPECT_FLOAT_EQ((*ds.items[9].image)[0], 0.0f);
}

TEST_F(FolderFixture, MissingFileIsNamed) {
  try {
    load_folder_dataset(dir.path(), write_manifest({}, {"nope.png\t1"}));
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.png"), std::string::npos);
  }
}

TEST_F(FolderFixture, OutOfRangeLabelIsNamed) {
  try {
    load_folder_dataset(dir.path(), write_manifest({"#classes\ta,b,c"}, {"img1.png\t3"}));
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("img1.png"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("out of range"), std::string::npos);
  }
}

TEST_F(FolderFixture, UndecodableImageIsNamed) {
  std::ofstream(dir.path() / "bad.png") << "garbage";
  try {
    load_folder_dataset(dir.path(), write_manifest({}, {"bad.png\t0"}));
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.png"), std::string::npos);
  }
}

TEST_F(FolderFixture, ResizeDirectiveAppliesNearestNeighbour) {
  const Dataset ds = load_folder_dataset(dir.path(), write_manifest({"#resize\t16"}));
  EXPECT_EQ(ds.image_size, 16u);
  EXPECT_EQ(ds.items[0].image->shape(), (Shape{16, 16, 3}));
}

TEST(Split, EightyTwentyDisjointAndExhaustive) {
  const Dataset ds = labelled(1, 100);
  const auto [train, eval] = split(ds, 0.2, 9);
  EXPECT_EQ(train.size(), 80u);
  EXPECT_EQ(eval.size(), 20u);
  std::multiset<std::string> all;
  for (const auto& s : train.items) all.insert(s.source);
  for (const auto& s : eval.items) all.insert(s.source);
  std::multiset<std::string> expected;
  for (const auto& s : ds.items) expected.insert(s.source);
  EXPECT_EQ(all, expected);
}

TEST(Split, SameSeedSameSplit) {
  const Dataset ds = labelled(4, 20);
  const auto a = split(ds, 0.3, 5);
  const auto b = split(ds, 0.3, 5);
  const auto c = split(ds, 0.3, 6);
  auto names = [](const Dataset& d) {
    std::vector<std::string> v;
    for (const auto& s : d.items) v.push_back(s.source);
    return v;
  };
  EXPECT_EQ(names(a.second), names(b.second));
  EXPECT_NE(names(a.second), names(c.second));
}

TEST(Split, StratifiedTwoPerClass) {
  const Dataset ds = labelled(10, 10);
  const auto [train, eval] = split(ds, 0.2, 3);
  std::map<std::size_t, int> per_class;
  for (const auto& s : eval.items) ++per_class[s.label];
  ASSERT_EQ(per_class.size(), 10u);
  for (const auto& [label, n] : per_class) EXPECT_EQ(n, 2) << "class " << label;
}

TEST(Split, DegenerateInputsAreErrors) {
  EXPECT_THROW(split(labelled(1, 1), 0.5, 1), ConfigError);
  EXPECT_THROW(split(labelled(2, 5), 0.0, 1), ConfigError);
  EXPECT_THROW(split(labelled(2, 5), 1.0, 1), ConfigError);
}

TEST(DeskFixture, DeterministicBalancedAndInRange) {
  DeskDatasetOptions o;
  o.count = 40;
  o.image_size = 64;
  const Dataset a = synthesize_desk_dataset(o);
  const Dataset b = synthesize_desk_dataset(o);
  ASSERT_EQ(a.size(), 40u);
  EXPECT_EQ(a.num_classes(), kDeskClasses);
  std::map<std::size_t, int> per_class;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(*a.items[i].image, *b.items[i].image);
    ++per_class[a.items[i].label];
    for (const float v : a.items[i].image->values()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
  for (const auto& [label, n] : per_class) EXPECT_EQ(n, 4);
  o.first_index = 40;
  const Dataset c = synthesize_desk_dataset(o);
  EXPECT_NE(*a.items[0].image, *c.items[0].image);
}

TEST(DeskFixture, WrittenFolderReloadsWithinQuantisation) {
  TempDir dir;
  DeskDatasetOptions o;
  o.count = 10;
  o.image_size = 32;
  const Dataset ds = synthesize_desk_dataset(o);
  write_folder_dataset(ds, dir.path());
  const Dataset back = load_folder_dataset(dir.path(), dir.path() / "manifest.tsv");
  ASSERT_EQ(back.size(), 10u);
  EXPECT_EQ(back.label_map, ds.label_map);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(back.items[i].label, ds.items[i].label);
    for (std::size_t j = 0; j < ds.items[i].image->size(); ++j) {
      EXPECT_LE(std::abs((*back.items[i].image)[j] - (*ds.items[i].image)[j]), 0.5f / 255 + 1e-6f);
    }
  }
}

}  // namespace
}  // namespace gpatch
