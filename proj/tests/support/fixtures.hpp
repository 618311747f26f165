#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "gpatch/dataset.hpp"
#include "gpatch/desk_victim.hpp"
#include "gpatch/evaluator.hpp"
#include "gpatch/generator.hpp"
#include "gpatch/victims.hpp"

namespace gpatch::testing {

// The checked-in tiny_desk victim.
inline const VictimModel& desk_victim() {
  static const VictimModel model = load_victim("tiny_desk", WeightsSource::from_environment());
  return model;
}

// A held-out desk corpus disjoint from the default experiment corpus.
inline const Dataset& desk_corpus() {
  static const Dataset ds = [] {
    DeskDatasetOptions o;
    o.count = 300;
    o.seed = 4242;
    return synthesize_desk_dataset(o);
  }();
  return ds;
}

// A crop of a desk image of the given class: a natural, partly adversarial patch.
inline Patch texture_patch(std::size_t label, std::size_t side, std::uint64_t seed = 99) {
  const Image src = synthesize_desk_image(label, seed, 0, 224);
  // The stripes are strongest near the ellipse centre; scan for the crop with
  // the highest local variance.
  std::size_t best_r = 0, best_c = 0;
  double best = -1.0;
  for (std::size_t r = 0; r + side <= 224; r += 8) {
    for (std::size_t c = 0; c + side <= 224; c += 8) {
      double s = 0, s2 = 0;
      for (std::size_t y = r; y < r + side; y += 2) {
        for (std::size_t x = c; x < c + side; x += 2) {
          const double v = src.at(y, x, 0) + src.at(y, x, 1) + src.at(y, x, 2);
          s += v;
          s2 += v * v;
        }
      }
      const double n = static_cast<double>((side / 2) * (side / 2));
      const double var = s2 / n - (s / n) * (s / n);
      if (var > best) {
        best = var;
        best_r = r;
        best_c = c;
      }
    }
  }
  Patch p{Image({side, side, 3}), 0.5};
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) p.pixels.at(y, x, ch) = src.at(best_r + y, best_c + x, ch);
    }
  }
  return p;
}

class ScopedTempDir {
 public:
  explicit ScopedTempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("gpatch_" + tag);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScopedTempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace gpatch::testing
