#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gpatch/tensor.hpp"

namespace gpatch {

struct Sample {
  std::shared_ptr<const Image> image;
  std::size_t label = 0;
  std::string source;  // relative path or synthetic identifier
};

// Decoded {size, size, 3} images in [0,1], iterated in manifest order.
struct Dataset {
  std::vector<Sample> items;
  std::vector<std::string> label_map;
  std::size_t image_size = 0;
  std::string identifier;

  std::size_t size() const { return items.size(); }
  std::size_t num_classes() const { return label_map.size(); }
};

// Manifest: one "relative_path<TAB>label_index" record per line. Lines
// starting with '#' are comments, except the directives
//   #classes<TAB>name0,name1,...   (label names; defaults to the indices)
//   #resize<TAB>N                  (nearest-neighbour resize to N x N)
// Without a resize directive every image must already share one square size.
Dataset load_folder_dataset(const std::filesystem::path& root,
                            const std::filesystem::path& manifest);

// Writes every item as a PNG plus manifest.tsv under root.
void write_folder_dataset(const Dataset& dataset, const std::filesystem::path& root);

// Disjoint, exhaustive, deterministic under seed; stratified by label when
// every class has at least two items. Returns {train, eval}.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double eval_fraction,
                                  std::uint64_t seed);

// Parameters of the synthetic desk fixture. Each class is an oriented
// stripe texture inside a randomly sized and placed ellipse, over a cluttered
// background; colours, contrast and noise are drawn independently of the
// class so that texture is the only label signal.
struct DeskDatasetOptions {
  std::size_t count = 1000;
  std::size_t image_size = 224;
  std::uint64_t seed = 2024;
  std::size_t first_index = 0;  // for drawing disjoint corpora from one seed
};

inline constexpr std::size_t kDeskClasses = 10;

Dataset synthesize_desk_dataset(const DeskDatasetOptions& options);
// One image of the given class; deterministic in (seed, index).
Image synthesize_desk_image(std::size_t label, std::uint64_t seed, std::size_t index,
                            std::size_t image_size);
std::vector<std::string> desk_class_names();

}  // namespace gpatch
