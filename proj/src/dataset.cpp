#include "gpatch/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "gpatch/error.hpp"
#include "gpatch/image_io.hpp"
#include "gpatch/rng.hpp"

namespace gpatch {
namespace {

Image resize_nearest(const Image& src, std::size_t size) {
  Image out({size, size, 3});
  for (std::size_t y = 0; y < size; ++y) {
    const std::size_t sy = y * src.dim(0) / size;
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t sx = x * src.dim(1) / size;
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = src.at(sy, sx, c);
    }
  }
  return out;
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(item);
  return out;
}

}  // namespace

Dataset load_folder_dataset(const std::filesystem::path& root,
                            const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  Dataset ds;
  ds.identifier = "folder:" + manifest.string();
  std::optional<std::size_t> resize;
  struct Entry {
    std::string path;
    long label;
    std::size_t line;
  };
  std::vector<Entry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto tab = line.find('\t');
      const std::string key = line.substr(0, tab);
      const std::string value = tab == std::string::npos ? "" : line.substr(tab + 1);
      if (key == "#classes") ds.label_map = split_commas(value);
      if (key == "#resize") resize = static_cast<std::size_t>(std::stoul(value));
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw IoError(manifest.string() + ":" + std::to_string(line_no) +
                    ": expected relative_path<TAB>label_index");
    }
    try {
      entries.push_back({line.substr(0, tab), std::stol(line.substr(tab + 1)), line_no});
    } catch (const std::exception&) {
      throw IoError(manifest.string() + ":" + std::to_string(line_no) + ": bad label '" +
                    line.substr(tab + 1) + "'");
    }
  }
  if (ds.label_map.empty()) {
    long max_label = -1;
    for (const auto& e : entries) max_label = std::max(max_label, e.label);
    for (long i = 0; i <= max_label; ++i) ds.label_map.push_back(std::to_string(i));
  }
  for (const auto& e : entries) {
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= ds.label_map.size()) {
      throw IoError(manifest.string() + ":" + std::to_string(e.line) + ": label " +
                    std::to_string(e.label) + " of " + e.path + " is out of range [0, " +
                    std::to_string(ds.label_map.size()) + ")");
    }
    const auto path = root / e.path;
    if (!std::filesystem::exists(path)) throw IoError("manifest entry missing on disk: " + path.string());
    Image image = read_image(path);
    if (resize) {
      image = resize_nearest(image, *resize);
    } else if (image.dim(0) != image.dim(1)) {
      throw IoError(path.string() + " is not square and the manifest declares no #resize policy");
    }
    if (ds.image_size == 0) ds.image_size = image.dim(0);
    if (image.dim(0) != ds.image_size) {
      throw IoError(path.string() + " is " + std::to_string(image.dim(0)) + " pixels, dataset is " +
                    std::to_string(ds.image_size));
    }
    ds.items.push_back({std::make_shared<const Image>(std::move(image)),
                        static_cast<std::size_t>(e.label), e.path});
  }
  return ds;
}

void write_folder_dataset(const Dataset& dataset, const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "images");
  std::ofstream manifest(root / "manifest.tsv");
  if (!manifest) throw IoError("cannot write manifest under " + root.string());
  manifest << "#classes\t";
  for (std::size_t i = 0; i < dataset.label_map.size(); ++i) {
    manifest << (i ? "," : "") << dataset.label_map[i];
  }
  manifest << '\n';
  for (std::size_t i = 0; i < dataset.items.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06zu.png", i);
    write_image(root / name, *dataset.items[i].image);
    manifest << name << '\t' << dataset.items[i].label << '\n';
  }
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double eval_fraction,
                                  std::uint64_t seed) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw ConfigError("eval_fraction must lie in (0, 1), got " + std::to_string(eval_fraction));
  }
  const std::size_t n = dataset.items.size();
  if (n < 2) throw ConfigError("cannot split a dataset of " + std::to_string(n) + " items");

  std::map<std::size_t, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < n; ++i) by_label[dataset.items[i].label].push_back(i);
  const bool stratify = std::all_of(by_label.begin(), by_label.end(),
                                    [](const auto& kv) { return kv.second.size() >= 2; });

  const RandomStream root(seed);
  std::vector<char> in_eval(n, 0);
  auto take = [&](std::vector<std::size_t> indices, RandomStream rng) {
    std::shuffle(indices.begin(), indices.end(), rng.engine());
    const auto want = static_cast<std::size_t>(
        std::llround(eval_fraction * static_cast<double>(indices.size())));
    const std::size_t count = std::clamp<std::size_t>(want, 1, indices.size() - 1);
    for (std::size_t i = 0; i < count; ++i) in_eval[indices[i]] = 1;
  };
  if (stratify) {
    for (const auto& [label, indices] : by_label) take(indices, root.derive("split", {label}));
  } else {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    take(all, root.derive("split"));
  }

  Dataset train, eval;
  for (Dataset* part : {&train, &eval}) {
    part->label_map = dataset.label_map;
    part->image_size = dataset.image_size;
  }
  train.identifier = dataset.identifier + "/train";
  eval.identifier = dataset.identifier + "/eval";
  for (std::size_t i = 0; i < n; ++i) {
    (in_eval[i] ? eval : train).items.push_back(dataset.items[i]);
  }
  return {std::move(train), std::move(eval)};
}

}  // namespace gpatch
