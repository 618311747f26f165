#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gpatch/tensor.hpp"
#include "gpatch/vit.hpp"

namespace gpatch {

// A victim name known to the registry and the checkpoint it stands for.
struct VictimSpec {
  std::string name;
  std::string architecture;
  std::size_t num_classes = 0;
  std::string checkpoint;
};

const std::vector<VictimSpec>& registered_victims();
const VictimSpec& find_victim_spec(const std::string& name);

// Directory holding manifest.tsv and the weight files it lists. The
// GPATCH_WEIGHTS_DIR environment variable overrides the built-in default.
struct WeightsSource {
  std::filesystem::path directory;

  static WeightsSource from_environment();
  std::filesystem::path manifest_path() const { return directory / "manifest.tsv"; }
};

// One manifest line: name<TAB>file<TAB>sha256-of-file.
struct ManifestEntry {
  std::string name;
  std::string file;
  std::string sha256;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// A frozen classifier: parameters are read-only after load.
class VictimModel {
 public:
  VictimModel(std::string name, std::shared_ptr<const VictimNetwork<float>> network);

  const std::string& name() const { return name_; }
  std::size_t num_classes() const { return network_->num_classes(); }
  std::size_t input_size() const { return network_->input_size(); }
  const VictimNetwork<float>& network() const { return *network_; }
  // Digest taken when the model was constructed.
  const std::string& load_fingerprint() const { return load_fingerprint_; }

 private:
  std::string name_;
  std::shared_ptr<const VictimNetwork<float>> network_;
  std::string load_fingerprint_;
};

VictimModel load_victim(const std::string& name, const WeightsSource& source);

// SHA-256 over every parameter's bytes in canonical order.
template <typename T>
std::string fingerprint(const VictimNetwork<T>& network);
std::string fingerprint(const VictimModel& model);

// Batched inference; rows follow the input order.
std::vector<std::vector<float>> logits(const VictimModel& model, std::span<const Image> images);

// Argmax; ties go to the lowest class index.
template <typename T>
std::size_t predict(std::span<const T> logits);

// Weight file: "GPATCHW1", u64 header length, JSON header (architecture,
// config, tensor names and shapes), then float32 little-endian values in
// canonical parameter order.
void save_weights(const std::filesystem::path& path, const VisionTransformer<float>& network);
std::shared_ptr<VictimNetwork<float>> read_weights(const std::filesystem::path& path);

}  // namespace gpatch
