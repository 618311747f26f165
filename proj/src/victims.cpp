#include "gpatch/victims.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "gpatch/digest.hpp"
#include "gpatch/error.hpp"

namespace gpatch {
namespace {

constexpr char kWeightsMagic[8] = {'G', 'P', 'A', 'T', 'C', 'H', 'W', '1'};

nlohmann::json vit_config_json(const VitConfig& c) {
  return {{"image_size", c.image_size}, {"patch_size", c.patch_size},
          {"dim", c.dim},               {"depth", c.depth},
          {"heads", c.heads},           {"mlp_dim", c.mlp_dim},
          {"num_classes", c.num_classes}, {"mean", c.mean},
          {"std", c.stddev},            {"norm_eps", c.norm_eps},
          {"pool", c.pool}};
}

VitConfig vit_config_from_json(const nlohmann::json& j) {
  VitConfig c;
  c.image_size = j.at("image_size").get<std::size_t>();
  c.patch_size = j.at("patch_size").get<std::size_t>();
  c.dim = j.at("dim").get<std::size_t>();
  c.depth = j.at("depth").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.mlp_dim = j.at("mlp_dim").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.mean = j.at("mean").get<std::array<float, 3>>();
  c.stddev = j.at("std").get<std::array<float, 3>>();
  c.norm_eps = j.at("norm_eps").get<double>();
  c.pool = j.value("pool", std::string("token"));
  c.validate();
  return c;
}

}  // namespace

const std::vector<VictimSpec>& registered_victims() {
  static const std::vector<VictimSpec> specs = {
      {"tiny_desk", "vit", 10, "desk fixture transformer trained by `gpatch fit-victim`"},
      {"vit_b16", "vit", 1000, "vit_base_patch16_224.augreg2_in21k_ft_in1k"},
      {"vit_l16", "vit", 1000, "vit_large_patch16_224.augreg_in21k_ft_in1k"},
      {"swin_b16", "swin", 1000, "swin_base_patch4_window7_224.ms_in22k_ft_in1k"},
  };
  return specs;
}

const VictimSpec& find_victim_spec(const std::string& name) {
  const auto& specs = registered_victims();
  const auto it = std::find_if(specs.begin(), specs.end(),
                               [&name](const VictimSpec& s) { return s.name == name; });
  if (it == specs.end()) {
    std::string known;
    for (const auto& s : specs) known += (known.empty() ? "" : ", ") + s.name;
    throw ConfigError("unknown victim '" + name + "'; registered victims: " + known);
  }
  return *it;
}

WeightsSource WeightsSource::from_environment() {
  if (const char* dir = std::getenv("GPATCH_WEIGHTS_DIR"); dir != nullptr && *dir != '\0') {
    return {dir};
  }
  return {GPATCH_DEFAULT_WEIGHTS_DIR};
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open weights manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    ManifestEntry e;
    if (!std::getline(fields, e.name, '\t') || !std::getline(fields, e.file, '\t') ||
        !std::getline(fields, e.sha256)) {
      throw IoError(path.string() + ":" + std::to_string(line_no) +
                    ": expected name<TAB>file<TAB>sha256");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write weights manifest " + path.string());
  out << "# name\tfile\tsha256\n";
  for (const auto& e : entries) out << e.name << '\t' << e.file << '\t' << e.sha256 << '\n';
}

template <typename T>
std::string fingerprint(const VictimNetwork<T>& network) {
  Sha256 hash;
  network.for_each_parameter([&hash](const std::string& name, const Shape&, std::span<const T> v) {
    hash.update(std::as_bytes(std::span<const char>(name.data(), name.size())));
    hash.update_values(v);
  });
  return hash.finish();
}

std::string fingerprint(const VictimModel& model) { return fingerprint(model.network()); }

VictimModel::VictimModel(std::string name, std::shared_ptr<const VictimNetwork<float>> network)
    : name_(std::move(name)), network_(std::move(network)) {
  if (!network_) throw ContractError("victim model needs a network");
  load_fingerprint_ = fingerprint(*network_);
}

VictimModel load_victim(const std::string& name, const WeightsSource& source) {
  const VictimSpec& spec = find_victim_spec(name);
  const auto entries = read_manifest(source.manifest_path());
  const auto it = std::find_if(entries.begin(), entries.end(),
                               [&name](const ManifestEntry& e) { return e.name == name; });
  if (it == entries.end()) {
    throw IoError("no pinned weights for victim '" + name + "' in " +
                  source.manifest_path().string() + " (checkpoint: " + spec.checkpoint + ")");
  }
  const auto path = source.directory / it->file;
  if (!std::filesystem::exists(path)) {
    throw IoError("weights for '" + name + "' not found at " + path.string());
  }
  const std::string digest = sha256_file(path.string());
  if (digest != it->sha256) {
    throw IntegrityError("weights " + path.string() + " have digest " + digest +
                         " but the manifest pins " + it->sha256);
  }
  auto network = read_weights(path);
  if (network->architecture() != spec.architecture || network->num_classes() != spec.num_classes) {
    throw IntegrityError("weights for '" + name + "' describe a " + network->architecture() +
                         " with " + std::to_string(network->num_classes()) +
                         " classes, registry expects " + spec.architecture + " with " +
                         std::to_string(spec.num_classes));
  }
  return VictimModel(name, std::move(network));
}

std::vector<std::vector<float>> logits(const VictimModel& model, std::span<const Image> images) {
  const std::size_t side = model.network().input_size();
  for (const Image& image : images) {
    if (image.shape() != Shape{side, side, 3}) {
      throw ContractError("image does not match the " + std::to_string(side) + "x" +
                          std::to_string(side) + " victim input");
    }
  }
  std::vector<std::vector<float>> out(images.size());
  const long n = static_cast<long>(images.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = model.network().logits(images[static_cast<std::size_t>(i)]);
  }
  return out;
}

template <typename T>
std::size_t predict(std::span<const T> logits) {
  if (logits.empty()) throw ContractError("cannot predict from empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

void save_weights(const std::filesystem::path& path, const VisionTransformer<float>& network) {
  nlohmann::json header;
  header["format"] = "gpatch-weights";
  header["version"] = 1;
  header["architecture"] = "vit";
  header["config"] = vit_config_json(network.config());
  header["dtype"] = "float32";
  auto& tensors = header["tensors"];
  tensors = nlohmann::json::array();
  network.for_each_parameter([&tensors](const std::string& name, const Shape& shape,
                                        std::span<const float>) {
    tensors.push_back({{"name", name}, {"shape", shape}});
  });
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write weights to " + path.string());
  out.write(kWeightsMagic, sizeof(kWeightsMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  network.for_each_parameter([&out](const std::string&, const Shape&, std::span<const float> v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size_bytes()));
  });
  if (!out) throw IoError("failed writing weights to " + path.string());
}

std::shared_ptr<VictimNetwork<float>> read_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weights " + path.string());
  char magic[sizeof(kWeightsMagic)] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kWeightsMagic, sizeof(magic)) != 0) {
    throw IntegrityError(path.string() + " is not a gpatch weight file");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 24)) throw IntegrityError(path.string() + ": corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(path.string() + ": corrupt header: " + e.what());
  }
  const std::string arch = header.at("architecture").get<std::string>();
  if (arch != "vit") {
    throw ConfigError(path.string() + ": unsupported architecture '" + arch + "'");
  }
  auto network = std::make_shared<VisionTransformer<float>>(vit_config_from_json(header.at("config")));
  const auto& tensors = header.at("tensors");
  std::size_t index = 0;
  visit_vit_params(network->config(), network->params(), [&](const std::string& name,
                                                             const Shape& shape,
                                                             std::vector<float>& values) {
    if (index >= tensors.size() || tensors[index].at("name").get<std::string>() != name ||
        tensors[index].at("shape").get<Shape>() != shape) {
      throw IntegrityError(path.string() + ": tensor " + std::to_string(index) +
                           " does not match expected " + name + " " + shape_string(shape));
    }
    ++index;
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!in) throw IntegrityError(path.string() + ": truncated while reading " + name);
  });
  if (index != tensors.size()) throw IntegrityError(path.string() + ": unexpected extra tensors");
  return network;
}

template std::string fingerprint<float>(const VictimNetwork<float>&);
template std::string fingerprint<double>(const VictimNetwork<double>&);
template std::size_t predict<float>(std::span<const float>);
template std::size_t predict<double>(std::span<const double>);

}  // namespace gpatch
