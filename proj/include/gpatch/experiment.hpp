#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gpatch/dataset.hpp"
#include "gpatch/evaluator.hpp"
#include "gpatch/robustness.hpp"
#include "gpatch/trainer.hpp"
#include "gpatch/victims.hpp"
#include "json.hpp"

namespace gpatch {

std::string tool_version();

// Where images come from: the synthetic desk fixture or a folder + manifest.
struct DatasetSpec {
  std::string kind = "desk";  // "desk" or "folder"
  std::size_t count = 1000;
  std::uint64_t seed = 2024;
  std::size_t first_index = 0;
  std::string root;
  std::string manifest;
};

struct RobustnessSpec {
  std::vector<double> k_values{0.25, 0.3, 0.4, 0.5};
  std::vector<ColorShift> color_shifts{ColorShift{{0.2, 0.0, 0.0}}, ColorShift{{0.0, 0.0, 0.2}}};
  std::vector<double> snr_db{10.0, 7.0, 5.2, 4.0};
};

// One experiment, read from a JSON file. Unknown keys are errors; missing
// keys take the defaults below.
struct ExperimentConfig {
  std::string victim = "tiny_desk";
  DatasetSpec dataset;
  TrainConfig train;
  std::size_t max_train_images = 0;  // 0: no cap
  std::size_t max_eval_images = 0;   // 0: no cap
  std::size_t placements_per_image = 1;
  RobustnessSpec robustness;
  std::string output_dir = "runs/default";
  std::uint64_t root_seed = 0;

  nlohmann::ordered_json to_json() const;
};

// Collects every problem before throwing a single ConfigError.
ExperimentConfig parse_experiment_config(const nlohmann::json& document);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Stream seeds of a run, all derived from root_seed.
std::uint64_t split_seed(const ExperimentConfig& config);
std::uint64_t validation_seed(const ExperimentConfig& config);
std::uint64_t noise_seed(const ExperimentConfig& config);

Dataset load_dataset(const DatasetSpec& spec, std::size_t image_size);

struct PreparedData {
  EvalSet train;
  EvalSet eval;  // held out: used for best-epoch selection and for reports
};

PreparedData prepare_data(const ExperimentConfig& config, const VictimModel& victim);

// Lossless 8-bit PNG plus a sidecar JSON ("<name>.json") carrying everything
// needed to re-evaluate the patch.
struct PatchMetadata {
  double k = 0.5;
  std::size_t height = 0;
  std::size_t width = 0;
  std::string victim;
  std::size_t num_classes = 0;
  std::size_t target_class = 0;
  std::uint64_t root_seed = 0;
  std::uint64_t validation_seed = 0;
  std::size_t best_epoch = 0;
  double best_epoch_asr = 0.0;
  std::string victim_fingerprint;
  std::string tool_version;
  nlohmann::ordered_json config;
};

struct PatchArtifact {
  Patch patch;
  PatchMetadata metadata;
};

std::filesystem::path sidecar_path(const std::filesystem::path& png);
void save_artifact(const std::filesystem::path& png, const PatchArtifact& artifact);
// The pixels come back quantised to multiples of 1/255.
PatchArtifact load_artifact(const std::filesystem::path& png);

using LogSink = std::function<void(const std::string&)>;

struct TrainRun {
  std::filesystem::path directory;
  TrainResult result;
  EvalRow row;
};

// Writes config.json, patch.png + patch.json, history.json, report.jsonl and
// report.txt under the configured output directory.
TrainRun cmd_train(const ExperimentConfig& config, const LogSink& log = {});

struct EvalRequest {
  std::filesystem::path patch;
  std::optional<std::string> victim;      // defaults to the artifact's victim
  std::optional<std::size_t> target;      // defaults to the artifact's target
  std::optional<std::uint64_t> seed;      // defaults to the artifact's validation seed
  std::optional<std::filesystem::path> report;  // defaults to report.jsonl beside the patch
};

EvalRow cmd_eval(const EvalRequest& request, const LogSink& log = {});

enum class Protocol { brightness, color, noise };
Protocol parse_protocol(const std::string& text);

struct RobustnessRequest {
  Protocol protocol = Protocol::noise;
  // A config for brightness; a patch artifact for color and noise.
  std::filesystem::path input;
  std::optional<std::vector<double>> k_values;
  std::optional<std::vector<ColorShift>> color_shifts;
  std::optional<std::vector<double>> snr_db;
  std::optional<std::filesystem::path> report;
};

std::vector<EvalRow> cmd_robustness(const RobustnessRequest& request, const LogSink& log = {});

struct ExportResult {
  std::size_t width_px = 0;
  std::size_t height_px = 0;
  std::optional<std::string> warning;
};

inline constexpr double kA4PrintableWidthMm = 200.0;
inline constexpr double kA4PrintableHeightMm = 287.0;

// Nearest-neighbour upscale to floor(width_mm / 25.4 * dpi) pixels wide, with
// the DPI stored in the PNG. Oversized prints warn instead of failing.
ExportResult cmd_export(const std::filesystem::path& patch, double dpi, double width_mm,
                        const std::filesystem::path& output);

// Composites the artifact onto an image; a missing placement is sampled from seed.
Placement cmd_compose(const std::filesystem::path& patch, const std::filesystem::path& image,
                      std::optional<Placement> placement, std::uint64_t seed,
                      const std::filesystem::path& output);

}  // namespace gpatch
