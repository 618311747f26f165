#include "gpatch/experiment.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <type_traits>

#include "gpatch/digest.hpp"
#include "gpatch/error.hpp"
#include "gpatch/image_io.hpp"

namespace gpatch {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string tool_version() { return GPATCH_VERSION; }

namespace {

// Reads keys of one JSON object, recording type errors and unknown keys
// instead of stopping at the first one.
class ObjectReader {
 public:
  ObjectReader(const json& object, std::string path, std::vector<std::string>& problems)
      : object_(object), path_(std::move(path)), problems_(problems) {
    if (!object_.is_object()) problems_.push_back(path_ + " must be an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!object_.is_object() || !object_.contains(key)) return;
    const json& value = object_.at(key);
    if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      // get<size_t> would wrap -3 and truncate 2.5.
      if (!value.is_number_integer() || value.get<long long>() < 0) {
        problems_.push_back(name(key) + " must be a non-negative integer (" + value.dump() + ")");
        return;
      }
    }
    try {
      out = value.get<T>();
    } catch (const json::exception&) {
      problems_.push_back(name(key) + " has the wrong type (" + object_.at(key).dump() + ")");
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    if (!object_.is_object() || !object_.contains(key)) return nullptr;
    return &object_.at(key);
  }

  std::string name(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() {
    if (!object_.is_object()) return;
    for (const auto& [key, value] : object_.items()) {
      if (!seen_.contains(key)) problems_.push_back("unknown key " + name(key));
    }
  }

 private:
  const json& object_;
  std::string path_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

void read_patch_size(const json* node, TrainConfig& train, std::vector<std::string>& problems) {
  if (node == nullptr) return;
  const auto positive = [](const json& v) {
    return v.is_number_integer() && v.get<long long>() > 0;
  };
  if (positive(*node)) {
    train.patch_height = train.patch_width = node->get<std::size_t>();
  } else if (node->is_array() && node->size() == 2 && positive((*node)[0]) &&
             positive((*node)[1])) {
    train.patch_height = (*node)[0].get<std::size_t>();
    train.patch_width = (*node)[1].get<std::size_t>();
  } else {
    problems.push_back("patch_size must be a positive integer or [height, width]");
  }
}

ordered_json shift_json(const ColorShift& s) { return {s.delta[0], s.delta[1], s.delta[2]}; }

}  // namespace

ExperimentConfig parse_experiment_config(const json& document) {
  ExperimentConfig c;
  std::vector<std::string> problems;
  ObjectReader top(document, "", problems);
  top.read("victim", c.victim);
  top.read("target_class", c.train.target_class);
  top.read("k", c.train.k);
  read_patch_size(top.child("patch_size"), c.train, problems);
  top.read("root_seed", c.root_seed);
  top.read("output_dir", c.output_dir);
  top.read("max_train_images", c.max_train_images);
  top.read("max_eval_images", c.max_eval_images);
  top.read("placements_per_image", c.placements_per_image);

  if (const json* node = top.child("dataset")) {
    ObjectReader r(*node, "dataset", problems);
    r.read("kind", c.dataset.kind);
    r.read("count", c.dataset.count);
    r.read("seed", c.dataset.seed);
    r.read("first_index", c.dataset.first_index);
    r.read("root", c.dataset.root);
    r.read("manifest", c.dataset.manifest);
    r.finish();
  }
  if (const json* node = top.child("train")) {
    ObjectReader r(*node, "train", problems);
    r.read("epochs", c.train.epochs);
    r.read("batch_size", c.train.batch_size);
    r.read("learning_rate", c.train.learning_rate);
    r.read("optimizer", c.train.optimizer);
    r.read("adam_beta1", c.train.adam_beta1);
    r.read("adam_beta2", c.train.adam_beta2);
    std::string policy = to_string(c.train.latent_policy);
    r.read("latent_policy", policy);
    try {
      c.train.latent_policy = parse_latent_policy(policy);
    } catch (const ConfigError& e) {
      problems.push_back(std::string("train.") + e.what());
    }
    r.read("eval_fraction", c.train.eval_fraction);
    r.read("validation_placements", c.train.validation_placements);
    r.finish();
  }
  if (const json* node = top.child("generator")) {
    ObjectReader r(*node, "generator", problems);
    r.read("latent_dim", c.train.generator.latent_dim);
    r.read("stage_channels", c.train.generator.stage_channels);
    r.read("allow_crop", c.train.generator.allow_crop);
    r.read("init_stddev", c.train.generator.init_stddev);
    r.finish();
  }
  if (const json* node = top.child("robustness")) {
    ObjectReader r(*node, "robustness", problems);
    r.read("k_values", c.robustness.k_values);
    r.read("snr_db", c.robustness.snr_db);
    std::vector<std::array<double, 3>> shifts;
    bool has_shifts = node->is_object() && node->contains("color_shifts");
    r.read("color_shifts", shifts);
    if (has_shifts) {
      c.robustness.color_shifts.clear();
      for (const auto& d : shifts) c.robustness.color_shifts.push_back(ColorShift{d});
    }
    r.finish();
  }
  top.finish();
  c.train.root_seed = c.root_seed;

  // Semantic checks.
  try {
    const VictimSpec& spec = find_victim_spec(c.victim);
    for (auto& p : c.train.problems(spec.num_classes)) problems.push_back(p);
  } catch (const ConfigError& e) {
    problems.push_back(e.what());
    for (auto& p : c.train.problems(0)) problems.push_back(p);
  }
  if (c.dataset.kind == "desk") {
    if (c.dataset.count < 2) problems.push_back("dataset.count must be >= 2");
  } else if (c.dataset.kind == "folder") {
    if (c.dataset.root.empty()) problems.push_back("dataset.root is required for folder datasets");
    if (c.dataset.manifest.empty()) {
      problems.push_back("dataset.manifest is required for folder datasets");
    }
  } else {
    problems.push_back("dataset.kind must be \"desk\" or \"folder\", got \"" + c.dataset.kind + "\"");
  }
  if (c.placements_per_image < 1) problems.push_back("placements_per_image must be >= 1");
  if (c.output_dir.empty()) problems.push_back("output_dir must not be empty");
  for (const double k : c.robustness.k_values) {
    if (!(k > 0.0 && k <= 0.5)) {
      problems.push_back("robustness.k_values entry " + std::to_string(k) + " is outside (0, 0.5]");
    }
  }
  for (const double s : c.robustness.snr_db) {
    if (!std::isfinite(s)) problems.push_back("robustness.snr_db entries must be finite");
  }
  for (const auto& s : c.robustness.color_shifts) {
    for (const double d : s.delta) {
      if (!(d >= -1.0 && d <= 1.0)) problems.push_back("robustness.color_shifts values must be in [-1, 1]");
    }
  }

  if (!problems.empty()) {
    std::string message = "invalid experiment config (" + std::to_string(problems.size()) +
                          (problems.size() == 1 ? " problem):" : " problems):");
    for (const auto& p : problems) message += "\n  - " + p;
    throw ConfigError(message);
  }
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json document;
  try {
    document = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_experiment_config(document);
}

ordered_json ExperimentConfig::to_json() const {
  ordered_json shifts = ordered_json::array();
  for (const auto& s : robustness.color_shifts) shifts.push_back(shift_json(s));
  return {
      {"victim", victim},
      {"dataset",
       {{"kind", dataset.kind},
        {"count", dataset.count},
        {"seed", dataset.seed},
        {"first_index", dataset.first_index},
        {"root", dataset.root},
        {"manifest", dataset.manifest}}},
      {"target_class", train.target_class},
      {"k", train.k},
      {"patch_size", {train.patch_height, train.patch_width}},
      {"root_seed", root_seed},
      {"output_dir", output_dir},
      {"max_train_images", max_train_images},
      {"max_eval_images", max_eval_images},
      {"placements_per_image", placements_per_image},
      {"train",
       {{"epochs", train.epochs},
        {"batch_size", train.batch_size},
        {"learning_rate", train.learning_rate},
        {"optimizer", train.optimizer},
        {"adam_beta1", train.adam_beta1},
        {"adam_beta2", train.adam_beta2},
        {"latent_policy", to_string(train.latent_policy)},
        {"eval_fraction", train.eval_fraction},
        {"validation_placements", train.validation_placements}}},
      {"generator",
       {{"latent_dim", train.generator.latent_dim},
        {"stage_channels", train.generator.stage_channels},
        {"allow_crop", train.generator.allow_crop},
        {"init_stddev", train.generator.init_stddev}}},
      {"robustness",
       {{"k_values", robustness.k_values},
        {"color_shifts", shifts},
        {"snr_db", robustness.snr_db}}},
  };
}

std::uint64_t split_seed(const ExperimentConfig& c) { return derive_seed(c.root_seed, "split"); }
std::uint64_t validation_seed(const ExperimentConfig& c) {
  return derive_seed(c.root_seed, "validation");
}
std::uint64_t noise_seed(const ExperimentConfig& c) { return derive_seed(c.root_seed, "noise"); }

Dataset load_dataset(const DatasetSpec& spec, std::size_t image_size) {
  if (spec.kind == "desk") {
    DeskDatasetOptions options;
    options.count = spec.count;
    options.seed = spec.seed;
    options.first_index = spec.first_index;
    options.image_size = image_size;
    return synthesize_desk_dataset(options);
  }
  if (spec.kind == "folder") {
    Dataset ds = load_folder_dataset(spec.root, spec.manifest);
    if (ds.image_size != image_size) {
      throw ConfigError("dataset images are " + std::to_string(ds.image_size) +
                        " px but the victim expects " + std::to_string(image_size) +
                        " px; add a #resize directive to the manifest");
    }
    return ds;
  }
  throw ConfigError("unknown dataset kind \"" + spec.kind + "\"");
}

PreparedData prepare_data(const ExperimentConfig& config, const VictimModel& victim) {
  const Dataset ds = load_dataset(config.dataset, victim.input_size());
  if (ds.num_classes() != victim.num_classes()) {
    throw ConfigError("dataset has " + std::to_string(ds.num_classes()) + " classes, victim " +
                      victim.name() + " has " + std::to_string(victim.num_classes()));
  }
  const auto [train_part, eval_part] = split(ds, config.train.eval_fraction, split_seed(config));
  constexpr auto kAll = std::numeric_limits<std::size_t>::max();
  PreparedData data{
      build_eval_set(victim, train_part, config.train.target_class,
                     config.max_train_images == 0 ? kAll : config.max_train_images),
      build_eval_set(victim, eval_part, config.train.target_class,
                     config.max_eval_images == 0 ? kAll : config.max_eval_images)};
  data.train.provenance = "train:" + data.train.provenance;
  data.eval.provenance = "eval:" + data.eval.provenance;
  return data;
}

fs::path sidecar_path(const fs::path& png) {
  fs::path p = png;
  p.replace_extension(".json");
  return p;
}

void save_artifact(const fs::path& png, const PatchArtifact& artifact) {
  if (png.has_parent_path()) fs::create_directories(png.parent_path());
  write_png(png, quantize(artifact.patch.pixels));
  const auto& m = artifact.metadata;
  const ordered_json j = {
      {"k", m.k},
      {"height", m.height},
      {"width", m.width},
      {"victim", m.victim},
      {"num_classes", m.num_classes},
      {"target_class", m.target_class},
      {"root_seed", m.root_seed},
      {"validation_seed", m.validation_seed},
      {"best_epoch", m.best_epoch},
      {"best_epoch_asr", m.best_epoch_asr},
      {"victim_fingerprint", m.victim_fingerprint},
      {"tool_version", m.tool_version},
      {"png_sha256", sha256_file(png.string())},
      {"config", m.config},
  };
  std::ofstream out(sidecar_path(png), std::ios::binary);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + sidecar_path(png).string());
}

PatchArtifact load_artifact(const fs::path& png) {
  const fs::path side = sidecar_path(png);
  std::ifstream in(side);
  if (!in) throw IoError("patch metadata " + side.string() + " not found");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError(side.string() + ": " + e.what());
  }
  PatchArtifact a;
  try {
    auto& m = a.metadata;
    m.k = j.at("k").get<double>();
    m.height = j.at("height").get<std::size_t>();
    m.width = j.at("width").get<std::size_t>();
    m.victim = j.at("victim").get<std::string>();
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.target_class = j.at("target_class").get<std::size_t>();
    m.root_seed = j.at("root_seed").get<std::uint64_t>();
    m.validation_seed = j.at("validation_seed").get<std::uint64_t>();
    m.best_epoch = j.at("best_epoch").get<std::size_t>();
    m.best_epoch_asr = j.at("best_epoch_asr").get<double>();
    m.victim_fingerprint = j.at("victim_fingerprint").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config = j.at("config");
    const std::string recorded = j.at("png_sha256").get<std::string>();
    if (recorded != sha256_file(png.string())) {
      throw IntegrityError(png.string() + " does not match the digest in its metadata");
    }
  } catch (const json::exception& e) {
    throw IoError(side.string() + ": " + e.what());
  }
  a.patch.pixels = read_image(png);
  a.patch.k = a.metadata.k;
  if (a.patch.height() != a.metadata.height || a.patch.width() != a.metadata.width) {
    throw IntegrityError(png.string() + " size disagrees with its metadata");
  }
  return a;
}

namespace {

std::string patch_id(const fs::path& png) {
  return png.parent_path().filename().string() + "/" + png.filename().string() + "@" +
         sha256_file(png.string()).substr(0, 12);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void render_report_file(const fs::path& jsonl) {
  const auto rows = read_rows(jsonl.string());
  if (rows.empty()) return;
  fs::path txt = jsonl;
  txt.replace_extension(".txt");
  write_text(txt, table_report(rows, Grouping::flat).table + "\n" +
                      table_report(rows, Grouping::by_size).table + "\n" +
                      table_report(rows, Grouping::by_condition).table);
}

void emit(const LogSink& log, const std::string& line) {
  if (log) log(line);
}

ordered_json history_json(const TrainHistory& h) {
  ordered_json epochs = ordered_json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"mean_loss", e.mean_loss},
                      {"mean_target_probability", e.mean_target_probability},
                      {"validation_P", e.validation_p},
                      {"validation_Q", e.validation_q},
                      {"validation_asr", e.validation_asr},
                      {"patch_digest", e.patch_digest}});
  }
  return {{"epochs", epochs},
          {"best_epoch", h.best_epoch},
          {"initial_asr", h.initial_asr},
          {"zero_asr_warning", h.zero_asr_warning},
          {"victim_fingerprint", h.victim_fingerprint}};
}

std::string record_line(const EpochRecord& e) {
  std::ostringstream out;
  out << "epoch " << e.epoch << " loss " << e.mean_loss << " p(target) "
      << e.mean_target_probability << " val_asr " << e.validation_asr << " (" << e.validation_q
      << "/" << e.validation_p << ")";
  return out.str();
}

}  // namespace

TrainRun cmd_train(const ExperimentConfig& config, const LogSink& log) {
  const VictimModel victim = load_victim(config.victim, WeightsSource::from_environment());
  const PreparedData data = prepare_data(config, victim);
  emit(log, "train images " + std::to_string(data.train.size()) + ", held-out images " +
                std::to_string(data.eval.size()));

  const fs::path directory = config.output_dir;
  fs::create_directories(directory);
  write_text(directory / "config.json", config.to_json().dump(2) + "\n");

  const fs::path epochs_log = directory / "epochs.jsonl";
  write_text(epochs_log, "");
  TrainRun run{directory, train(config.train, victim, data.train, data.eval, [&](const EpochRecord& e) {
    std::ofstream out(epochs_log, std::ios::app | std::ios::binary);
    out << history_json(TrainHistory{{e}, 0, 0.0, false, ""})["epochs"][0].dump() << "\n";
    emit(log, record_line(e));
  }), {}};
  const auto& h = run.result.history;
  if (h.zero_asr_warning) emit(log, "warning: validation ASR was zero in every epoch");
  write_text(run.directory / "history.json", history_json(h).dump(2) + "\n");

  PatchArtifact artifact;
  artifact.patch = run.result.best_patch;
  auto& m = artifact.metadata;
  m.k = config.train.k;
  m.height = artifact.patch.height();
  m.width = artifact.patch.width();
  m.victim = victim.name();
  m.num_classes = victim.num_classes();
  m.target_class = config.train.target_class;
  m.root_seed = config.root_seed;
  m.validation_seed = validation_seed(config);
  m.best_epoch = h.best_epoch;
  m.best_epoch_asr = h.epochs[h.best_epoch].validation_asr;
  m.victim_fingerprint = h.victim_fingerprint;
  m.tool_version = tool_version();
  m.config = config.to_json();
  const fs::path png = run.directory / "patch.png";
  save_artifact(png, artifact);

  // The report scores the patch as saved, i.e. after 8-bit quantisation.
  const PatchArtifact saved = load_artifact(png);
  AttackOptions options;
  options.placements_per_image = config.placements_per_image;
  options.seed = validation_seed(config);
  options.patch_id = patch_id(png);
  run.row = attack_success_rate(victim, saved.patch, data.eval, config.train.target_class, options);
  const fs::path report = run.directory / "report.jsonl";
  append_rows(report.string(), std::span<const EvalRow>(&run.row, 1));
  render_report_file(report);
  emit(log, "best epoch " + std::to_string(h.best_epoch) + ", held-out ASR " +
                std::to_string(run.row.asr) + " (" + std::to_string(run.row.q) + "/" +
                std::to_string(run.row.p) + ")");
  return run;
}

namespace {

struct LoadedContext {
  PatchArtifact artifact;
  ExperimentConfig config;
};

LoadedContext load_context(const fs::path& png) {
  LoadedContext ctx{load_artifact(png), {}};
  ctx.config = parse_experiment_config(ctx.artifact.metadata.config);
  return ctx;
}

fs::path default_report(const fs::path& png, const std::optional<fs::path>& report) {
  return report ? *report : png.parent_path() / "report.jsonl";
}

}  // namespace

EvalRow cmd_eval(const EvalRequest& request, const LogSink& log) {
  LoadedContext ctx = load_context(request.patch);
  const auto& m = ctx.artifact.metadata;
  const std::string victim_name = request.victim.value_or(m.victim);
  const VictimModel victim = load_victim(victim_name, WeightsSource::from_environment());
  const std::size_t target = request.target.value_or(m.target_class);
  if (target >= victim.num_classes()) {
    throw ContractError("target class " + std::to_string(target) + " does not exist in " +
                        victim.name() + " (" + std::to_string(victim.num_classes()) + " classes)");
  }
  if (!request.target && m.num_classes != victim.num_classes()) {
    throw ContractError("patch was trained against " + std::to_string(m.num_classes) +
                        " classes but " + victim.name() + " has " +
                        std::to_string(victim.num_classes()) + "; pass an explicit target");
  }
  ctx.config.victim = victim_name;
  ctx.config.train.target_class = target;
  const PreparedData data = prepare_data(ctx.config, victim);

  AttackOptions options;
  options.placements_per_image = ctx.config.placements_per_image;
  options.seed = request.seed.value_or(m.validation_seed);
  options.patch_id = patch_id(request.patch);
  const EvalRow row = attack_success_rate(victim, ctx.artifact.patch, data.eval, target, options);
  const fs::path report = default_report(request.patch, request.report);
  append_rows(report.string(), std::span<const EvalRow>(&row, 1));
  render_report_file(report);
  emit(log, table_report({row}, Grouping::flat).table);
  return row;
}

Protocol parse_protocol(const std::string& text) {
  if (text == "brightness") return Protocol::brightness;
  if (text == "color") return Protocol::color;
  if (text == "noise") return Protocol::noise;
  throw ConfigError("protocol must be brightness, color or noise; got \"" + text + "\"");
}

std::vector<EvalRow> cmd_robustness(const RobustnessRequest& request, const LogSink& log) {
  std::vector<EvalRow> rows;
  fs::path report;
  if (request.protocol == Protocol::brightness) {
    if (request.input.extension() == ".png" ||
        (request.input.extension() != ".json" && fs::exists(sidecar_path(request.input)))) {
      throw ConfigError("brightness restriction is a training-time constraint: pass an experiment "
                        "config so each k can be trained, not a patch file");
    }
    ExperimentConfig config = load_experiment_config(request.input);
    const auto k_values = request.k_values.value_or(config.robustness.k_values);
    const VictimModel victim = load_victim(config.victim, WeightsSource::from_environment());
    const PreparedData data = prepare_data(config, victim);
    AttackOptions options;
    options.placements_per_image = config.placements_per_image;
    options.seed = validation_seed(config);
    const auto results = brightness_sweep(config.train, k_values, victim, data.train, data.eval,
                                          data.eval, options);
    const fs::path dir = fs::path(config.output_dir) / "brightness";
    for (const auto& r : results) {
      if (!r.error.empty()) {
        emit(log, "k=" + std::to_string(r.k) + " failed: " + r.error);
        continue;
      }
      char name[32];
      std::snprintf(name, sizeof name, "k%.3f", r.k);
      PatchArtifact artifact;
      artifact.patch = r.training->best_patch;
      auto& m = artifact.metadata;
      m.k = r.k;
      m.height = artifact.patch.height();
      m.width = artifact.patch.width();
      m.victim = victim.name();
      m.num_classes = victim.num_classes();
      m.target_class = config.train.target_class;
      m.root_seed = config.root_seed;
      m.validation_seed = validation_seed(config);
      m.best_epoch = r.training->history.best_epoch;
      m.best_epoch_asr = r.training->history.epochs[m.best_epoch].validation_asr;
      m.victim_fingerprint = r.training->history.victim_fingerprint;
      m.tool_version = tool_version();
      ExperimentConfig per_k = config;
      per_k.train.k = r.k;
      m.config = per_k.to_json();
      const fs::path png = dir / name / "patch.png";
      save_artifact(png, artifact);
      EvalRow row = *r.row;
      row.patch_id = patch_id(png);
      rows.push_back(row);
    }
    report = request.report ? *request.report : fs::path(config.output_dir) / "report.jsonl";
    fs::create_directories(report.parent_path().empty() ? fs::path(".") : report.parent_path());
  } else {
    const LoadedContext ctx = load_context(request.input);
    const VictimModel victim = load_victim(ctx.artifact.metadata.victim,
                                           WeightsSource::from_environment());
    const PreparedData data = prepare_data(ctx.config, victim);
    AttackOptions options;
    options.placements_per_image = ctx.config.placements_per_image;
    options.seed = ctx.artifact.metadata.validation_seed;
    options.patch_id = patch_id(request.input);
    const std::size_t target = ctx.artifact.metadata.target_class;
    if (request.protocol == Protocol::color) {
      const auto shifts = request.color_shifts.value_or(ctx.config.robustness.color_shifts);
      rows = color_protocol(victim, ctx.artifact.patch, data.eval, target, shifts, options);
    } else {
      const auto snr = request.snr_db.value_or(ctx.config.robustness.snr_db);
      rows = noise_protocol(victim, ctx.artifact.patch, data.eval, target, snr,
                            noise_seed(ctx.config), options);
    }
    report = default_report(request.input, request.report);
  }
  if (!rows.empty()) {
    append_rows(report.string(), rows);
    render_report_file(report);
    emit(log, table_report(rows, Grouping::by_condition).table);
  }
  return rows;
}

ExportResult cmd_export(const fs::path& patch, double dpi, double width_mm, const fs::path& output) {
  if (!(dpi > 0.0) || !std::isfinite(dpi)) throw ConfigError("dpi must be positive");
  if (!(width_mm > 0.0) || !std::isfinite(width_mm)) {
    throw ConfigError("physical width must be positive");
  }
  const Rgb8 src = read_png(patch);
  const double height_mm = width_mm * static_cast<double>(src.height) / static_cast<double>(src.width);
  ExportResult result;
  result.width_px = static_cast<std::size_t>(std::floor(width_mm / 25.4 * dpi));
  result.height_px = static_cast<std::size_t>(std::floor(height_mm / 25.4 * dpi));
  if (result.width_px < src.width || result.height_px < src.height) {
    throw ConfigError("export at " + std::to_string(dpi) + " dpi and " + std::to_string(width_mm) +
                      " mm would downsample the patch; increase dpi or width");
  }
  const bool fits = (width_mm <= kA4PrintableWidthMm && height_mm <= kA4PrintableHeightMm) ||
                    (width_mm <= kA4PrintableHeightMm && height_mm <= kA4PrintableWidthMm);
  if (!fits) {
    std::ostringstream w;
    w << "requested print size " << width_mm << " x " << height_mm
      << " mm exceeds the A4 printable area (" << kA4PrintableWidthMm << " x "
      << kA4PrintableHeightMm << " mm)";
    result.warning = w.str();
  }
  Rgb8 out;
  out.width = result.width_px;
  out.height = result.height_px;
  out.pixels.resize(out.width * out.height * 3);
  for (std::size_t y = 0; y < out.height; ++y) {
    const std::size_t sy = y * src.height / out.height;
    for (std::size_t x = 0; x < out.width; ++x) {
      const std::size_t sx = x * src.width / out.width;
      for (std::size_t c = 0; c < 3; ++c) {
        out.pixels[(y * out.width + x) * 3 + c] = src.pixels[(sy * src.width + sx) * 3 + c];
      }
    }
  }
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  write_png(output, out, dpi);
  return result;
}

Placement cmd_compose(const fs::path& patch, const fs::path& image,
                      std::optional<Placement> placement, std::uint64_t seed,
                      const fs::path& output) {
  const PatchArtifact artifact = load_artifact(patch);
  const Image base = read_image(image);
  if (artifact.patch.height() > base.dim(0) || artifact.patch.width() > base.dim(1)) {
    throw ContractError("patch " + shape_string(artifact.patch.pixels.shape()) +
                        " is larger than image " + shape_string(base.shape()));
  }
  Placement used;
  if (placement) {
    check_placement(base.shape(), artifact.patch.pixels.shape(), *placement);
    used = *placement;
  } else {
    RandomStream rng = RandomStream(seed).derive("compose");
    used = sample_placement(base.dim(0), base.dim(1), artifact.patch.height(),
                            artifact.patch.width(), rng);
  }
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  write_image(output, compose(artifact.patch, base, used));
  return used;
}

}  // namespace gpatch
