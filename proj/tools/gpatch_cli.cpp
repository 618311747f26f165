// gpatch: train, evaluate, stress and export generated adversarial patches.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "gpatch/dataset.hpp"
#include "gpatch/desk_victim.hpp"
#include "gpatch/digest.hpp"
#include "gpatch/error.hpp"
#include "gpatch/experiment.hpp"
#include "gpatch/victims.hpp"

namespace {

void log_line(const std::string& line) { std::cerr << line << "\n"; }

std::vector<gpatch::ColorShift> parse_shifts(const std::vector<std::string>& texts) {
  std::vector<gpatch::ColorShift> shifts;
  for (const auto& t : texts) {
    gpatch::ColorShift s;
    char sep1 = 0, sep2 = 0;
    std::istringstream in(t);
    if (!(in >> s.delta[0] >> sep1 >> s.delta[1] >> sep2 >> s.delta[2]) || sep1 != ',' ||
        sep2 != ',' || !in.eof()) {
      throw gpatch::ConfigError("color shift must look like 0.2,0,0; got \"" + t + "\"");
    }
    shifts.push_back(s);
  }
  return shifts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generator-based adversarial patches against frozen vision transformers"};
  app.require_subcommand(1);
  app.set_version_flag("--version", gpatch::tool_version());

  std::string config_path;
  auto* train = app.add_subcommand("train", "Train a patch from an experiment config");
  train->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

  gpatch::EvalRequest eval_request;
  std::string eval_patch, eval_victim, eval_report;
  std::size_t eval_target = 0;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "Score a saved patch on its held-out split");
  eval->add_option("patch", eval_patch, "Patch PNG with sidecar metadata")->required()->check(CLI::ExistingFile);
  auto* victim_opt = eval->add_option("--victim", eval_victim, "Victim name (default: from metadata)");
  auto* target_opt = eval->add_option("--target", eval_target, "Target class (default: from metadata)");
  auto* seed_opt = eval->add_option("--seed", eval_seed, "Placement seed (default: validation seed)");
  auto* report_opt = eval->add_option("--report", eval_report, "Report file to append to");

  std::string rob_protocol, rob_input, rob_report;
  std::vector<double> rob_k, rob_snr;
  std::vector<std::string> rob_shifts;
  auto* rob = app.add_subcommand("robustness", "Run a brightness, color or noise protocol");
  rob->add_option("protocol", rob_protocol, "brightness | color | noise")->required();
  rob->add_option("input", rob_input, "Config (brightness) or patch PNG (color, noise)")
      ->required()
      ->check(CLI::ExistingFile);
  auto* k_opt = rob->add_option("--k", rob_k, "k values for the brightness sweep");
  auto* snr_opt = rob->add_option("--snr", rob_snr, "SNR levels in dB");
  auto* shift_opt = rob->add_option("--shift", rob_shifts, "Colour shift r,g,b (repeatable)");
  auto* rob_report_opt = rob->add_option("--report", rob_report, "Report file to append to");

  std::string export_patch, export_out;
  double dpi = 300.0, width_mm = 100.0;
  auto* exp = app.add_subcommand("export", "Upscale a patch for printing");
  exp->add_option("patch", export_patch, "Patch PNG")->required()->check(CLI::ExistingFile);
  exp->add_option("--dpi", dpi, "Print resolution")->capture_default_str();
  exp->add_option("--width-mm", width_mm, "Physical width in millimetres")->capture_default_str();
  exp->add_option("-o,--output", export_out, "Output PNG")->required();

  std::string compose_patch, compose_image, compose_out;
  std::vector<std::size_t> at;
  std::uint64_t compose_seed = 0;
  auto* comp = app.add_subcommand("compose", "Paste a patch onto an image");
  comp->add_option("patch", compose_patch, "Patch PNG")->required()->check(CLI::ExistingFile);
  comp->add_option("image", compose_image, "Image PNG")->required()->check(CLI::ExistingFile);
  comp->add_option("--at", at, "Placement row col (default: random)")->expected(2);
  comp->add_option("--seed", compose_seed, "Seed for a random placement")->capture_default_str();
  comp->add_option("-o,--output", compose_out, "Output PNG")->required();

  std::string synth_dir;
  gpatch::DeskDatasetOptions synth;
  auto* syn = app.add_subcommand("synth-data", "Write the synthetic desk dataset as PNG + manifest");
  syn->add_option("directory", synth_dir, "Output directory")->required();
  syn->add_option("--count", synth.count)->capture_default_str();
  syn->add_option("--seed", synth.seed)->capture_default_str();
  syn->add_option("--first-index", synth.first_index)->capture_default_str();

  std::string fit_dir;
  gpatch::DeskVictimOptions fit;
  auto* fitc = app.add_subcommand("fit-victim", "Train the tiny_desk victim and register it");
  fitc->add_option("directory", fit_dir, "Weights directory (manifest.tsv is updated)")->required();
  fitc->add_option("--epochs", fit.epochs)->capture_default_str();
  fitc->add_option("--images-per-epoch", fit.images_per_epoch)->capture_default_str();
  fitc->add_option("--lr", fit.learning_rate)->capture_default_str();
  fitc->add_option("--augment-noise", fit.augment_noise, "Max stddev of training pixel noise")
      ->capture_default_str();
  fitc->add_option("--seed", fit.seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto run = gpatch::cmd_train(gpatch::load_experiment_config(config_path), log_line);
      std::cout << run.directory.string() << "\n";
    } else if (*eval) {
      eval_request.patch = eval_patch;
      if (*victim_opt) eval_request.victim = eval_victim;
      if (*target_opt) eval_request.target = eval_target;
      if (*seed_opt) eval_request.seed = eval_seed;
      if (*report_opt) eval_request.report = eval_report;
      gpatch::cmd_eval(eval_request, [](const std::string& s) { std::cout << s; });
    } else if (*rob) {
      gpatch::RobustnessRequest request;
      request.protocol = gpatch::parse_protocol(rob_protocol);
      request.input = rob_input;
      if (*k_opt) request.k_values = rob_k;
      if (*snr_opt) request.snr_db = rob_snr;
      if (*shift_opt) request.color_shifts = parse_shifts(rob_shifts);
      if (*rob_report_opt) request.report = rob_report;
      gpatch::cmd_robustness(request, [](const std::string& s) { std::cout << s; });
    } else if (*exp) {
      const auto result = gpatch::cmd_export(export_patch, dpi, width_mm, export_out);
      if (result.warning) std::cerr << "warning: " << *result.warning << "\n";
      std::cout << result.width_px << "x" << result.height_px << " " << export_out << "\n";
    } else if (*comp) {
      std::optional<gpatch::Placement> placement;
      if (!at.empty()) placement = gpatch::Placement{at[0], at[1]};
      const auto used = gpatch::cmd_compose(compose_patch, compose_image, placement, compose_seed,
                                            compose_out);
      std::cout << "placement " << used.row << " " << used.col << "\n";
    } else if (*syn) {
      gpatch::write_folder_dataset(gpatch::synthesize_desk_dataset(synth), synth_dir);
    } else if (*fitc) {
      gpatch::DeskVictimReport report;
      const auto net = gpatch::fit_desk_victim(fit, &report, log_line);
      std::filesystem::create_directories(fit_dir);
      const auto file = std::filesystem::path(fit_dir) / "tiny_desk.bin";
      gpatch::save_weights(file, net);
      const auto manifest_path = std::filesystem::path(fit_dir) / "manifest.tsv";
      std::vector<gpatch::ManifestEntry> entries;
      if (std::filesystem::exists(manifest_path)) entries = gpatch::read_manifest(manifest_path);
      std::erase_if(entries, [](const auto& e) { return e.name == "tiny_desk"; });
      entries.push_back({"tiny_desk", "tiny_desk.bin", gpatch::sha256_file(file.string())});
      gpatch::write_manifest(manifest_path, entries);
      std::cout << "holdout accuracy " << report.holdout_accuracy << "\n";
    }
  } catch (const gpatch::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
