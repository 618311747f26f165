#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gpatch/vit.hpp"

namespace gpatch {

// Architecture of the tiny_desk victim.
VitConfig tiny_desk_architecture();

// One-time training of the tiny_desk victim on freshly synthesised desk
// images (a new draw every epoch), evaluated on a held-out draw.
struct DeskVictimOptions {
  VitConfig architecture = tiny_desk_architecture();
  std::size_t epochs = 16;
  std::size_t images_per_epoch = 2000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t holdout_images = 500;
  // Extra iid gaussian pixel noise on training images, stddev drawn from
  // U(0, augment_noise) per image. Zero disables it.
  double augment_noise = 0.25;
  std::uint64_t seed = 7001;
};

struct DeskVictimReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
  double holdout_accuracy = 0.0;
};

VisionTransformer<float> fit_desk_victim(const DeskVictimOptions& options,
                                         DeskVictimReport* report = nullptr,
                                         const std::function<void(const std::string&)>& log = {});

}  // namespace gpatch
