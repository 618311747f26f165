#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gpatch/dataset.hpp"
#include "gpatch/deployer.hpp"
#include "gpatch/evaluator.hpp"
#include "gpatch/generator.hpp"
#include "gpatch/victims.hpp"

namespace gpatch {

enum class LatentPolicy { fixed, resampled };

std::string to_string(LatentPolicy policy);
LatentPolicy parse_latent_policy(const std::string& text);

struct TrainConfig {
  std::size_t target_class = 0;
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double learning_rate = 2e-4;
  std::string optimizer = "adam";  // "adam" or "sgd"
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  LatentPolicy latent_policy = LatentPolicy::fixed;
  std::uint64_t root_seed = 0;
  double k = 0.5;
  double eval_fraction = 0.2;
  std::size_t patch_height = 80;
  std::size_t patch_width = 80;
  // Generator architecture apart from k, patch size and init seed.
  GeneratorConfig generator;
  std::size_t validation_placements = 1;

  // All violations, one message each; empty when valid.
  std::vector<std::string> problems(std::size_t num_classes) const;
  // Throws ConfigError listing every problem.
  void validate(std::size_t num_classes) const;
  // Generator config with k, patch size and the derived init seed applied.
  GeneratorConfig resolved_generator() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  // Mean softmax probability of the target over the epoch's training trials.
  double mean_target_probability = 0.0;
  std::size_t validation_p = 0;
  std::size_t validation_q = 0;
  double validation_asr = 0.0;
  std::string patch_digest;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  // Validation ASR of the untrained generator.
  double initial_asr = 0.0;
  // Set when validation ASR was zero in every epoch; best_epoch is then the last one.
  bool zero_asr_warning = false;
  std::string victim_fingerprint;
};

struct TrainResult {
  Patch best_patch;
  GeneratorParams best_generator;
  LatentVector<float> latent;
  TrainHistory history;
};

// Mean targeted loss over the batch, each image composited with the same patch
// at its own placement, and d(loss)/d(patch). Per-image gradients are summed in
// input order, so the result does not depend on the thread count.
template <typename T>
struct PatchLoss {
  double loss = 0.0;
  double mean_target_probability = 0.0;
  Tensor<T> patch_grad;
};

template <typename T>
PatchLoss<T> patch_loss_and_gradient(const VictimNetwork<T>& victim, const Tensor<T>& patch,
                                     std::span<const Tensor<T>> images,
                                     std::span<const Placement> placements,
                                     std::size_t target_class);

// Optimiser state for one generator.
class GeneratorOptimizer {
 public:
  GeneratorOptimizer(const TrainConfig& config);
  void step(std::span<nn::ParamRef<float>> params);

 private:
  std::string kind_;
  nn::Adam<float> adam_;
  nn::Sgd<float> sgd_;
};

struct StepResult {
  double loss = 0.0;
  double mean_target_probability = 0.0;
};

// One update of the generator: forward at z, composite every image at its
// placement, back-propagate through the frozen victim, step the optimiser.
StepResult train_step(GeneratorParams& generator, GeneratorOptimizer& optimizer,
                      const VictimModel& victim, std::span<const Image> images,
                      std::span<const Placement> placements, const LatentVector<float>& z,
                      std::size_t target_class);

// Called after every epoch with the record just appended.
using EpochObserver = std::function<void(const EpochRecord&)>;

// Trains against the frozen victim and returns the epoch-end patch with the
// highest validation ASR. Throws IntegrityError if the victim's parameters
// change at any point of the run.
TrainResult train(const TrainConfig& config, const VictimModel& victim, const EvalSet& train_set,
                  const EvalSet& validation, const EpochObserver& observer = {});

// Inference patch for the export latent after freezing statistics there.
Patch export_patch(GeneratorParams& generator, const LatentVector<float>& z);

std::string patch_digest(const Patch& patch);

}  // namespace gpatch
