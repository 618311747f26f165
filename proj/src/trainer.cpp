#include "gpatch/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gpatch/digest.hpp"
#include "gpatch/error.hpp"
#include "gpatch/loss.hpp"

namespace gpatch {

std::string to_string(LatentPolicy policy) {
  return policy == LatentPolicy::fixed ? "fixed" : "resampled";
}

LatentPolicy parse_latent_policy(const std::string& text) {
  if (text == "fixed") return LatentPolicy::fixed;
  if (text == "resampled") return LatentPolicy::resampled;
  throw ConfigError("latent_policy must be \"fixed\" or \"resampled\", got \"" + text + "\"");
}

std::vector<std::string> TrainConfig::problems(std::size_t num_classes) const {
  std::vector<std::string> out;
  if (epochs < 1) out.push_back("epochs must be >= 1");
  if (batch_size < 1) out.push_back("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    out.push_back("learning_rate must be finite and >= 0");
  }
  if (optimizer != "adam" && optimizer != "sgd") {
    out.push_back("optimizer must be \"adam\" or \"sgd\", got \"" + optimizer + "\"");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) out.push_back("adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) out.push_back("adam_beta2 must be in [0, 1)");
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) out.push_back("eval_fraction must be in (0, 1)");
  if (num_classes != 0 && target_class >= num_classes) {
    out.push_back("target_class " + std::to_string(target_class) + " >= number of classes " +
                  std::to_string(num_classes));
  }
  if (validation_placements < 1) out.push_back("validation_placements must be >= 1");
  try {
    resolved_generator().validate();
  } catch (const ConfigError& e) {
    out.push_back(e.what());
  }
  return out;
}

void TrainConfig::validate(std::size_t num_classes) const {
  const auto list = problems(num_classes);
  if (list.empty()) return;
  std::string message = "invalid training config:";
  for (const auto& p : list) message += "\n  - " + p;
  throw ConfigError(message);
}

GeneratorConfig TrainConfig::resolved_generator() const {
  GeneratorConfig g = generator;
  g.k = k;
  g.patch_height = patch_height;
  g.patch_width = patch_width;
  g.init_seed = derive_seed(root_seed, "generator-init");
  return g;
}

template <typename T>
PatchLoss<T> patch_loss_and_gradient(const VictimNetwork<T>& victim, const Tensor<T>& patch,
                                     std::span<const Tensor<T>> images,
                                     std::span<const Placement> placements,
                                     std::size_t target_class) {
  if (images.empty()) throw ContractError("empty batch");
  if (images.size() != placements.size()) throw ContractError("one placement per image required");
  if (target_class >= victim.num_classes()) throw ContractError("target class out of range");
  // Everything that can throw is checked here, outside the parallel region.
  const Shape input{victim.input_size(), victim.input_size(), 3};
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != input) throw ContractError("image does not match the victim input");
    check_placement(images[i].shape(), patch.shape(), placements[i]);
  }
  const std::size_t n = images.size();
  const T scale = T{1} / static_cast<T>(n);
  std::vector<Tensor<T>> grads(n);
  std::vector<double> losses(n), probs(n);
  const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
  for (long b = 0; b < count; ++b) {
    const auto i = static_cast<std::size_t>(b);
    const Tensor<T> composed = compose_pixels(patch, images[i], placements[i]);
    Tensor<T> grad_image;
    const auto out = victim.logits_and_input_gradient(
        composed,
        [&](std::span<const T> logits) {
          auto g = targeted_loss_gradient<T>(logits, target_class);
          for (auto& v : g) v *= scale;
          return g;
        },
        grad_image);
    losses[i] = static_cast<double>(targeted_loss<T>(out, target_class));
    probs[i] = static_cast<double>(softmax<T>(out)[target_class]);
    grads[i] = Tensor<T>(patch.shape());
    accumulate_patch_gradient(grad_image, placements[i], grads[i]);
  }
  PatchLoss<T> result;
  result.patch_grad = Tensor<T>(patch.shape());
  for (std::size_t i = 0; i < n; ++i) {
    result.loss += losses[i];
    result.mean_target_probability += probs[i];
    T* acc = result.patch_grad.data();
    const T* g = grads[i].data();
    for (std::size_t j = 0; j < result.patch_grad.size(); ++j) acc[j] += g[j];
  }
  result.loss /= static_cast<double>(n);
  result.mean_target_probability /= static_cast<double>(n);
  return result;
}

template PatchLoss<float> patch_loss_and_gradient<float>(const VictimNetwork<float>&,
                                                         const Tensor<float>&,
                                                         std::span<const Tensor<float>>,
                                                         std::span<const Placement>, std::size_t);
template PatchLoss<double> patch_loss_and_gradient<double>(const VictimNetwork<double>&,
                                                           const Tensor<double>&,
                                                           std::span<const Tensor<double>>,
                                                           std::span<const Placement>, std::size_t);

GeneratorOptimizer::GeneratorOptimizer(const TrainConfig& config)
    : kind_(config.optimizer),
      adam_(config.learning_rate, config.adam_beta1, config.adam_beta2),
      sgd_(config.learning_rate) {}

void GeneratorOptimizer::step(std::span<nn::ParamRef<float>> params) {
  if (kind_ == "sgd") {
    sgd_.step(params);
  } else {
    adam_.step(params);
  }
}

StepResult train_step(GeneratorParams& generator, GeneratorOptimizer& optimizer,
                      const VictimModel& victim, std::span<const Image> images,
                      std::span<const Placement> placements, const LatentVector<float>& z,
                      std::size_t target_class) {
  if (images.empty()) throw ContractError("empty batch");
  const auto trace = generator.forward_train(z);
  const auto loss = patch_loss_and_gradient<float>(victim.network(), trace.patch, images,
                                                   placements, target_class);
  generator.zero_grad();
  generator.backward(trace, loss.patch_grad);
  auto params = generator.parameters();
  optimizer.step(params);
  return {loss.loss, loss.mean_target_probability};
}

Patch export_patch(GeneratorParams& generator, const LatentVector<float>& z) {
  generator.freeze_statistics(z);
  return generate(generator, z);
}

std::string patch_digest(const Patch& patch) {
  const auto v = patch.pixels.values();
  return sha256_hex(std::as_bytes(v));
}

namespace {

void assert_frozen(const VictimModel& victim, const std::string& expected, std::size_t epoch) {
  const std::string now = fingerprint(victim);
  if (now != expected) {
    throw IntegrityError("victim " + victim.name() + " changed during training (epoch " +
                         std::to_string(epoch) + "): " + expected + " -> " + now);
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, const VictimModel& victim, const EvalSet& train_set,
                  const EvalSet& validation, const EpochObserver& observer) {
  config.validate(victim.num_classes());
  if (train_set.items.empty()) throw ContractError("training set is empty");
  if (validation.items.empty()) throw ContractError("validation set is empty");
  for (const auto* set : {&train_set, &validation}) {
    if (set->target_class != config.target_class) {
      throw ContractError("eval set was filtered for target " + std::to_string(set->target_class) +
                          ", training targets " + std::to_string(config.target_class));
    }
  }

  TrainHistory history;
  history.victim_fingerprint = fingerprint(victim);
  if (history.victim_fingerprint != victim.load_fingerprint()) {
    throw IntegrityError("victim " + victim.name() + " differs from its loaded weights");
  }

  const RandomStream root(config.root_seed);
  const GeneratorConfig gen_config = config.resolved_generator();
  GeneratorParams generator(gen_config);
  GeneratorOptimizer optimizer(config);
  const auto z_export = sample_latent(gen_config.latent_dim, derive_seed(config.root_seed, "latent"));

  AttackOptions validation_options;
  validation_options.placements_per_image = config.validation_placements;
  validation_options.seed = derive_seed(config.root_seed, "validation");
  validation_options.condition = "validation";

  {
    GeneratorParams initial = generator;
    const Patch patch = export_patch(initial, z_export);
    history.initial_asr =
        attack_success_rate(victim, patch, validation, config.target_class, validation_options).asr;
  }

  TrainResult result{Patch{}, generator, z_export, {}};
  double best_asr = -1.0;
  const std::size_t n = train_set.items.size();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    RandomStream shuffle = root.derive("shuffle", {epoch});
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    RandomStream placement_rng = root.derive("train-placement", {epoch});

    double loss_sum = 0.0, prob_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_index) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      std::vector<Image> images;
      std::vector<Placement> placements;
      for (std::size_t i = start; i < stop; ++i) {
        const Image& image = *train_set.items[order[i]].image;
        images.push_back(image);
        placements.push_back(sample_placement(image.dim(0), image.dim(1), config.patch_height,
                                              config.patch_width, placement_rng));
      }
      const LatentVector<float> z =
          config.latent_policy == LatentPolicy::fixed
              ? z_export
              : sample_latent(gen_config.latent_dim,
                              derive_seed(config.root_seed, "latent", {epoch, batch_index}));
      const auto step = train_step(generator, optimizer, victim, images, placements, z,
                                   config.target_class);
      const double weight = static_cast<double>(stop - start);
      loss_sum += step.loss * weight;
      prob_sum += step.mean_target_probability * weight;
    }

    GeneratorParams snapshot = generator;
    const Patch patch = export_patch(snapshot, z_export);
    const EvalRow row =
        attack_success_rate(victim, patch, validation, config.target_class, validation_options);
    assert_frozen(victim, history.victim_fingerprint, epoch);

    EpochRecord record;
    record.epoch = epoch;
    record.mean_loss = loss_sum / static_cast<double>(n);
    record.mean_target_probability = prob_sum / static_cast<double>(n);
    record.validation_p = row.p;
    record.validation_q = row.q;
    record.validation_asr = row.asr;
    record.patch_digest = patch_digest(patch);
    history.epochs.push_back(record);
    if (row.asr > best_asr) {
      best_asr = row.asr;
      history.best_epoch = epoch;
      result.best_patch = patch;
      result.best_generator = std::move(snapshot);
    }
    if (observer) observer(record);
  }

  if (best_asr <= 0.0) {
    history.zero_asr_warning = true;
    history.best_epoch = config.epochs - 1;
    GeneratorParams last = generator;
    result.best_patch = export_patch(last, z_export);
    result.best_generator = std::move(last);
  }
  result.history = std::move(history);
  return result;
}

}  // namespace gpatch
