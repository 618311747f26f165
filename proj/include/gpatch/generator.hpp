#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gpatch/kernels.hpp"
#include "gpatch/layers.hpp"
#include "gpatch/tensor.hpp"

namespace gpatch {

struct GeneratorConfig {
  std::size_t latent_dim = 100;
  // Output channels of the five stages; the last one is the RGB patch.
  std::vector<std::size_t> stage_channels{256, 128, 64, 32, 3};
  std::size_t patch_height = 80;
  std::size_t patch_width = 80;
  double k = 0.5;
  std::uint64_t init_seed = 0;
  // Permit sizes off the 16-pixel grid by centre-cropping the next larger output.
  bool allow_crop = false;
  double init_stddev = 0.02;

  // Throws ConfigError describing the first violated invariant.
  void validate() const;
};

// Side length produced by the stride schedule before any crop.
inline constexpr std::size_t kGeneratorUpsampling = 16;

// Th(x) = k * tanh(x) + k, elementwise. Output lies in [0, 2k].
template <typename T>
T threshold(T x, double k);
template <typename T>
std::vector<T> threshold(std::span<const T> x, double k);

template <typename T>
struct LatentVector {
  std::vector<T> values;
};

LatentVector<float> sample_latent(std::size_t latent_dim, std::uint64_t seed);

// A generated patch: {height, width, 3} pixels in [0, 2k].
struct Patch {
  Image pixels;
  double k = 0.5;

  std::size_t height() const { return pixels.dim(0); }
  std::size_t width() const { return pixels.dim(1); }
};

// Five-stage generator: a projection from the latent vector to a small
// spatial seed, three upsampling stages with batch norm + ReLU, and a last
// upsampling stage followed by the threshold layer.
template <typename T>
class Generator {
 public:
  struct Stage {
    kernels::ConvTransposeGeometry geometry;
    std::vector<T> weight;
    std::vector<T> weight_grad;
    // Normalisation parameters; empty for the last stage.
    std::vector<T> gamma, beta, gamma_grad, beta_grad;
    std::vector<T> running_mean, running_var;
    // Output bias; only the last stage has one.
    std::vector<T> bias, bias_grad;
  };

  // Activations kept for the backward pass of one training-mode forward.
  struct Trace {
    std::vector<std::vector<T>> stage_inputs;
    std::vector<std::vector<T>> activations;  // post-ReLU of stages 0..3
    std::vector<nn::NormCache<T>> norms;
    std::vector<T> squashed;  // tanh of the last stage's pre-activation
    Tensor<T> patch;
  };

  explicit Generator(const GeneratorConfig& config);

  const GeneratorConfig& config() const { return config_; }
  std::size_t generated_height() const { return seed_height_ * kGeneratorUpsampling; }
  std::size_t generated_width() const { return seed_width_ * kGeneratorUpsampling; }
  const std::vector<Stage>& stages() const { return stages_; }
  std::vector<Stage>& stages() { return stages_; }

  // Batch statistics; updates running statistics when update_running is set.
  Trace forward_train(const LatentVector<T>& z, bool update_running = true);
  // Running statistics; pure.
  Tensor<T> forward_inference(const LatentVector<T>& z) const;
  // Accumulates parameter gradients from d(loss)/d(patch).
  void backward(const Trace& trace, const Tensor<T>& patch_grad);

  // Replace running statistics with the batch statistics at z, so that
  // inference at z reproduces the training-mode patch exactly.
  void freeze_statistics(const LatentVector<T>& z);

  void zero_grad();
  std::vector<nn::ParamRef<T>> parameters();
  std::size_t parameter_count() const;
  // Concatenated bytes of every parameter and running statistic.
  std::vector<std::byte> serialize() const;

  template <typename U>
  Generator<U> cast() const;

 private:
  template <typename U>
  friend class Generator;

  void check_latent(const LatentVector<T>& z) const;
  Tensor<T> crop_to_patch(const std::vector<T>& chw) const;
  void uncrop_gradient(const Tensor<T>& patch_grad, std::vector<T>& chw) const;

  GeneratorConfig config_;
  std::size_t seed_height_ = 0;
  std::size_t seed_width_ = 0;
  std::vector<Stage> stages_;
};

using GeneratorParams = Generator<float>;

GeneratorParams build_generator(const GeneratorConfig& config);

// Inference-mode patch for latent z.
Patch generate(const GeneratorParams& params, const LatentVector<float>& z);

}  // namespace gpatch
