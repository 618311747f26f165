#include "gpatch/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "gpatch/error.hpp"
#include "gpatch/rng.hpp"

namespace gpatch {
namespace {

constexpr std::size_t kStages = 5;
constexpr double kNormEps = 1e-5;
constexpr double kRunningMomentum = 0.1;

std::string achievable_sizes() {
  std::ostringstream out;
  out << "multiples of " << kGeneratorUpsampling << " (";
  for (std::size_t s = 2; s <= 7; ++s) out << s * kGeneratorUpsampling << ", ";
  out << "...)";
  return out.str();
}

void check_side(const char* axis, std::size_t side, bool allow_crop) {
  // A 1x1 seed would make the first batch norm constant in the latent.
  if (side <= kGeneratorUpsampling) {
    throw ConfigError(std::string("patch ") + axis + " must exceed " +
                      std::to_string(kGeneratorUpsampling) + " pixels, got " + std::to_string(side));
  }
  if (side % kGeneratorUpsampling != 0 && !allow_crop) {
    throw ConfigError(std::string("patch ") + axis + " " + std::to_string(side) +
                      " is not reachable by the stride schedule; achievable sizes are " +
                      achievable_sizes() + ", or enable allow_crop");
  }
}

}  // namespace

void GeneratorConfig::validate() const {
  if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
  if (stage_channels.size() != kStages) {
    throw ConfigError("stage_channels must list exactly 5 stages, got " +
                      std::to_string(stage_channels.size()));
  }
  for (const std::size_t c : stage_channels) {
    if (c == 0) throw ConfigError("stage_channels entries must be positive");
  }
  if (stage_channels.back() != 3) {
    throw ConfigError("the last generator stage must output 3 channels");
  }
  if (!(k > 0.0) || k > 0.5) {
    throw ConfigError("k must lie in (0, 0.5], got " + std::to_string(k));
  }
  if (!(init_stddev > 0.0)) throw ConfigError("init_stddev must be positive");
  check_side("height", patch_height, allow_crop);
  check_side("width", patch_width, allow_crop);
}

template <typename T>
T threshold(T x, double k) {
  if (!(k > 0.0)) {
    throw ConfigError("threshold k must be positive, got " + std::to_string(k));
  }
  const T kk = static_cast<T>(k);
  return kk * std::tanh(x) + kk;
}

template <typename T>
std::vector<T> threshold(std::span<const T> x, double k) {
  if (!(k > 0.0)) {
    throw ConfigError("threshold k must be positive, got " + std::to_string(k));
  }
  std::vector<T> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [k](T v) { return threshold(v, k); });
  return out;
}

LatentVector<float> sample_latent(std::size_t latent_dim, std::uint64_t seed) {
  RandomStream rng(seed);
  LatentVector<float> z;
  z.values.resize(latent_dim);
  for (auto& v : z.values) v = static_cast<float>(rng.normal());
  return z;
}

template <typename T>
Generator<T>::Generator(const GeneratorConfig& config) : config_(config) {
  config_.validate();
  seed_height_ = (config_.patch_height + kGeneratorUpsampling - 1) / kGeneratorUpsampling;
  seed_width_ = (config_.patch_width + kGeneratorUpsampling - 1) / kGeneratorUpsampling;
  if (seed_height_ != seed_width_) {
    // The projection stage is a transposed convolution from a 1x1 input with
    // a square kernel, so the spatial seed must be square.
    throw ConfigError("patch height and width must round to the same 16-pixel multiple");
  }
  const RandomStream root(config_.init_seed);
  std::size_t in_channels = config_.latent_dim;
  std::size_t side = 1;
  stages_.resize(kStages);
  for (std::size_t s = 0; s < kStages; ++s) {
    Stage& stage = stages_[s];
    auto& g = stage.geometry;
    g.in_channels = in_channels;
    g.out_channels = config_.stage_channels[s];
    g.in_height = side;
    g.in_width = side;
    if (s == 0) {
      g.kernel = seed_height_;
      g.stride = 1;
      g.padding = 0;
    } else {
      g.kernel = 4;
      g.stride = 2;
      g.padding = 1;
    }
    const std::size_t weights = g.in_channels * g.out_channels * g.kernel * g.kernel;
    RandomStream rng = root.derive("generator-stage", {s});
    stage.weight.resize(weights);
    for (auto& w : stage.weight) w = static_cast<T>(rng.normal(0.0, config_.init_stddev));
    stage.weight_grad.assign(weights, T{0});
    if (s + 1 < kStages) {
      stage.gamma.assign(g.out_channels, T{1});
      stage.beta.assign(g.out_channels, T{0});
      stage.gamma_grad.assign(g.out_channels, T{0});
      stage.beta_grad.assign(g.out_channels, T{0});
      stage.running_mean.assign(g.out_channels, T{0});
      stage.running_var.assign(g.out_channels, T{1});
    } else {
      stage.bias.assign(g.out_channels, T{0});
      stage.bias_grad.assign(g.out_channels, T{0});
    }
    in_channels = g.out_channels;
    side = g.out_height();
  }
}

template <typename T>
void Generator<T>::check_latent(const LatentVector<T>& z) const {
  if (z.values.size() != config_.latent_dim) {
    throw ContractError("latent vector has length " + std::to_string(z.values.size()) +
                        ", generator expects " + std::to_string(config_.latent_dim));
  }
}

template <typename T>
Tensor<T> Generator<T>::crop_to_patch(const std::vector<T>& chw) const {
  const std::size_t gh = generated_height();
  const std::size_t gw = generated_width();
  const std::size_t h = config_.patch_height;
  const std::size_t w = config_.patch_width;
  const std::size_t oy = (gh - h) / 2;
  const std::size_t ox = (gw - w) / 2;
  Tensor<T> patch({h, w, 3});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        patch.at(y, x, c) = chw[(c * gh + y + oy) * gw + x + ox];
      }
    }
  }
  return patch;
}

template <typename T>
void Generator<T>::uncrop_gradient(const Tensor<T>& patch_grad, std::vector<T>& chw) const {
  const std::size_t gh = generated_height();
  const std::size_t gw = generated_width();
  const std::size_t h = config_.patch_height;
  const std::size_t w = config_.patch_width;
  const std::size_t oy = (gh - h) / 2;
  const std::size_t ox = (gw - w) / 2;
  chw.assign(3 * gh * gw, T{0});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        chw[(c * gh + y + oy) * gw + x + ox] = patch_grad.at(y, x, c);
      }
    }
  }
}

template <typename T>
typename Generator<T>::Trace Generator<T>::forward_train(const LatentVector<T>& z,
                                                         bool update_running) {
  check_latent(z);
  Trace trace;
  trace.stage_inputs.resize(kStages);
  trace.activations.resize(kStages - 1);
  trace.norms.resize(kStages - 1);
  std::vector<T> x = z.values;
  for (std::size_t s = 0; s < kStages; ++s) {
    Stage& stage = stages_[s];
    const auto& g = stage.geometry;
    const std::size_t spatial = g.out_height() * g.out_width();
    std::vector<T> y(g.out_channels * spatial);
    kernels::conv_transpose2d(g, x.data(), stage.weight.data(), y.data());
    trace.stage_inputs[s] = std::move(x);
    if (s + 1 < kStages) {
      std::vector<T> mean, var;
      std::vector<T> normed(y.size());
      nn::batch_norm_train_forward(g.out_channels, spatial, y.data(), stage.gamma.data(),
                                   stage.beta.data(), kNormEps, normed.data(), trace.norms[s],
                                   &mean, &var);
      if (update_running) {
        const T m = static_cast<T>(kRunningMomentum);
        for (std::size_t c = 0; c < g.out_channels; ++c) {
          stage.running_mean[c] = (T{1} - m) * stage.running_mean[c] + m * mean[c];
          stage.running_var[c] = (T{1} - m) * stage.running_var[c] + m * var[c];
        }
      }
      for (auto& v : normed) v = std::max(v, T{0});
      trace.activations[s] = normed;
      x = std::move(normed);
    } else {
      trace.squashed.resize(y.size());
      for (std::size_t c = 0; c < g.out_channels; ++c) {
        for (std::size_t i = 0; i < spatial; ++i) {
          const std::size_t idx = c * spatial + i;
          trace.squashed[idx] = std::tanh(y[idx] + stage.bias[c]);
          y[idx] = threshold(y[idx] + stage.bias[c], config_.k);
        }
      }
      trace.patch = crop_to_patch(y);
    }
  }
  return trace;
}

template <typename T>
Tensor<T> Generator<T>::forward_inference(const LatentVector<T>& z) const {
  check_latent(z);
  std::vector<T> x = z.values;
  for (std::size_t s = 0; s < kStages; ++s) {
    const Stage& stage = stages_[s];
    const auto& g = stage.geometry;
    const std::size_t spatial = g.out_height() * g.out_width();
    std::vector<T> y(g.out_channels * spatial);
    kernels::conv_transpose2d(g, x.data(), stage.weight.data(), y.data());
    if (s + 1 < kStages) {
      nn::batch_norm_inference_forward(g.out_channels, spatial, y.data(), stage.gamma.data(),
                                       stage.beta.data(), stage.running_mean.data(),
                                       stage.running_var.data(), kNormEps, y.data());
      for (auto& v : y) v = std::max(v, T{0});
    } else {
      for (std::size_t c = 0; c < g.out_channels; ++c) {
        for (std::size_t i = 0; i < spatial; ++i) {
          y[c * spatial + i] = threshold(y[c * spatial + i] + stage.bias[c], config_.k);
        }
      }
    }
    x = std::move(y);
  }
  return crop_to_patch(x);
}

template <typename T>
void Generator<T>::backward(const Trace& trace, const Tensor<T>& patch_grad) {
  if (patch_grad.shape() != trace.patch.shape()) {
    throw ContractError("patch gradient shape " + shape_string(patch_grad.shape()) +
                        " does not match patch " + shape_string(trace.patch.shape()));
  }
  std::vector<T> grad;
  uncrop_gradient(patch_grad, grad);
  const T kk = static_cast<T>(config_.k);
  for (std::size_t s = kStages; s-- > 0;) {
    Stage& stage = stages_[s];
    const auto& g = stage.geometry;
    const std::size_t spatial = g.out_height() * g.out_width();
    if (s + 1 == kStages) {
      for (std::size_t c = 0; c < g.out_channels; ++c) {
        for (std::size_t i = 0; i < spatial; ++i) {
          const std::size_t idx = c * spatial + i;
          const T t = trace.squashed[idx];
          grad[idx] *= kk * (T{1} - t * t);
          stage.bias_grad[c] += grad[idx];
        }
      }
    } else {
      const auto& act = trace.activations[s];
      for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(act[i] > T{0})) grad[i] = T{0};
      }
      std::vector<T> pre(grad.size());
      nn::batch_norm_backward(g.out_channels, spatial, trace.norms[s], stage.gamma.data(),
                              grad.data(), pre.data(), stage.gamma_grad.data(),
                              stage.beta_grad.data());
      grad = std::move(pre);
    }
    kernels::conv_transpose2d_backward_weight(g, trace.stage_inputs[s].data(), grad.data(),
                                              stage.weight_grad.data());
    if (s > 0) {
      std::vector<T> below(g.in_channels * g.in_height * g.in_width);
      kernels::conv_transpose2d_backward_input(g, grad.data(), stage.weight.data(), below.data());
      grad = std::move(below);
    }
  }
}

template <typename T>
void Generator<T>::freeze_statistics(const LatentVector<T>& z) {
  check_latent(z);
  std::vector<T> x = z.values;
  for (std::size_t s = 0; s + 1 < kStages; ++s) {
    Stage& stage = stages_[s];
    const auto& g = stage.geometry;
    const std::size_t spatial = g.out_height() * g.out_width();
    std::vector<T> y(g.out_channels * spatial);
    kernels::conv_transpose2d(g, x.data(), stage.weight.data(), y.data());
    nn::NormCache<T> cache;
    std::vector<T> normed(y.size());
    nn::batch_norm_train_forward(g.out_channels, spatial, y.data(), stage.gamma.data(),
                                 stage.beta.data(), kNormEps, normed.data(), cache,
                                 &stage.running_mean, &stage.running_var);
    for (auto& v : normed) v = std::max(v, T{0});
    x = std::move(normed);
  }
}

template <typename T>
void Generator<T>::zero_grad() {
  for (auto& stage : stages_) {
    std::fill(stage.weight_grad.begin(), stage.weight_grad.end(), T{0});
    std::fill(stage.gamma_grad.begin(), stage.gamma_grad.end(), T{0});
    std::fill(stage.beta_grad.begin(), stage.beta_grad.end(), T{0});
    std::fill(stage.bias_grad.begin(), stage.bias_grad.end(), T{0});
  }
}

template <typename T>
std::vector<nn::ParamRef<T>> Generator<T>::parameters() {
  std::vector<nn::ParamRef<T>> refs;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    Stage& stage = stages_[s];
    const std::string prefix = "stage" + std::to_string(s) + ".";
    refs.push_back({prefix + "weight", stage.weight, stage.weight_grad});
    if (!stage.gamma.empty()) {
      refs.push_back({prefix + "gamma", stage.gamma, stage.gamma_grad});
      refs.push_back({prefix + "beta", stage.beta, stage.beta_grad});
    }
    if (!stage.bias.empty()) {
      refs.push_back({prefix + "bias", stage.bias, stage.bias_grad});
    }
  }
  return refs;
}

template <typename T>
std::size_t Generator<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& stage : stages_) {
    n += stage.weight.size() + stage.gamma.size() + stage.beta.size() + stage.bias.size();
  }
  return n;
}

template <typename T>
std::vector<std::byte> Generator<T>::serialize() const {
  std::vector<std::byte> out;
  auto append = [&out](const std::vector<T>& v) {
    const auto bytes = std::as_bytes(std::span<const T>(v));
    out.insert(out.end(), bytes.begin(), bytes.end());
  };
  for (const auto& stage : stages_) {
    append(stage.weight);
    append(stage.gamma);
    append(stage.beta);
    append(stage.running_mean);
    append(stage.running_var);
    append(stage.bias);
  }
  return out;
}

template <typename T>
template <typename U>
Generator<U> Generator<T>::cast() const {
  Generator<U> out(config_);
  auto convert = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    auto& dst = out.stages_[s];
    const auto& src = stages_[s];
    dst.weight = convert(src.weight);
    dst.gamma = convert(src.gamma);
    dst.beta = convert(src.beta);
    dst.running_mean = convert(src.running_mean);
    dst.running_var = convert(src.running_var);
    dst.bias = convert(src.bias);
  }
  out.zero_grad();
  return out;
}

GeneratorParams build_generator(const GeneratorConfig& config) { return GeneratorParams(config); }

Patch generate(const GeneratorParams& params, const LatentVector<float>& z) {
  return Patch{params.forward_inference(z), params.config().k};
}

template float threshold<float>(float, double);
template double threshold<double>(double, double);
template std::vector<float> threshold<float>(std::span<const float>, double);
template std::vector<double> threshold<double>(std::span<const double>, double);
template class Generator<float>;
template class Generator<double>;
template Generator<double> Generator<float>::cast<double>() const;
template Generator<float> Generator<double>::cast<float>() const;

}  // namespace gpatch
