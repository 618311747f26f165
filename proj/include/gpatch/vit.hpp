#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gpatch/layers.hpp"
#include "gpatch/tensor.hpp"

namespace gpatch {

// d(loss)/d(logits) as a function of the logits.
template <typename T>
using LogitGradient = std::function<std::vector<T>(std::span<const T> logits)>;

// A frozen image classifier. Inputs are {size, size, 3} images with values in
// [0,1]; input normalisation is internal to the network.
template <typename T>
class VictimNetwork {
 public:
  virtual ~VictimNetwork() = default;

  virtual std::string architecture() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual std::size_t input_size() const = 0;

  virtual std::vector<T> logits(const Tensor<T>& image) const = 0;
  // One forward and backward pass. Returns the logits and writes the
  // gradient of the loss with respect to the image into grad_image.
  virtual std::vector<T> logits_and_input_gradient(const Tensor<T>& image,
                                                   const LogitGradient<T>& loss_gradient,
                                                   Tensor<T>& grad_image) const = 0;

  // Parameters in canonical order.
  virtual void for_each_parameter(
      const std::function<void(const std::string&, const Shape&, std::span<const T>)>& fn)
      const = 0;
};

struct VitConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 16;
  std::size_t dim = 768;
  std::size_t depth = 12;
  std::size_t heads = 12;
  std::size_t mlp_dim = 3072;
  std::size_t num_classes = 1000;
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> stddev{0.5f, 0.5f, 0.5f};
  double norm_eps = 1e-6;
  // "token": class token through the final norm; "avg": mean of the patch
  // tokens through fc_norm (no final norm before pooling).
  std::string pool = "token";

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t sequence() const { return tokens() + 1; }
  std::size_t patch_values() const { return 3 * patch_size * patch_size; }
  void validate() const;
};

template <typename T>
struct VitBlockParams {
  std::vector<T> norm1_w, norm1_b, qkv_w, qkv_b, proj_w, proj_b;
  std::vector<T> norm2_w, norm2_b, fc1_w, fc1_b, fc2_w, fc2_b;
};

// Linear weights use the {out, in} layout; patch_w is {dim, 3, p, p}.
template <typename T>
struct VitParams {
  std::vector<T> patch_w, patch_b, cls_token, pos_embed;
  std::vector<VitBlockParams<T>> blocks;
  std::vector<T> norm_w, norm_b, head_w, head_b;
};

// Calls fn(name, shape, vector&) for every parameter in canonical order.
// P is VitParams<T> or const VitParams<T>.
template <typename P, typename F>
void visit_vit_params(const VitConfig& c, P& p, F&& fn) {
  const std::size_t d = c.dim;
  fn("patch_embed.proj.weight", Shape{d, 3, c.patch_size, c.patch_size}, p.patch_w);
  fn("patch_embed.proj.bias", Shape{d}, p.patch_b);
  fn("cls_token", Shape{1, 1, d}, p.cls_token);
  fn("pos_embed", Shape{1, c.sequence(), d}, p.pos_embed);
  for (std::size_t i = 0; i < c.depth; ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "blocks." + std::to_string(i) + ".";
    fn(pre + "norm1.weight", Shape{d}, b.norm1_w);
    fn(pre + "norm1.bias", Shape{d}, b.norm1_b);
    fn(pre + "attn.qkv.weight", Shape{3 * d, d}, b.qkv_w);
    fn(pre + "attn.qkv.bias", Shape{3 * d}, b.qkv_b);
    fn(pre + "attn.proj.weight", Shape{d, d}, b.proj_w);
    fn(pre + "attn.proj.bias", Shape{d}, b.proj_b);
    fn(pre + "norm2.weight", Shape{d}, b.norm2_w);
    fn(pre + "norm2.bias", Shape{d}, b.norm2_b);
    fn(pre + "mlp.fc1.weight", Shape{c.mlp_dim, d}, b.fc1_w);
    fn(pre + "mlp.fc1.bias", Shape{c.mlp_dim}, b.fc1_b);
    fn(pre + "mlp.fc2.weight", Shape{d, c.mlp_dim}, b.fc2_w);
    fn(pre + "mlp.fc2.bias", Shape{d}, b.fc2_b);
  }
  const std::string final_norm = c.pool == "avg" ? "fc_norm" : "norm";
  fn(final_norm + ".weight", Shape{d}, p.norm_w);
  fn(final_norm + ".bias", Shape{d}, p.norm_b);
  fn("head.weight", Shape{c.num_classes, d}, p.head_w);
  fn("head.bias", Shape{c.num_classes}, p.head_b);
}

// Pre-norm vision transformer with a class token (the layout used by the
// common ViT-B/16 and ViT-L/16 checkpoints).
template <typename T>
class VisionTransformer final : public VictimNetwork<T> {
 public:
  struct BlockTrace {
    std::vector<T> input, h1, qkv, attn, heads_out, mid, h2, fc1, act;
    nn::NormCache<T> norm1, norm2;
  };
  struct Trace {
    std::vector<T> patches;
    std::vector<BlockTrace> blocks;
    std::vector<T> final_in, pooled;
    nn::NormCache<T> final_norm;
  };

  // Zero-initialised parameters with unit norm gains.
  explicit VisionTransformer(const VitConfig& config);
  // Normal(0, stddev) weights, zero biases, for training from scratch. A
  // non-positive stddev selects 1/sqrt(fan_in) for weight matrices.
  static VisionTransformer random(const VitConfig& config, std::uint64_t seed,
                                  double stddev = 0.02);

  const VitConfig& config() const { return config_; }
  VitParams<T>& params() { return params_; }
  const VitParams<T>& params() const { return params_; }
  VitParams<T> zero_like() const;

  std::vector<T> forward(const Tensor<T>& image, Trace* trace) const;
  // Gradients accumulate into grads (may be null). Returns the image gradient
  // when want_input is set, an empty tensor otherwise.
  Tensor<T> backward(const Trace& trace, std::span<const T> dlogits, VitParams<T>* grads,
                     bool want_input) const;

  std::string architecture() const override { return "vit"; }
  std::size_t num_classes() const override { return config_.num_classes; }
  std::size_t input_size() const override { return config_.image_size; }
  std::vector<T> logits(const Tensor<T>& image) const override;
  std::vector<T> logits_and_input_gradient(const Tensor<T>& image,
                                           const LogitGradient<T>& loss_gradient,
                                           Tensor<T>& grad_image) const override;
  void for_each_parameter(
      const std::function<void(const std::string&, const Shape&, std::span<const T>)>& fn)
      const override;

  template <typename U>
  VisionTransformer<U> cast() const;

 private:
  void check_image(const Tensor<T>& image) const;

  VitConfig config_;
  VitParams<T> params_;
};

}  // namespace gpatch
