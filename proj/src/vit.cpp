#include "gpatch/vit.hpp"

#include <algorithm>
#include <cmath>

#include "gpatch/error.hpp"
#include "gpatch/kernels.hpp"
#include "gpatch/rng.hpp"

namespace gpatch {

void VitConfig::validate() const {
  if (patch_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("vit image_size must be a multiple of patch_size");
  }
  if (dim == 0 || depth == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("vit dim must be a positive multiple of heads, depth positive");
  }
  if (mlp_dim == 0 || num_classes == 0) {
    throw ConfigError("vit mlp_dim and num_classes must be positive");
  }
  if (pool != "token" && pool != "avg") throw ConfigError("vit pool must be 'token' or 'avg'");
  for (const float s : stddev) {
    if (!(s > 0.0f)) throw ConfigError("vit normalisation stddev must be positive");
  }
}

template <typename T>
VisionTransformer<T>::VisionTransformer(const VitConfig& config) : config_(config) {
  config_.validate();
  params_.blocks.resize(config_.depth);
  visit_vit_params(config_, params_, [](const std::string& name, const Shape& shape,
                                        std::vector<T>& values) {
    const bool gain = name.ends_with("norm1.weight") || name.ends_with("norm2.weight") ||
                      name == "norm.weight" || name == "fc_norm.weight";
    values.assign(shape_size(shape), gain ? T{1} : T{0});
  });
}

template <typename T>
VisionTransformer<T> VisionTransformer<T>::random(const VitConfig& config, std::uint64_t seed,
                                                  double stddev) {
  VisionTransformer net(config);
  const RandomStream root(seed);
  std::uint64_t index = 0;
  visit_vit_params(net.config_, net.params_, [&](const std::string& name, const Shape& shape,
                                                 std::vector<T>& values) {
    RandomStream rng = root.derive("vit-param", {index++});
    const bool matrix = name.ends_with(".weight") && name.find("norm") == std::string::npos;
    double sd = stddev;
    if (matrix && stddev <= 0.0) sd = 1.0 / std::sqrt(static_cast<double>(shape_size(shape) / shape[0]));
    if (!matrix && stddev <= 0.0) sd = 0.02;
    if (matrix || name == "cls_token" || name == "pos_embed") {
      for (auto& v : values) v = static_cast<T>(rng.normal(0.0, sd));
    }
  });
  return net;
}

template <typename T>
VitParams<T> VisionTransformer<T>::zero_like() const {
  VitParams<T> grads;
  grads.blocks.resize(config_.depth);
  visit_vit_params(config_, grads, [](const std::string&, const Shape& shape,
                                      std::vector<T>& values) {
    values.assign(shape_size(shape), T{0});
  });
  return grads;
}

template <typename T>
void VisionTransformer<T>::check_image(const Tensor<T>& image) const {
  const Shape expected{config_.image_size, config_.image_size, 3};
  if (image.shape() != expected) {
    throw ContractError("victim expects images of shape " + shape_string(expected) + ", got " +
                        shape_string(image.shape()) + " (inputs are never resized)");
  }
  for (const T v : image.values()) {
    if (!(v >= T{0} && v <= T{1})) {
      throw ContractError("victim inputs must lie in [0,1]; callers never pre-normalise");
    }
  }
}

template <typename T>
std::vector<T> VisionTransformer<T>::forward(const Tensor<T>& image, Trace* trace) const {
  check_image(image);
  const VitConfig& c = config_;
  const std::size_t d = c.dim;
  const std::size_t p = c.patch_size;
  const std::size_t grid = c.grid();
  const std::size_t tokens = c.tokens();
  const std::size_t seq = c.sequence();
  const std::size_t pv = c.patch_values();
  const std::size_t heads = c.heads;
  const std::size_t hd = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));

  // Normalised pixels gathered per token in (channel, ky, kx) order.
  std::vector<T> patches(tokens * pv);
  std::array<T, 3> mean{}, inv_std{};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    mean[ch] = static_cast<T>(c.mean[ch]);
    inv_std[ch] = T{1} / static_cast<T>(c.stddev[ch]);
  }
  for (std::size_t ty = 0; ty < grid; ++ty) {
    for (std::size_t tx = 0; tx < grid; ++tx) {
      T* row = patches.data() + (ty * grid + tx) * pv;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t ky = 0; ky < p; ++ky) {
          for (std::size_t kx = 0; kx < p; ++kx) {
            row[(ch * p + ky) * p + kx] =
                (image.at(ty * p + ky, tx * p + kx, ch) - mean[ch]) * inv_std[ch];
          }
        }
      }
    }
  }

  std::vector<T> x(seq * d);
  nn::linear_forward(tokens, pv, d, patches.data(), params_.patch_w.data(),
                     params_.patch_b.data(), x.data() + d);
  for (std::size_t j = 0; j < d; ++j) x[j] = params_.cls_token[j];
  for (std::size_t i = 0; i < seq * d; ++i) x[i] += params_.pos_embed[i];

  if (trace != nullptr) {
    trace->patches = std::move(patches);
    trace->blocks.assign(c.depth, {});
  }

  std::vector<T> h(seq * d), qkv(seq * 3 * d), heads_out(seq * d), attn(heads * seq * seq);
  std::vector<T> qh(seq * hd), kh(seq * hd), vh(seq * hd), oh(seq * hd), tmp(seq * d);
  std::vector<T> fc1(seq * c.mlp_dim), act(seq * c.mlp_dim);
  for (std::size_t b = 0; b < c.depth; ++b) {
    const auto& bp = params_.blocks[b];
    BlockTrace local;
    BlockTrace& bt = trace != nullptr ? trace->blocks[b] : local;
    if (trace != nullptr) bt.input = x;

    nn::layer_norm_forward(seq, d, x.data(), bp.norm1_w.data(), bp.norm1_b.data(), c.norm_eps,
                           h.data(), bt.norm1);
    nn::linear_forward(seq, d, 3 * d, h.data(), bp.qkv_w.data(), bp.qkv_b.data(), qkv.data());
    for (std::size_t hi = 0; hi < heads; ++hi) {
      for (std::size_t s = 0; s < seq; ++s) {
        const T* row = qkv.data() + s * 3 * d + hi * hd;
        std::copy(row, row + hd, qh.data() + s * hd);
        std::copy(row + d, row + d + hd, kh.data() + s * hd);
        std::copy(row + 2 * d, row + 2 * d + hd, vh.data() + s * hd);
      }
      T* a = attn.data() + hi * seq * seq;
      kernels::matmul_bt(seq, seq, hd, qh.data(), kh.data(), a);
      for (std::size_t i = 0; i < seq * seq; ++i) a[i] *= scale;
      nn::softmax_rows(seq, seq, a);
      kernels::matmul(seq, hd, seq, a, vh.data(), oh.data());
      for (std::size_t s = 0; s < seq; ++s) {
        std::copy(oh.data() + s * hd, oh.data() + (s + 1) * hd, heads_out.data() + s * d + hi * hd);
      }
    }
    nn::linear_forward(seq, d, d, heads_out.data(), bp.proj_w.data(), bp.proj_b.data(), tmp.data());
    for (std::size_t i = 0; i < seq * d; ++i) x[i] += tmp[i];
    if (trace != nullptr) {
      bt.h1 = h;
      bt.qkv = qkv;
      bt.attn = attn;
      bt.heads_out = heads_out;
      bt.mid = x;
    }

    nn::layer_norm_forward(seq, d, x.data(), bp.norm2_w.data(), bp.norm2_b.data(), c.norm_eps,
                           h.data(), bt.norm2);
    nn::linear_forward(seq, d, c.mlp_dim, h.data(), bp.fc1_w.data(), bp.fc1_b.data(), fc1.data());
    nn::gelu_forward(fc1.size(), fc1.data(), act.data());
    nn::linear_forward(seq, c.mlp_dim, d, act.data(), bp.fc2_w.data(), bp.fc2_b.data(), tmp.data());
    for (std::size_t i = 0; i < seq * d; ++i) x[i] += tmp[i];
    if (trace != nullptr) {
      bt.h2 = h;
      bt.fc1 = fc1;
      bt.act = act;
    }
  }

  // Either the class token or the patch-token mean feeds the head.
  std::vector<T> head_in(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(d));
  if (c.pool == "avg") {
    std::fill(head_in.begin(), head_in.end(), T{0});
    for (std::size_t s = 1; s < seq; ++s) {
      for (std::size_t j = 0; j < d; ++j) head_in[j] += x[s * d + j];
    }
    for (auto& v : head_in) v /= static_cast<T>(tokens);
  }
  std::vector<T> pooled(d);
  nn::NormCache<T> final_norm;
  nn::layer_norm_forward(1, d, head_in.data(), params_.norm_w.data(), params_.norm_b.data(),
                         c.norm_eps, pooled.data(), final_norm);
  std::vector<T> out(c.num_classes);
  nn::linear_forward(1, d, c.num_classes, pooled.data(), params_.head_w.data(),
                     params_.head_b.data(), out.data());
  if (trace != nullptr) {
    trace->final_in = std::move(head_in);
    trace->pooled = std::move(pooled);
    trace->final_norm = std::move(final_norm);
  }
  return out;
}

template <typename T>
Tensor<T> VisionTransformer<T>::backward(const Trace& trace, std::span<const T> dlogits,
                                         VitParams<T>* grads, bool want_input) const {
  const VitConfig& c = config_;
  if (dlogits.size() != c.num_classes) {
    throw ContractError("logit gradient has " + std::to_string(dlogits.size()) +
                        " entries, model has " + std::to_string(c.num_classes) + " classes");
  }
  const std::size_t d = c.dim;
  const std::size_t p = c.patch_size;
  const std::size_t grid = c.grid();
  const std::size_t tokens = c.tokens();
  const std::size_t seq = c.sequence();
  const std::size_t pv = c.patch_values();
  const std::size_t heads = c.heads;
  const std::size_t hd = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));
  auto g = [grads](auto member) -> T* { return grads != nullptr ? member(*grads) : nullptr; };

  std::vector<T> dpooled(d);
  nn::linear_backward(1, d, c.num_classes, trace.pooled.data(), params_.head_w.data(),
                      dlogits.data(), dpooled.data(),
                      g([](VitParams<T>& q) { return q.head_w.data(); }),
                      g([](VitParams<T>& q) { return q.head_b.data(); }));
  std::vector<T> dx(seq * d, T{0});
  std::vector<T> dhead_in(d);
  nn::layer_norm_backward(1, d, trace.final_norm, params_.norm_w.data(), dpooled.data(),
                          dhead_in.data(), g([](VitParams<T>& q) { return q.norm_w.data(); }),
                          g([](VitParams<T>& q) { return q.norm_b.data(); }));
  if (c.pool == "avg") {
    const T inv = T{1} / static_cast<T>(tokens);
    for (std::size_t s = 1; s < seq; ++s) {
      for (std::size_t j = 0; j < d; ++j) dx[s * d + j] = dhead_in[j] * inv;
    }
  } else {
    std::copy(dhead_in.begin(), dhead_in.end(), dx.begin());
  }

  std::vector<T> dh(seq * d), dtmp(seq * d), dact(seq * c.mlp_dim), dfc1(seq * c.mlp_dim);
  std::vector<T> dheads(seq * d), dqkv(seq * 3 * d), qh(seq * hd), kh(seq * hd), vh(seq * hd);
  std::vector<T> doh(seq * hd), da(seq * seq), dq(seq * hd), dk(seq * hd), dv(seq * hd);
  for (std::size_t b = c.depth; b-- > 0;) {
    const auto& bp = params_.blocks[b];
    const BlockTrace& bt = trace.blocks[b];
    VitBlockParams<T>* bg = grads != nullptr ? &grads->blocks[b] : nullptr;
    auto bgp = [bg](std::vector<T> VitBlockParams<T>::*member) -> T* {
      return bg != nullptr ? (bg->*member).data() : nullptr;
    };

    // MLP branch.
    nn::linear_backward(seq, c.mlp_dim, d, bt.act.data(), bp.fc2_w.data(), dx.data(), dact.data(),
                        bgp(&VitBlockParams<T>::fc2_w), bgp(&VitBlockParams<T>::fc2_b));
    nn::gelu_backward(dact.size(), bt.fc1.data(), dact.data(), dfc1.data());
    nn::linear_backward(seq, d, c.mlp_dim, bt.h2.data(), bp.fc1_w.data(), dfc1.data(), dh.data(),
                        bgp(&VitBlockParams<T>::fc1_w), bgp(&VitBlockParams<T>::fc1_b));
    nn::layer_norm_backward(seq, d, bt.norm2, bp.norm2_w.data(), dh.data(), dtmp.data(),
                            bgp(&VitBlockParams<T>::norm2_w), bgp(&VitBlockParams<T>::norm2_b));
    for (std::size_t i = 0; i < seq * d; ++i) dx[i] += dtmp[i];

    // Attention branch.
    nn::linear_backward(seq, d, d, bt.heads_out.data(), bp.proj_w.data(), dx.data(), dheads.data(),
                        bgp(&VitBlockParams<T>::proj_w), bgp(&VitBlockParams<T>::proj_b));
    for (std::size_t hi = 0; hi < heads; ++hi) {
      for (std::size_t s = 0; s < seq; ++s) {
        const T* row = bt.qkv.data() + s * 3 * d + hi * hd;
        std::copy(row, row + hd, qh.data() + s * hd);
        std::copy(row + d, row + d + hd, kh.data() + s * hd);
        std::copy(row + 2 * d, row + 2 * d + hd, vh.data() + s * hd);
        const T* drow = dheads.data() + s * d + hi * hd;
        std::copy(drow, drow + hd, doh.data() + s * hd);
      }
      const T* a = bt.attn.data() + hi * seq * seq;
      kernels::matmul_bt(seq, seq, hd, doh.data(), vh.data(), da.data());
      kernels::matmul_at(seq, hd, seq, a, doh.data(), dv.data());
      for (std::size_t r = 0; r < seq; ++r) {
        const T* ar = a + r * seq;
        T* dar = da.data() + r * seq;
        T dot{0};
        for (std::size_t j = 0; j < seq; ++j) dot += ar[j] * dar[j];
        for (std::size_t j = 0; j < seq; ++j) dar[j] = ar[j] * (dar[j] - dot) * scale;
      }
      kernels::matmul(seq, hd, seq, da.data(), kh.data(), dq.data());
      kernels::matmul_at(seq, hd, seq, da.data(), qh.data(), dk.data());
      for (std::size_t s = 0; s < seq; ++s) {
        T* row = dqkv.data() + s * 3 * d + hi * hd;
        std::copy(dq.data() + s * hd, dq.data() + (s + 1) * hd, row);
        std::copy(dk.data() + s * hd, dk.data() + (s + 1) * hd, row + d);
        std::copy(dv.data() + s * hd, dv.data() + (s + 1) * hd, row + 2 * d);
      }
    }
    nn::linear_backward(seq, d, 3 * d, bt.h1.data(), bp.qkv_w.data(), dqkv.data(), dh.data(),
                        bgp(&VitBlockParams<T>::qkv_w), bgp(&VitBlockParams<T>::qkv_b));
    nn::layer_norm_backward(seq, d, bt.norm1, bp.norm1_w.data(), dh.data(), dtmp.data(),
                            bgp(&VitBlockParams<T>::norm1_w), bgp(&VitBlockParams<T>::norm1_b));
    for (std::size_t i = 0; i < seq * d; ++i) dx[i] += dtmp[i];
  }

  if (grads != nullptr) {
    for (std::size_t i = 0; i < seq * d; ++i) grads->pos_embed[i] += dx[i];
    for (std::size_t j = 0; j < d; ++j) grads->cls_token[j] += dx[j];
  }
  const T* dtokens = dx.data() + d;
  std::vector<T> dpatches;
  if (want_input) dpatches.resize(tokens * pv);
  nn::linear_backward(tokens, pv, d, trace.patches.data(), params_.patch_w.data(), dtokens,
                      want_input ? dpatches.data() : nullptr,
                      g([](VitParams<T>& q) { return q.patch_w.data(); }),
                      g([](VitParams<T>& q) { return q.patch_b.data(); }));
  if (!want_input) return {};

  Tensor<T> dimage({c.image_size, c.image_size, 3});
  for (std::size_t ty = 0; ty < grid; ++ty) {
    for (std::size_t tx = 0; tx < grid; ++tx) {
      const T* row = dpatches.data() + (ty * grid + tx) * pv;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const T inv_std = T{1} / static_cast<T>(c.stddev[ch]);
        for (std::size_t ky = 0; ky < p; ++ky) {
          for (std::size_t kx = 0; kx < p; ++kx) {
            dimage.at(ty * p + ky, tx * p + kx, ch) = row[(ch * p + ky) * p + kx] * inv_std;
          }
        }
      }
    }
  }
  return dimage;
}

template <typename T>
std::vector<T> VisionTransformer<T>::logits(const Tensor<T>& image) const {
  return forward(image, nullptr);
}

template <typename T>
std::vector<T> VisionTransformer<T>::logits_and_input_gradient(
    const Tensor<T>& image, const LogitGradient<T>& loss_gradient, Tensor<T>& grad_image) const {
  Trace trace;
  std::vector<T> out = forward(image, &trace);
  const std::vector<T> dlogits = loss_gradient(out);
  grad_image = backward(trace, dlogits, nullptr, true);
  return out;
}

template <typename T>
void VisionTransformer<T>::for_each_parameter(
    const std::function<void(const std::string&, const Shape&, std::span<const T>)>& fn) const {
  visit_vit_params(config_, params_, [&fn](const std::string& name, const Shape& shape,
                                           const std::vector<T>& values) {
    fn(name, shape, std::span<const T>(values));
  });
}

template <typename T>
template <typename U>
VisionTransformer<U> VisionTransformer<T>::cast() const {
  VisionTransformer<U> out(config_);
  std::vector<const std::vector<T>*> sources;
  visit_vit_params(config_, params_, [&sources](const std::string&, const Shape&,
                                                const std::vector<T>& v) { sources.push_back(&v); });
  std::size_t i = 0;
  visit_vit_params(out.config(), out.params(), [&](const std::string&, const Shape&,
                                                   std::vector<U>& v) {
    v.assign(sources[i]->begin(), sources[i]->end());
    ++i;
  });
  return out;
}

template class VisionTransformer<float>;
template class VisionTransformer<double>;
template VisionTransformer<double> VisionTransformer<float>::cast<double>() const;
template VisionTransformer<float> VisionTransformer<double>::cast<float>() const;

}  // namespace gpatch
