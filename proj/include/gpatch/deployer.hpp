#pragma once

#include <compare>
#include <cstdint>
#include <vector>

#include "gpatch/generator.hpp"
#include "gpatch/rng.hpp"
#include "gpatch/tensor.hpp"

namespace gpatch {

// Top-left corner of the patch inside the image, in integer pixels.
struct Placement {
  std::size_t row = 0;
  std::size_t col = 0;

  auto operator<=>(const Placement&) const = default;
};

// Binary overlay mask {height, width, channels}; ones on one axis-aligned
// rectangle, identical in every channel.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> bits;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return bits[(y * width + x) * channels + c];
  }
  std::size_t channel_sum(std::size_t c) const;
};

// Uniform over the (image_h - patch_h + 1) * (image_w - patch_w + 1) positions
// that keep the patch fully inside the image.
Placement sample_placement(std::size_t image_h, std::size_t image_w, std::size_t patch_h,
                           std::size_t patch_w, RandomStream& rng);

Mask make_mask(const Shape& image_shape, const Shape& patch_shape, Placement placement);

// T(p, x) = M * p + (1 - M) * x: the patch replaces the covered pixels,
// everything else is copied bit-exactly.
Image compose(const Patch& patch, const Image& image, Placement placement);

template <typename T>
Tensor<T> compose_pixels(const Tensor<T>& patch, const Tensor<T>& image, Placement placement);

// Adjoint of compose with respect to the patch: adds the image gradient
// under the mask rectangle into patch_grad.
template <typename T>
void accumulate_patch_gradient(const Tensor<T>& image_grad, Placement placement,
                               Tensor<T>& patch_grad);

void check_placement(const Shape& image_shape, const Shape& patch_shape, Placement placement);

}  // namespace gpatch
