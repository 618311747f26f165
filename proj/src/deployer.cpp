#include "gpatch/deployer.hpp"

#include <algorithm>

#include "gpatch/error.hpp"

namespace gpatch {
namespace {

void check_image_like(const Shape& shape, const char* what) {
  if (shape.size() != 3 || shape[2] == 0) {
    throw ContractError(std::string(what) + " must be {height, width, channels}, got " +
                        shape_string(shape));
  }
}

}  // namespace

std::size_t Mask::channel_sum(std::size_t c) const {
  std::size_t sum = 0;
  for (std::size_t i = c; i < bits.size(); i += channels) sum += bits[i];
  return sum;
}

Placement sample_placement(std::size_t image_h, std::size_t image_w, std::size_t patch_h,
                           std::size_t patch_w, RandomStream& rng) {
  if (patch_h > image_h || patch_w > image_w) {
    throw ContractError("patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                        " does not fit in image " + std::to_string(image_h) + "x" +
                        std::to_string(image_w));
  }
  const auto row = rng.uniform_int(0, static_cast<std::int64_t>(image_h - patch_h));
  const auto col = rng.uniform_int(0, static_cast<std::int64_t>(image_w - patch_w));
  return {static_cast<std::size_t>(row), static_cast<std::size_t>(col)};
}

void check_placement(const Shape& image_shape, const Shape& patch_shape, Placement placement) {
  check_image_like(image_shape, "image");
  check_image_like(patch_shape, "patch");
  if (image_shape[2] != patch_shape[2]) {
    throw ContractError("patch has " + std::to_string(patch_shape[2]) + " channels, image has " +
                        std::to_string(image_shape[2]));
  }
  if (patch_shape[0] > image_shape[0] || patch_shape[1] > image_shape[1]) {
    throw ContractError("patch " + shape_string(patch_shape) + " larger than image " +
                        shape_string(image_shape));
  }
  if (placement.row > image_shape[0] - patch_shape[0] ||
      placement.col > image_shape[1] - patch_shape[1]) {
    throw ContractError("placement (" + std::to_string(placement.row) + ", " +
                        std::to_string(placement.col) + ") puts patch " +
                        shape_string(patch_shape) + " outside image " +
                        shape_string(image_shape));
  }
}

Mask make_mask(const Shape& image_shape, const Shape& patch_shape, Placement placement) {
  check_placement(image_shape, patch_shape, placement);
  Mask mask{image_shape[0], image_shape[1], image_shape[2],
            std::vector<std::uint8_t>(shape_size(image_shape), 0)};
  for (std::size_t y = placement.row; y < placement.row + patch_shape[0]; ++y) {
    auto first = mask.bits.begin() +
                 static_cast<std::ptrdiff_t>((y * mask.width + placement.col) * mask.channels);
    std::fill(first, first + static_cast<std::ptrdiff_t>(patch_shape[1] * mask.channels), 1);
  }
  return mask;
}

template <typename T>
Tensor<T> compose_pixels(const Tensor<T>& patch, const Tensor<T>& image, Placement placement) {
  check_placement(image.shape(), patch.shape(), placement);
  Tensor<T> out = image;
  const std::size_t row_values = patch.dim(1) * patch.dim(2);
  for (std::size_t y = 0; y < patch.dim(0); ++y) {
    const T* src = patch.data() + y * row_values;
    T* dst = out.data() + ((placement.row + y) * image.dim(1) + placement.col) * image.dim(2);
    std::copy(src, src + row_values, dst);
  }
  return out;
}

template <typename T>
void accumulate_patch_gradient(const Tensor<T>& image_grad, Placement placement,
                               Tensor<T>& patch_grad) {
  check_placement(image_grad.shape(), patch_grad.shape(), placement);
  const std::size_t row_values = patch_grad.dim(1) * patch_grad.dim(2);
  for (std::size_t y = 0; y < patch_grad.dim(0); ++y) {
    const T* src = image_grad.data() +
                   ((placement.row + y) * image_grad.dim(1) + placement.col) * image_grad.dim(2);
    T* dst = patch_grad.data() + y * row_values;
    for (std::size_t i = 0; i < row_values; ++i) dst[i] += src[i];
  }
}

Image compose(const Patch& patch, const Image& image, Placement placement) {
  return compose_pixels(patch.pixels, image, placement);
}

template Tensor<float> compose_pixels<float>(const Tensor<float>&, const Tensor<float>&, Placement);
template Tensor<double> compose_pixels<double>(const Tensor<double>&, const Tensor<double>&,
                                               Placement);
template void accumulate_patch_gradient<float>(const Tensor<float>&, Placement, Tensor<float>&);
template void accumulate_patch_gradient<double>(const Tensor<double>&, Placement, Tensor<double>&);

}  // namespace gpatch
