#pragma once

#include <cstddef>

// Dense compute kernels used by the generator and the victim networks.
//
// gpatch::kernels holds the OpenMP-parallel versions. Every kernel partitions
// work by output rows (or output channels), so each output element is
// accumulated by one thread in a fixed order and results do not depend on the
// thread count. gpatch::kernels::reference holds plain serial loop nests with
// identical signatures; they are kept for tests and for the benchmark.
namespace gpatch::kernels {

// C (m x n) = A (m x k) * B (k x n), or C += ... when accumulate is set.
template <typename T>
void matmul(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
            bool accumulate = false);

// C (m x n) = A (m x k) * B^T where B is stored (n x k).
template <typename T>
void matmul_bt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
               bool accumulate = false);

// C (m x n) = A^T * B where A is stored (k x m) and B is (k x n).
template <typename T>
void matmul_at(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
               bool accumulate = false);

struct ConvTransposeGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t in_height = 0;
  std::size_t in_width = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return (in_height - 1) * stride + kernel - 2 * padding; }
  std::size_t out_width() const { return (in_width - 1) * stride + kernel - 2 * padding; }
};

// Transposed 2-D convolution, no bias. Layouts: input {Cin, H, W},
// weight {Cin, Cout, K, K}, output {Cout, Ho, Wo}.
template <typename T>
void conv_transpose2d(const ConvTransposeGeometry& g, const T* input, const T* weight, T* output);

template <typename T>
void conv_transpose2d_backward_input(const ConvTransposeGeometry& g, const T* grad_output,
                                     const T* weight, T* grad_input);

// Accumulates into grad_weight.
template <typename T>
void conv_transpose2d_backward_weight(const ConvTransposeGeometry& g, const T* input,
                                      const T* grad_output, T* grad_weight);

}  // namespace gpatch::kernels

namespace gpatch::kernels::reference {

template <typename T>
void matmul(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
            bool accumulate = false);
template <typename T>
void matmul_bt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
               bool accumulate = false);
template <typename T>
void matmul_at(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
               bool accumulate = false);
template <typename T>
void conv_transpose2d(const ConvTransposeGeometry& g, const T* input, const T* weight, T* output);
template <typename T>
void conv_transpose2d_backward_input(const ConvTransposeGeometry& g, const T* grad_output,
                                     const T* weight, T* grad_input);
template <typename T>
void conv_transpose2d_backward_weight(const ConvTransposeGeometry& g, const T* input,
                                      const T* grad_output, T* grad_weight);

}  // namespace gpatch::kernels::reference
