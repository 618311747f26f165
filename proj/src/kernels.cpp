#include "gpatch/kernels.hpp"

#include <algorithm>
#include <vector>

namespace gpatch::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t r1 = std::min(rows, r0 + kBlock);
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) {
          dst[c * rows + r] = src[r * cols + c];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void matmul(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
            bool accumulate) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    T* __restrict__ crow = c + static_cast<std::size_t>(i) * n;
    if (!accumulate) {
      std::fill(crow, crow + n, T{0});
    }
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* __restrict__ brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void matmul_bt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
               bool accumulate) {
  std::vector<T> bt(n * k);
  transpose(n, k, b, bt.data());
  matmul(m, n, k, a, bt.data(), c, accumulate);
}

template <typename T>
void matmul_at(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
               bool accumulate) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    T* __restrict__ crow = c + static_cast<std::size_t>(i) * n;
    if (!accumulate) {
      std::fill(crow, crow + n, T{0});
    }
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p * m + static_cast<std::size_t>(i)];
      const T* __restrict__ brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

namespace {

// cols {(co, ky, kx), (iy, ix)} -> output {co, oy, ox}, summing overlaps.
template <typename T>
void col2im(const ConvTransposeGeometry& g, const T* cols, T* output) {
  const std::size_t kk = g.kernel * g.kernel;
  const std::size_t hw = g.in_height * g.in_width;
  const std::size_t oh = g.out_height();
  const std::size_t ow = g.out_width();
  const long channels = static_cast<long>(g.out_channels);
#pragma omp parallel for schedule(static) if (g.out_channels * kk * hw > kParallelWork)
  for (long co = 0; co < channels; ++co) {
    T* out = output + static_cast<std::size_t>(co) * oh * ow;
    std::fill(out, out + oh * ow, T{0});
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* col = cols + ((static_cast<std::size_t>(co) * g.kernel + ky) * g.kernel + kx) * hw;
        for (std::size_t iy = 0; iy < g.in_height; ++iy) {
          const long oy = static_cast<long>(iy * g.stride + ky) - static_cast<long>(g.padding);
          if (oy < 0 || oy >= static_cast<long>(oh)) continue;
          for (std::size_t ix = 0; ix < g.in_width; ++ix) {
            const long ox = static_cast<long>(ix * g.stride + kx) - static_cast<long>(g.padding);
            if (ox < 0 || ox >= static_cast<long>(ow)) continue;
            out[static_cast<std::size_t>(oy) * ow + static_cast<std::size_t>(ox)] +=
                col[iy * g.in_width + ix];
          }
        }
      }
    }
  }
}

// Gather of col2im's adjoint: output-shaped gradient -> cols layout.
template <typename T>
void im2col(const ConvTransposeGeometry& g, const T* grad_output, T* cols) {
  const std::size_t hw = g.in_height * g.in_width;
  const std::size_t oh = g.out_height();
  const std::size_t ow = g.out_width();
  const long rows = static_cast<long>(g.out_channels * g.kernel * g.kernel);
#pragma omp parallel for schedule(static) if (static_cast<std::size_t>(rows) * hw > kParallelWork)
  for (long r = 0; r < rows; ++r) {
    const std::size_t co = static_cast<std::size_t>(r) / (g.kernel * g.kernel);
    const std::size_t ky = (static_cast<std::size_t>(r) / g.kernel) % g.kernel;
    const std::size_t kx = static_cast<std::size_t>(r) % g.kernel;
    const T* gout = grad_output + co * oh * ow;
    T* col = cols + static_cast<std::size_t>(r) * hw;
    for (std::size_t iy = 0; iy < g.in_height; ++iy) {
      const long oy = static_cast<long>(iy * g.stride + ky) - static_cast<long>(g.padding);
      for (std::size_t ix = 0; ix < g.in_width; ++ix) {
        const long ox = static_cast<long>(ix * g.stride + kx) - static_cast<long>(g.padding);
        const bool inside = oy >= 0 && oy < static_cast<long>(oh) && ox >= 0 &&
                            ox < static_cast<long>(ow);
        col[iy * g.in_width + ix] =
            inside ? gout[static_cast<std::size_t>(oy) * ow + static_cast<std::size_t>(ox)] : T{0};
      }
    }
  }
}

}  // namespace

template <typename T>
void conv_transpose2d(const ConvTransposeGeometry& g, const T* input, const T* weight, T* output) {
  const std::size_t rows = g.out_channels * g.kernel * g.kernel;
  const std::size_t hw = g.in_height * g.in_width;
  std::vector<T> cols(rows * hw);
  matmul_at(rows, hw, g.in_channels, weight, input, cols.data());
  col2im(g, cols.data(), output);
}

template <typename T>
void conv_transpose2d_backward_input(const ConvTransposeGeometry& g, const T* grad_output,
                                     const T* weight, T* grad_input) {
  const std::size_t rows = g.out_channels * g.kernel * g.kernel;
  const std::size_t hw = g.in_height * g.in_width;
  std::vector<T> cols(rows * hw);
  im2col(g, grad_output, cols.data());
  matmul(g.in_channels, hw, rows, weight, cols.data(), grad_input);
}

template <typename T>
void conv_transpose2d_backward_weight(const ConvTransposeGeometry& g, const T* input,
                                      const T* grad_output, T* grad_weight) {
  const std::size_t rows = g.out_channels * g.kernel * g.kernel;
  const std::size_t hw = g.in_height * g.in_width;
  std::vector<T> cols(rows * hw);
  im2col(g, grad_output, cols.data());
  matmul_bt(g.in_channels, rows, hw, input, cols.data(), grad_weight, true);
}

#define GPATCH_INSTANTIATE(T)                                                                  \
  template void matmul<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
  template void matmul_bt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,     \
                             bool);                                                            \
  template void matmul_at<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,     \
                             bool);                                                            \
  template void conv_transpose2d<T>(const ConvTransposeGeometry&, const T*, const T*, T*);      \
  template void conv_transpose2d_backward_input<T>(const ConvTransposeGeometry&, const T*,      \
                                                   const T*, T*);                              \
  template void conv_transpose2d_backward_weight<T>(const ConvTransposeGeometry&, const T*,     \
                                                    const T*, T*);

GPATCH_INSTANTIATE(float)
GPATCH_INSTANTIATE(double)
#undef GPATCH_INSTANTIATE

}  // namespace gpatch::kernels
