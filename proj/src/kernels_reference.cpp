#include "gpatch/kernels.hpp"

namespace gpatch::kernels::reference {

template <typename T>
void matmul(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
            bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = accumulate ? c[i * n + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) {
        sum += a[i * k + p] * b[p * n + j];
      }
      c[i * n + j] = sum;
    }
  }
}

template <typename T>
void matmul_bt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
               bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = accumulate ? c[i * n + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) {
        sum += a[i * k + p] * b[j * k + p];
      }
      c[i * n + j] = sum;
    }
  }
}

template <typename T>
void matmul_at(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
               bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = accumulate ? c[i * n + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) {
        sum += a[p * m + i] * b[p * n + j];
      }
      c[i * n + j] = sum;
    }
  }
}

// Direct scatter form: every input pixel stamps its kernel onto the output.
template <typename T>
void conv_transpose2d(const ConvTransposeGeometry& g, const T* input, const T* weight, T* output) {
  const std::size_t oh = g.out_height();
  const std::size_t ow = g.out_width();
  for (std::size_t i = 0; i < g.out_channels * oh * ow; ++i) output[i] = T{0};
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    for (std::size_t iy = 0; iy < g.in_height; ++iy) {
      for (std::size_t ix = 0; ix < g.in_width; ++ix) {
        const T v = input[(ci * g.in_height + iy) * g.in_width + ix];
        for (std::size_t co = 0; co < g.out_channels; ++co) {
          for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
              const long oy = static_cast<long>(iy * g.stride + ky) - static_cast<long>(g.padding);
              const long ox = static_cast<long>(ix * g.stride + kx) - static_cast<long>(g.padding);
              if (oy < 0 || ox < 0 || oy >= static_cast<long>(oh) || ox >= static_cast<long>(ow)) {
                continue;
              }
              const T w = weight[((ci * g.out_channels + co) * g.kernel + ky) * g.kernel + kx];
              output[(co * oh + static_cast<std::size_t>(oy)) * ow + static_cast<std::size_t>(ox)] +=
                  v * w;
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_transpose2d_backward_input(const ConvTransposeGeometry& g, const T* grad_output,
                                     const T* weight, T* grad_input) {
  const std::size_t oh = g.out_height();
  const std::size_t ow = g.out_width();
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    for (std::size_t iy = 0; iy < g.in_height; ++iy) {
      for (std::size_t ix = 0; ix < g.in_width; ++ix) {
        T sum{0};
        for (std::size_t co = 0; co < g.out_channels; ++co) {
          for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
              const long oy = static_cast<long>(iy * g.stride + ky) - static_cast<long>(g.padding);
              const long ox = static_cast<long>(ix * g.stride + kx) - static_cast<long>(g.padding);
              if (oy < 0 || ox < 0 || oy >= static_cast<long>(oh) || ox >= static_cast<long>(ow)) {
                continue;
              }
              sum += grad_output[(co * oh + static_cast<std::size_t>(oy)) * ow +
                                 static_cast<std::size_t>(ox)] *
                     weight[((ci * g.out_channels + co) * g.kernel + ky) * g.kernel + kx];
            }
          }
        }
        grad_input[(ci * g.in_height + iy) * g.in_width + ix] = sum;
      }
    }
  }
}

template <typename T>
void conv_transpose2d_backward_weight(const ConvTransposeGeometry& g, const T* input,
                                      const T* grad_output, T* grad_weight) {
  const std::size_t oh = g.out_height();
  const std::size_t ow = g.out_width();
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          T sum{0};
          for (std::size_t iy = 0; iy < g.in_height; ++iy) {
            for (std::size_t ix = 0; ix < g.in_width; ++ix) {
              const long oy = static_cast<long>(iy * g.stride + ky) - static_cast<long>(g.padding);
              const long ox = static_cast<long>(ix * g.stride + kx) - static_cast<long>(g.padding);
              if (oy < 0 || ox < 0 || oy >= static_cast<long>(oh) || ox >= static_cast<long>(ow)) {
                continue;
              }
              sum += input[(ci * g.in_height + iy) * g.in_width + ix] *
                     grad_output[(co * oh + static_cast<std::size_t>(oy)) * ow +
                                 static_cast<std::size_t>(ox)];
            }
          }
          grad_weight[((ci * g.out_channels + co) * g.kernel + ky) * g.kernel + kx] += sum;
        }
      }
    }
  }
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

}  // namespace gpatch::kernels::reference
