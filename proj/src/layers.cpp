#include "gpatch/layers.hpp"

#include <algorithm>
#include <cmath>

#include "gpatch/error.hpp"
#include "gpatch/kernels.hpp"

namespace gpatch::nn {

template <typename T>
void linear_forward(std::size_t rows, std::size_t in, std::size_t out, const T* x, const T* weight,
                    const T* bias, T* y) {
  kernels::matmul_bt(rows, out, in, x, weight, y);
  if (bias != nullptr) {
    for (std::size_t r = 0; r < rows; ++r) {
      T* yr = y + r * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += bias[j];
    }
  }
}

template <typename T>
void linear_backward(std::size_t rows, std::size_t in, std::size_t out, const T* x, const T* weight,
                     const T* dy, T* dx, T* dweight, T* dbias) {
  if (dx != nullptr) {
    kernels::matmul(rows, in, out, dy, weight, dx);
  }
  if (dweight != nullptr) {
    kernels::matmul_at(out, in, rows, dy, x, dweight, true);
  }
  if (dbias != nullptr) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dyr = dy + r * out;
      for (std::size_t j = 0; j < out; ++j) dbias[j] += dyr[j];
    }
  }
}

template <typename T>
void layer_norm_forward(std::size_t rows, std::size_t dim, const T* x, const T* gamma,
                        const T* beta, double eps, T* y, NormCache<T>& cache) {
  cache.normalized.resize(rows * dim);
  cache.inv_std.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * dim;
    T mean{0};
    for (std::size_t j = 0; j < dim; ++j) mean += xr[j];
    mean /= static_cast<T>(dim);
    T var{0};
    for (std::size_t j = 0; j < dim; ++j) {
      const T d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(dim);
    const T inv = T{1} / std::sqrt(var + static_cast<T>(eps));
    cache.inv_std[r] = inv;
    T* nr = cache.normalized.data() + r * dim;
    T* yr = y + r * dim;
    for (std::size_t j = 0; j < dim; ++j) {
      nr[j] = (xr[j] - mean) * inv;
      yr[j] = nr[j] * gamma[j] + beta[j];
    }
  }
}

template <typename T>
void layer_norm_backward(std::size_t rows, std::size_t dim, const NormCache<T>& cache,
                         const T* gamma, const T* dy, T* dx, T* dgamma, T* dbeta) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* nr = cache.normalized.data() + r * dim;
    const T* dyr = dy + r * dim;
    T sum_g{0};
    T sum_gn{0};
    for (std::size_t j = 0; j < dim; ++j) {
      const T g = dyr[j] * gamma[j];
      sum_g += g;
      sum_gn += g * nr[j];
      if (dgamma != nullptr) dgamma[j] += dyr[j] * nr[j];
      if (dbeta != nullptr) dbeta[j] += dyr[j];
    }
    if (dx == nullptr) continue;
    const T inv_n = T{1} / static_cast<T>(dim);
    T* dxr = dx + r * dim;
    for (std::size_t j = 0; j < dim; ++j) {
      const T g = dyr[j] * gamma[j];
      dxr[j] = cache.inv_std[r] * (g - inv_n * sum_g - nr[j] * inv_n * sum_gn);
    }
  }
}

template <typename T>
void batch_norm_train_forward(std::size_t channels, std::size_t spatial, const T* x,
                              const T* gamma, const T* beta, double eps, T* y,
                              NormCache<T>& cache, std::vector<T>* batch_mean,
                              std::vector<T>* batch_var) {
  cache.normalized.resize(channels * spatial);
  cache.inv_std.resize(channels);
  if (batch_mean != nullptr) batch_mean->resize(channels);
  if (batch_var != nullptr) batch_var->resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x + c * spatial;
    T mean{0};
    for (std::size_t i = 0; i < spatial; ++i) mean += xc[i];
    mean /= static_cast<T>(spatial);
    T var{0};
    for (std::size_t i = 0; i < spatial; ++i) {
      const T d = xc[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(spatial);
    const T inv = T{1} / std::sqrt(var + static_cast<T>(eps));
    cache.inv_std[c] = inv;
    if (batch_mean != nullptr) (*batch_mean)[c] = mean;
    if (batch_var != nullptr) (*batch_var)[c] = var;
    T* nc = cache.normalized.data() + c * spatial;
    T* yc = y + c * spatial;
    for (std::size_t i = 0; i < spatial; ++i) {
      nc[i] = (xc[i] - mean) * inv;
      yc[i] = nc[i] * gamma[c] + beta[c];
    }
  }
}

template <typename T>
void batch_norm_inference_forward(std::size_t channels, std::size_t spatial, const T* x,
                                  const T* gamma, const T* beta, const T* running_mean,
                                  const T* running_var, double eps, T* y) {
  for (std::size_t c = 0; c < channels; ++c) {
    const T inv = T{1} / std::sqrt(running_var[c] + static_cast<T>(eps));
    const T* xc = x + c * spatial;
    T* yc = y + c * spatial;
    for (std::size_t i = 0; i < spatial; ++i) {
      yc[i] = (xc[i] - running_mean[c]) * inv * gamma[c] + beta[c];
    }
  }
}

template <typename T>
void batch_norm_backward(std::size_t channels, std::size_t spatial, const NormCache<T>& cache,
                         const T* gamma, const T* dy, T* dx, T* dgamma, T* dbeta) {
  const T inv_n = T{1} / static_cast<T>(spatial);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* nc = cache.normalized.data() + c * spatial;
    const T* dyc = dy + c * spatial;
    T sum_dy{0};
    T sum_dyn{0};
    for (std::size_t i = 0; i < spatial; ++i) {
      sum_dy += dyc[i];
      sum_dyn += dyc[i] * nc[i];
    }
    if (dgamma != nullptr) dgamma[c] += sum_dyn;
    if (dbeta != nullptr) dbeta[c] += sum_dy;
    if (dx == nullptr) continue;
    const T scale = gamma[c] * cache.inv_std[c];
    T* dxc = dx + c * spatial;
    for (std::size_t i = 0; i < spatial; ++i) {
      dxc[i] = scale * (dyc[i] - inv_n * sum_dy - nc[i] * inv_n * sum_dyn);
    }
  }
}

template <typename T>
void gelu_forward(std::size_t n, const T* x, T* y) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = T(0.5) * x[i] * (T{1} + std::erf(x[i] * kInvSqrt2));
  }
}

template <typename T>
void gelu_backward(std::size_t n, const T* x, const T* dy, T* dx) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  for (std::size_t i = 0; i < n; ++i) {
    const T cdf = T(0.5) * (T{1} + std::erf(x[i] * kInvSqrt2));
    const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * x[i] * x[i]);
    dx[i] = dy[i] * (cdf + x[i] * pdf);
  }
}

template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, T* x) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* xr = x + r * cols;
    const T peak = *std::max_element(xr, xr + cols);
    T sum{0};
    for (std::size_t j = 0; j < cols; ++j) {
      xr[j] = std::exp(xr[j] - peak);
      sum += xr[j];
    }
    const T inv = T{1} / sum;
    for (std::size_t j = 0; j < cols; ++j) xr[j] *= inv;
  }
}

template <typename T>
void Adam<T>::step(std::span<ParamRef<T>> params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), T{0});
      v_.emplace_back(p.value.size(), T{0});
    }
  }
  if (m_.size() != params.size()) {
    throw ContractError("Adam parameter list changed between steps");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const T step = static_cast<T>(lr_ / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T b1 = static_cast<T>(beta1_);
  const T b2 = static_cast<T>(beta2_);
  const T eps = static_cast<T>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T g = p.grad[j];
      m[j] = b1 * m[j] + (T{1} - b1) * g;
      v[j] = b2 * v[j] + (T{1} - b2) * g * g;
      p.value[j] -= step * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

template <typename T>
void Sgd<T>::step(std::span<ParamRef<T>> params) {
  const T lr = static_cast<T>(lr_);
  for (auto& p : params) {
    for (std::size_t j = 0; j < p.value.size(); ++j) p.value[j] -= lr * p.grad[j];
  }
}

#define GPATCH_INSTANTIATE(T)                                                                     \
  template void linear_forward<T>(std::size_t, std::size_t, std::size_t, const T*, const T*,      \
                                  const T*, T*);                                                  \
  template void linear_backward<T>(std::size_t, std::size_t, std::size_t, const T*, const T*,     \
                                   const T*, T*, T*, T*);                                         \
  template void layer_norm_forward<T>(std::size_t, std::size_t, const T*, const T*, const T*,     \
                                      double, T*, NormCache<T>&);                                 \
  template void layer_norm_backward<T>(std::size_t, std::size_t, const NormCache<T>&, const T*,   \
                                       const T*, T*, T*, T*);                                     \
  template void batch_norm_train_forward<T>(std::size_t, std::size_t, const T*, const T*,         \
                                            const T*, double, T*, NormCache<T>&,                  \
                                            std::vector<T>*, std::vector<T>*);                    \
  template void batch_norm_inference_forward<T>(std::size_t, std::size_t, const T*, const T*,     \
                                                const T*, const T*, const T*, double, T*);        \
  template void batch_norm_backward<T>(std::size_t, std::size_t, const NormCache<T>&, const T*,   \
                                       const T*, T*, T*, T*);                                     \
  template void gelu_forward<T>(std::size_t, const T*, T*);                                       \
  template void gelu_backward<T>(std::size_t, const T*, const T*, T*);                            \
  template void softmax_rows<T>(std::size_t, std::size_t, T*);                                    \
  template class Adam<T>;                                                                         \
  template class Sgd<T>;

GPATCH_INSTANTIATE(float)
GPATCH_INSTANTIATE(double)
#undef GPATCH_INSTANTIATE

}  // namespace gpatch::nn
