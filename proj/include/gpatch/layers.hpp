#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

// Functional building blocks shared by the generator and the victim networks.
// Row-major activations: `rows` samples (tokens) of `dim` features.
namespace gpatch::nn {

// A trainable tensor view handed to optimizers.
template <typename T>
struct ParamRef {
  std::string name;
  std::span<T> value;
  std::span<T> grad;
};

// y (rows x out) = x (rows x in) * W^T + b, W stored {out, in}.
template <typename T>
void linear_forward(std::size_t rows, std::size_t in, std::size_t out, const T* x, const T* weight,
                    const T* bias, T* y);

// Any of dx / dweight / dbias may be null. dweight and dbias accumulate.
template <typename T>
void linear_backward(std::size_t rows, std::size_t in, std::size_t out, const T* x, const T* weight,
                     const T* dy, T* dx, T* dweight, T* dbias);

template <typename T>
struct NormCache {
  std::vector<T> normalized;
  std::vector<T> inv_std;
};

template <typename T>
void layer_norm_forward(std::size_t rows, std::size_t dim, const T* x, const T* gamma,
                        const T* beta, double eps, T* y, NormCache<T>& cache);

template <typename T>
void layer_norm_backward(std::size_t rows, std::size_t dim, const NormCache<T>& cache,
                         const T* gamma, const T* dy, T* dx, T* dgamma, T* dbeta);

// Batch normalisation for a single sample laid out {channels, spatial}:
// statistics are taken over the spatial positions of each channel.
template <typename T>
void batch_norm_train_forward(std::size_t channels, std::size_t spatial, const T* x,
                              const T* gamma, const T* beta, double eps, T* y,
                              NormCache<T>& cache, std::vector<T>* batch_mean = nullptr,
                              std::vector<T>* batch_var = nullptr);

template <typename T>
void batch_norm_inference_forward(std::size_t channels, std::size_t spatial, const T* x,
                                  const T* gamma, const T* beta, const T* running_mean,
                                  const T* running_var, double eps, T* y);

template <typename T>
void batch_norm_backward(std::size_t channels, std::size_t spatial, const NormCache<T>& cache,
                         const T* gamma, const T* dy, T* dx, T* dgamma, T* dbeta);

// Exact (erf) GELU.
template <typename T>
void gelu_forward(std::size_t n, const T* x, T* y);
template <typename T>
void gelu_backward(std::size_t n, const T* x, const T* dy, T* dx);

template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, T* x);

// Adam with bias correction. Moments are created lazily on the first step and
// matched to parameters by position, so the parameter list order must stay fixed.
template <typename T>
class Adam {
 public:
  Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<ParamRef<T>> params);
  long steps() const { return t_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

template <typename T>
class Sgd {
 public:
  explicit Sgd(double learning_rate) : lr_(learning_rate) {}
  void step(std::span<ParamRef<T>> params);

 private:
  double lr_;
};

}  // namespace gpatch::nn
