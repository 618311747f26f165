#include "gpatch/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gpatch/error.hpp"

namespace gpatch {
namespace {

template <typename T>
void check_logits(std::span<const T> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw ContractError("target class " + std::to_string(target) + " out of range for " +
                        std::to_string(logits.size()) + " logits");
  }
  for (const T v : logits) {
    if (!std::isfinite(v)) throw Error("targeted loss received a non-finite logit");
  }
}

}  // namespace

template <typename T>
T targeted_loss(std::span<const T> logits, std::size_t target) {
  check_logits(logits, target);
  const T peak = *std::max_element(logits.begin(), logits.end());
  T sum{0};
  for (const T v : logits) sum += std::exp(v - peak);
  return std::log(sum) + peak - logits[target];
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  if (logits.empty()) throw ContractError("softmax of empty logits");
  const T peak = *std::max_element(logits.begin(), logits.end());
  std::vector<T> out(logits.size());
  T sum{0};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

template <typename T>
std::vector<T> targeted_loss_gradient(std::span<const T> logits, std::size_t target) {
  check_logits(logits, target);
  std::vector<T> grad = softmax(logits);
  grad[target] -= T{1};
  return grad;
}

template float targeted_loss<float>(std::span<const float>, std::size_t);
template double targeted_loss<double>(std::span<const double>, std::size_t);
template std::vector<float> targeted_loss_gradient<float>(std::span<const float>, std::size_t);
template std::vector<double> targeted_loss_gradient<double>(std::span<const double>, std::size_t);
template std::vector<float> softmax<float>(std::span<const float>);
template std::vector<double> softmax<double>(std::span<const double>);

}  // namespace gpatch
