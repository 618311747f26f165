#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace gpatch {

// Negative log-softmax probability of the target class. Minimising it
// maximises log softmax(logits)[target]. Throws on non-finite logits.
template <typename T>
T targeted_loss(std::span<const T> logits, std::size_t target);

// d(targeted_loss)/d(logits) = softmax(logits) - onehot(target).
template <typename T>
std::vector<T> targeted_loss_gradient(std::span<const T> logits, std::size_t target);

template <typename T>
std::vector<T> softmax(std::span<const T> logits);

}  // namespace gpatch
