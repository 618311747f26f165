#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpatch/evaluator.hpp"
#include "gpatch/generator.hpp"
#include "gpatch/trainer.hpp"

namespace gpatch {

// Constant per-channel offset added to every pixel of a patch.
struct ColorShift {
  std::array<double, 3> delta{0.0, 0.0, 0.0};

  // Condition tag, e.g. "color(+0.20,+0.00,+0.00)".
  std::string tag() const;
};

// output[c] = patch[c] + delta[c]. Throws ContractError naming the channel
// and its headroom when the result would leave [0, 1].
Patch color_transfer(const Patch& patch, const ColorShift& shift);

struct NoiseSpec {
  static constexpr double kNoNoise = std::numeric_limits<double>::infinity();

  double snr_db = kNoNoise;  // +inf: identity
  std::string distribution = "gaussian";
  std::uint64_t seed = 0;

  std::string tag() const;
};

struct NoiseResult {
  Patch patch;
  // 10 log10(mean(p^2) / mean(n^2)) before clipping; +inf without noise.
  double realized_snr_db = NoiseSpec::kNoNoise;
  double overflow_fraction = 0.0;   // values clipped at 1
  double underflow_fraction = 0.0;  // values clipped at 0
  double clipped_fraction() const { return overflow_fraction + underflow_fraction; }
};

// Zero-mean gaussian noise rescaled so the pre-clip SNR equals snr_db, then
// clipped to [0, 1]. The noise direction depends only on the seed, so one seed
// gives the same direction at every SNR.
NoiseResult add_noise(const Patch& patch, const NoiseSpec& spec);

struct BrightnessResult {
  double k = 0.0;
  std::optional<TrainResult> training;
  std::optional<EvalRow> row;
  std::string error;  // set when training or evaluation failed for this k
};

// One training run per k; failures are recorded per entry and do not stop the sweep.
std::vector<BrightnessResult> brightness_sweep(const TrainConfig& base,
                                               std::span<const double> k_values,
                                               const VictimModel& victim, const EvalSet& train_set,
                                               const EvalSet& validation, const EvalSet& eval_set,
                                               const AttackOptions& eval_options);

// One row per shift; the patch is transformed once.
std::vector<EvalRow> color_protocol(const VictimModel& victim, const Patch& patch,
                                    const EvalSet& eval_set, std::size_t target_class,
                                    std::span<const ColorShift> shifts,
                                    const AttackOptions& options);

// One row per SNR. Noise is drawn per trial from a stream keyed on
// (noise_seed, image, trial) only, so every SNR level sees the same noise
// direction and the same placements.
std::vector<EvalRow> noise_protocol(const VictimModel& victim, const Patch& patch,
                                    const EvalSet& eval_set, std::size_t target_class,
                                    std::span<const double> snr_db, std::uint64_t noise_seed,
                                    const AttackOptions& options);

}  // namespace gpatch
