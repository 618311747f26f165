#include "gpatch/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "gpatch/error.hpp"
#include "gpatch/rng.hpp"

namespace gpatch {

std::string ColorShift::tag() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "color(%+.2f,%+.2f,%+.2f)", delta[0], delta[1], delta[2]);
  return buf;
}

Patch color_transfer(const Patch& patch, const ColorShift& shift) {
  const Image& in = patch.pixels;
  const std::size_t pixels = in.size() / 3;
  for (std::size_t c = 0; c < 3; ++c) {
    float lo = 1.0f, hi = 0.0f;
    for (std::size_t i = 0; i < pixels; ++i) {
      lo = std::min(lo, in[i * 3 + c]);
      hi = std::max(hi, in[i * 3 + c]);
    }
    const double d = shift.delta[c];
    // Judged on the float result: 0.8f + 0.2 must land on 1.0f, not fail.
    if (static_cast<float>(static_cast<double>(hi) + d) > 1.0f ||
        static_cast<float>(static_cast<double>(lo) + d) < 0.0f) {
      char buf[256];
      std::snprintf(buf, sizeof buf,
                    "color shift %+.3f leaves [0,1] in channel %zu: values span [%.4f, %.4f], "
                    "headroom is [%+.4f, %+.4f]; use a patch trained with a smaller k",
                    d, c, static_cast<double>(lo), static_cast<double>(hi),
                    -static_cast<double>(lo), 1.0 - static_cast<double>(hi));
      throw ContractError(buf);
    }
  }
  Patch out = patch;
  for (std::size_t i = 0; i < pixels; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      out.pixels[i * 3 + c] = static_cast<float>(static_cast<double>(in[i * 3 + c]) + shift.delta[c]);
    }
  }
  return out;
}

std::string NoiseSpec::tag() const {
  if (std::isinf(snr_db)) return "snr=inf";
  char buf[48];
  std::snprintf(buf, sizeof buf, "snr=%gdB", snr_db);
  return buf;
}

NoiseResult add_noise(const Patch& patch, const NoiseSpec& spec) {
  if (spec.distribution != "gaussian") {
    throw ConfigError("unsupported noise distribution \"" + spec.distribution + "\"");
  }
  if (std::isnan(spec.snr_db) || spec.snr_db == -NoiseSpec::kNoNoise) {
    throw ConfigError("snr_db must be finite or +inf");
  }
  NoiseResult result{patch};
  if (std::isinf(spec.snr_db)) return result;

  const auto in = patch.pixels.values();
  const std::size_t n = in.size();
  std::vector<double> noise(n);
  RandomStream rng(spec.seed);
  double signal = 0.0, drawn = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    noise[i] = rng.normal();
    drawn += noise[i] * noise[i];
    signal += static_cast<double>(in[i]) * static_cast<double>(in[i]);
  }
  signal /= static_cast<double>(n);
  drawn /= static_cast<double>(n);
  const double target = signal / std::pow(10.0, spec.snr_db / 10.0);
  const double scale = drawn > 0.0 ? std::sqrt(target / drawn) : 0.0;

  std::size_t over = 0, under = 0;
  double noise_power = 0.0;
  const auto out = result.patch.pixels.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double e = noise[i] * scale;
    noise_power += e * e;
    const double v = static_cast<double>(in[i]) + e;
    if (v > 1.0) ++over;
    if (v < 0.0) ++under;
    out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  noise_power /= static_cast<double>(n);
  result.realized_snr_db = noise_power > 0.0 ? 10.0 * std::log10(signal / noise_power)
                                             : NoiseSpec::kNoNoise;
  result.overflow_fraction = static_cast<double>(over) / static_cast<double>(n);
  result.underflow_fraction = static_cast<double>(under) / static_cast<double>(n);
  return result;
}

std::vector<BrightnessResult> brightness_sweep(const TrainConfig& base,
                                               std::span<const double> k_values,
                                               const VictimModel& victim, const EvalSet& train_set,
                                               const EvalSet& validation, const EvalSet& eval_set,
                                               const AttackOptions& eval_options) {
  std::vector<BrightnessResult> results;
  for (const double k : k_values) {
    BrightnessResult entry;
    entry.k = k;
    try {
      if (!(k > 0.0 && k <= 0.5)) throw ConfigError("k must be in (0, 0.5]");
      TrainConfig config = base;
      config.k = k;
      entry.training = train(config, victim, train_set, validation);
      AttackOptions options = eval_options;
      char tag[32];
      std::snprintf(tag, sizeof tag, "k=%g", k);
      options.condition = tag;
      entry.row = attack_success_rate(victim, entry.training->best_patch, eval_set,
                                      config.target_class, options);
    } catch (const std::exception& e) {
      entry.error = e.what();
    }
    results.push_back(std::move(entry));
  }
  return results;
}

std::vector<EvalRow> color_protocol(const VictimModel& victim, const Patch& patch,
                                    const EvalSet& eval_set, std::size_t target_class,
                                    std::span<const ColorShift> shifts,
                                    const AttackOptions& options) {
  std::vector<EvalRow> rows;
  for (const auto& shift : shifts) {
    const Patch shifted = color_transfer(patch, shift);
    AttackOptions o = options;
    o.condition = shift.tag();
    o.transform = nullptr;
    rows.push_back(attack_success_rate(victim, shifted, eval_set, target_class, o));
  }
  return rows;
}

std::vector<EvalRow> noise_protocol(const VictimModel& victim, const Patch& patch,
                                    const EvalSet& eval_set, std::size_t target_class,
                                    std::span<const double> snr_db, std::uint64_t noise_seed,
                                    const AttackOptions& options) {
  std::vector<EvalRow> rows;
  for (const double snr : snr_db) {
    AttackOptions o = options;
    NoiseSpec base;
    base.snr_db = snr;
    o.condition = base.tag();
    o.transform = [snr, noise_seed](const Patch& p, std::size_t image, std::size_t trial) {
      NoiseSpec spec;
      spec.snr_db = snr;
      spec.seed = derive_seed(noise_seed, "trial-noise", {image, trial});
      return add_noise(p, spec).patch;
    };
    rows.push_back(attack_success_rate(victim, patch, eval_set, target_class, o));
  }
  return rows;
}

}  // namespace gpatch
