#include "gpatch/dataset.hpp"
#include "gpatch/desk_victim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "gpatch/error.hpp"
#include "gpatch/loss.hpp"
#include "gpatch/rng.hpp"
#include "gpatch/victims.hpp"

namespace gpatch {
namespace {

constexpr std::array<double, 5> kOrientationsDeg = {0.0, 36.0, 72.0, 108.0, 144.0};
constexpr std::array<double, 2> kPeriods = {6.0, 12.0};

using Rgb = std::array<double, 3>;

Rgb random_color(RandomStream& rng) {
  return {rng.uniform(), rng.uniform(), rng.uniform()};
}

}  // namespace

std::vector<std::string> desk_class_names() {
  std::vector<std::string> names;
  for (const double period : kPeriods) {
    for (const double deg : kOrientationsDeg) {
      std::ostringstream name;
      name << "stripes_" << static_cast<int>(deg) << "deg_p" << static_cast<int>(period);
      names.push_back(name.str());
    }
  }
  return names;
}

Image synthesize_desk_image(std::size_t label, std::uint64_t seed, std::size_t index,
                            std::size_t image_size) {
  if (label >= kDeskClasses) throw ContractError("desk label out of range");
  RandomStream rng = RandomStream(seed).derive("desk-image", {index});
  const double size = static_cast<double>(image_size);

  // Background: base colour, linear gradient, a few flat blobs.
  const Rgb base = random_color(rng);
  const double grad_angle = rng.uniform() * 2.0 * std::numbers::pi;
  const double grad_amp = 0.1 + 0.15 * rng.uniform();
  struct Blob {
    double cx, cy, r;
    Rgb color;
  };
  std::vector<Blob> blobs(static_cast<std::size_t>(rng.uniform_int(2, 5)));
  for (auto& b : blobs) {
    b = {rng.uniform() * size, rng.uniform() * size, 8.0 + 28.0 * rng.uniform(), random_color(rng)};
  }

  // Object: striped ellipse.
  const double period = kPeriods[label / kOrientationsDeg.size()] * (0.92 + 0.16 * rng.uniform());
  const double theta = (kOrientationsDeg[label % kOrientationsDeg.size()] +
                        (rng.uniform() - 0.5) * 10.0) * std::numbers::pi / 180.0;
  const double phase = rng.uniform() * 2.0 * std::numbers::pi;
  const double radius = size * (0.24 + 0.14 * rng.uniform());
  const double aspect = 0.75 + 0.5 * rng.uniform();
  const double cx = size * (0.3 + 0.4 * rng.uniform());
  const double cy = size * (0.3 + 0.4 * rng.uniform());
  const double tilt = rng.uniform() * std::numbers::pi;
  // Dark and light stripe colours of independent random hue.
  Rgb color_a = random_color(rng);
  Rgb color_b = random_color(rng);
  for (std::size_t c = 0; c < 3; ++c) {
    color_a[c] = 0.4 * color_a[c];
    color_b[c] = 0.6 + 0.4 * color_b[c];
  }
  const double contrast = 0.6 + 0.4 * rng.uniform();
  const double noise = 0.06 * rng.uniform();

  const double kx = std::cos(theta) * 2.0 * std::numbers::pi / period;
  const double ky = std::sin(theta) * 2.0 * std::numbers::pi / period;
  const double ct = std::cos(tilt), st = std::sin(tilt);
  Image img({image_size, image_size, 3});
  for (std::size_t y = 0; y < image_size; ++y) {
    for (std::size_t x = 0; x < image_size; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      Rgb v = base;
      const double g = grad_amp * ((px / size - 0.5) * std::cos(grad_angle) +
                                   (py / size - 0.5) * std::sin(grad_angle));
      for (auto& c : v) c += g;
      for (const auto& b : blobs) {
        if ((px - b.cx) * (px - b.cx) + (py - b.cy) * (py - b.cy) < b.r * b.r) v = b.color;
      }
      const double dx = px - cx, dy = py - cy;
      const double u = (dx * ct + dy * st) / radius;
      const double w = (-dx * st + dy * ct) / (radius * aspect);
      if (u * u + w * w <= 1.0) {
        const double s = 0.5 + 0.5 * contrast * std::sin(kx * px + ky * py + phase);
        for (std::size_t c = 0; c < 3; ++c) v[c] = color_a[c] * (1.0 - s) + color_b[c] * s;
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double n = noise > 0.0 ? rng.normal(0.0, noise) : 0.0;
        img.at(y, x, c) = static_cast<float>(std::clamp(v[c] + n, 0.0, 1.0));
      }
    }
  }
  return img;
}

Dataset synthesize_desk_dataset(const DeskDatasetOptions& options) {
  Dataset ds;
  ds.label_map = desk_class_names();
  ds.image_size = options.image_size;
  ds.identifier = "desk:seed=" + std::to_string(options.seed) + ",first=" +
                  std::to_string(options.first_index) + ",count=" + std::to_string(options.count);
  ds.items.resize(options.count);
  const long n = static_cast<long>(options.count);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const std::size_t index = options.first_index + static_cast<std::size_t>(i);
    const std::size_t label = index % kDeskClasses;
    ds.items[static_cast<std::size_t>(i)] = {
        std::make_shared<const Image>(
            synthesize_desk_image(label, options.seed, index, options.image_size)),
        label, "desk/" + std::to_string(index)};
  }
  return ds;
}

VitConfig tiny_desk_architecture() {
  VitConfig c;
  c.image_size = 224;
  c.patch_size = 16;
  c.dim = 32;
  c.depth = 1;
  c.heads = 2;
  c.mlp_dim = 64;
  c.num_classes = kDeskClasses;
  c.mean = {0.5f, 0.5f, 0.5f};
  c.stddev = {0.25f, 0.25f, 0.25f};
  c.pool = "avg";
  return c;
}

VisionTransformer<float> fit_desk_victim(const DeskVictimOptions& options,
                                         DeskVictimReport* report,
                                         const std::function<void(const std::string&)>& log) {
  if (options.architecture.num_classes != kDeskClasses) {
    throw ConfigError("desk victims must have 10 classes");
  }
  auto net = VisionTransformer<float>::random(options.architecture, options.seed, 0.0);
  nn::Adam<float> adam(options.learning_rate);
  const std::uint64_t corpus_seed = derive_seed(options.seed, "desk-victim-corpus");
  const std::size_t batch = options.batch_size;
  const std::size_t steps_per_epoch = options.images_per_epoch / batch;
  const std::size_t total_steps = steps_per_epoch * options.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      std::vector<VitParams<float>> grads(batch);
      std::vector<double> losses(batch);
      std::vector<char> hits(batch);
      const long nb = static_cast<long>(batch);
#pragma omp parallel for schedule(dynamic)
      for (long b = 0; b < nb; ++b) {
        const std::size_t index = (epoch * steps_per_epoch + s) * batch + static_cast<std::size_t>(b);
        const std::size_t label = static_cast<std::size_t>(
            RandomStream(derive_seed(corpus_seed, "label", {index})).uniform_int(0, kDeskClasses - 1));
        Image image = synthesize_desk_image(label, corpus_seed, index,
                                            options.architecture.image_size);
        if (options.augment_noise > 0.0) {
          RandomStream rng(derive_seed(corpus_seed, "augment-noise", {index}));
          const double sd = options.augment_noise * rng.uniform();
          float* px = image.data();
          for (std::size_t j = 0; j < image.size(); ++j) {
            px[j] = static_cast<float>(std::clamp(px[j] + rng.normal(0.0, sd), 0.0, 1.0));
          }
        }
        VisionTransformer<float>::Trace trace;
        const auto out = net.forward(image, &trace);
        losses[static_cast<std::size_t>(b)] = targeted_loss<float>(out, label);
        hits[static_cast<std::size_t>(b)] = predict<float>(out) == label;
        auto dlogits = targeted_loss_gradient<float>(out, label);
        for (auto& v : dlogits) v /= static_cast<float>(batch);
        grads[static_cast<std::size_t>(b)] = net.zero_like();
        net.backward(trace, dlogits, &grads[static_cast<std::size_t>(b)], false);
      }
      // Ordered reduction keeps the result independent of the thread count.
      VitParams<float> total = net.zero_like();
      std::vector<std::vector<float>*> dst;
      visit_vit_params(net.config(), total, [&dst](const std::string&, const Shape&,
                                                   std::vector<float>& v) { dst.push_back(&v); });
      for (auto& g : grads) {
        std::size_t i = 0;
        visit_vit_params(net.config(), g, [&](const std::string&, const Shape&,
                                              std::vector<float>& v) {
          auto& acc = *dst[i++];
          for (std::size_t j = 0; j < v.size(); ++j) acc[j] += v[j];
        });
      }
      std::vector<nn::ParamRef<float>> refs;
      std::size_t i = 0;
      visit_vit_params(net.config(), net.params(), [&](const std::string& name, const Shape&,
                                                       std::vector<float>& v) {
        refs.push_back({name, v, *dst[i++]});
      });
      // Cosine decay after a short warm-up.
      const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
      const double warm = std::min(1.0, static_cast<double>(step + 1) / 50.0);
      const double lr = options.learning_rate * warm * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      adam.set_learning_rate(lr);
      adam.step(refs);
      for (std::size_t b = 0; b < batch; ++b) {
        loss_sum += losses[b];
        correct += static_cast<std::size_t>(hits[b]);
      }
    }
    const double seen = static_cast<double>(steps_per_epoch * batch);
    if (report != nullptr) {
      report->epoch_loss.push_back(loss_sum / seen);
      report->epoch_accuracy.push_back(static_cast<double>(correct) / seen);
    }
    if (log) {
      std::ostringstream line;
      line << "epoch " << epoch << " loss " << loss_sum / seen << " train_acc "
           << static_cast<double>(correct) / seen;
      log(line.str());
    }
  }

  const std::uint64_t holdout_seed = derive_seed(options.seed, "desk-victim-holdout");
  std::size_t correct = 0;
  const long nh = static_cast<long>(options.holdout_images);
#pragma omp parallel for schedule(dynamic) reduction(+ : correct)
  for (long i = 0; i < nh; ++i) {
    const std::size_t label = static_cast<std::size_t>(i) % kDeskClasses;
    const Image image = synthesize_desk_image(label, holdout_seed, static_cast<std::size_t>(i),
                                              options.architecture.image_size);
    correct += predict<float>(net.logits(image)) == label ? 1 : 0;
  }
  const double accuracy = static_cast<double>(correct) / static_cast<double>(options.holdout_images);
  if (report != nullptr) report->holdout_accuracy = accuracy;
  if (log) log("holdout accuracy " + std::to_string(accuracy));
  return net;
}

}  // namespace gpatch
