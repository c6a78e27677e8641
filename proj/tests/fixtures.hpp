#pragma once

#include "blendgan/model.hpp"

#include <torch/torch.h>

#include <cmath>

namespace fixtures {

/// Red sine stripes in [-1,1].
inline blendgan::ImageBuffer stripes(std::int64_t h, std::int64_t w) {
  auto x = torch::arange(w, torch::kFloat32).view({1, w}).expand({h, w});
  auto s = torch::sin(x * (2.0 * M_PI / 8.0));
  return blendgan::ImageBuffer(torch::stack({0.8f * s, 0.3f * s - 0.5f, -0.6f + 0.1f * s}));
}

/// Blue/yellow checkerboard with fixed noise.
inline blendgan::ImageBuffer checker(std::int64_t h, std::int64_t w) {
  auto yy = torch::arange(h).view({h, 1});
  auto xx = torch::arange(w).view({1, w});
  auto c = ((yy / 6 + xx / 6) % 2).to(torch::kFloat32) * 2 - 1;
  auto gen = at::detail::createCPUGenerator(17);
  auto n = torch::randn({3, h, w}, gen) * 0.05;
  auto img = torch::stack({0.5f * c, 0.5f * c, -0.7f * c}) + n;
  return blendgan::ImageBuffer(img.clamp(-1, 1));
}

/// Tiny fast config: 8 channels everywhere.
inline blendgan::TrainConfig tiny_config(int iterations = 2) {
  blendgan::TrainConfig c;
  c.iterations = iterations;
  c.d_steps = 1;
  c.g_steps = 1;
  c.channel_base = 8;
  c.channel_cap = 8;
  c.min_dim = 20;
  c.max_dim = 32;
  c.crop_window = 0;
  return c;
}

inline std::vector<blendgan::TrainingImage> two_images(std::int64_t side = 32) {
  return {{"stripes", stripes(side, side)}, {"checker", checker(side, side)}};
}

}  // namespace fixtures
