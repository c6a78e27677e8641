#include "blendgan/model.hpp"

#include "blendgan/errors.hpp"
#include "blendgan/rng.hpp"

#include <torch/torch.h>

#include <cmath>
#include <limits>

namespace blendgan {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid config: " + what); };
  if (iterations < 0) fail("iterations must be >= 0");
  if (d_steps < 0 || g_steps < 0) fail("step counts must be >= 0");
  if (!(lr_g > 0.0) || !(lr_d > 0.0)) fail("learning rates must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas in [0,1)");
  if (!(lr_decay_at >= 0.0) || !(lr_decay > 0.0)) fail("lr decay settings");
  if (!(lambda_gp >= 0.0) || !(alpha_rec >= 0.0) || !(alpha_sem >= 0.0)) {
    fail("loss weights must be >= 0");
  }
  if (crop_window < -1) fail("crop_window must be -1 (auto), 0 (none) or a positive size");
  if (!(sigma_base >= 0.0) || !(c_rec >= 0.0)) fail("noise amplitudes must be >= 0");
  if (!(scale_factor > 0.0 && scale_factor < 1.0)) fail("scale_factor must lie in (0,1)");
  if (min_dim < 1 || min_dim > max_dim) fail("need 1 <= min_dim <= max_dim");
  if (channel_base < 1 || channel_cap < channel_base) fail("channel base/cap");
  if (!(norm_momentum > 0.0 && norm_momentum <= 1.0)) fail("norm_momentum must lie in (0,1]");
  if (threads < 0) fail("threads must be >= 0");
}

torch::Tensor draw_reconstruction_noise(std::uint64_t seed, int level, int coarsest, Size2 size,
                                        double sigma, double c_rec) {
  auto gen = make_generator(seed, "zrec", {level});
  const double amplitude = level == coarsest ? sigma : c_rec * sigma;
  return torch::randn({1, 3, size.height, size.width}, gen, torch::kFloat32) * amplitude;
}

void ModelBundle::rebuild_pyramids() {
  pyramids.clear();
  for (const auto& img : images) pyramids.push_back(build_pyramid(img.image, plan));
}

ModelBundle make_bundle(const std::vector<TrainingImage>& images, const TrainConfig& config) {
  config.validate();
  if (images.empty()) throw InvalidInput("at least one training image is required");

  ModelBundle b;
  b.config = config;
  b.plan = build_scale_plan(images.front().image.size(), config.scale_factor, config.min_dim,
                            config.max_dim, config.effective_crop_window());
  b.num_identities = static_cast<std::int64_t>(images.size());
  const Size2 finest = b.plan.size(0);
  for (const auto& img : images) {
    if (img.image.channels() != 3) throw InvalidInput("training images must be RGB");
    TrainingImage t = img;
    if (t.image.size() != finest) t.image = resample(t.image, finest);
    b.images.push_back(std::move(t));
  }

  for (int level = 0; level < b.plan.num_levels(); ++level) {
    const auto c = channels_for_scale(b.plan.scales_from_coarsest(level), config.channel_base,
                                      config.channel_cap);
    GeneratorScale g(c, b.num_identities);
    DiscriminatorScale d(c);
    init_weights(*g, 0.02, make_generator(config.seed, "init-g", {level}));
    init_weights(*d, 0.02, make_generator(config.seed, "init-d", {level}));
    g->set_norm_momentum(config.norm_momentum);
    d->set_norm_momentum(config.norm_momentum);
    b.generators.push_back(g);
    b.discriminators.push_back(d);
  }

  b.noise.seed = config.seed;
  b.noise.c_rec = config.c_rec;
  b.noise.sigma.assign(b.plan.num_levels(), std::numeric_limits<double>::quiet_NaN());
  b.noise.zrec.assign(b.plan.num_levels(), torch::Tensor());
  b.state.assign(b.plan.num_levels(), ScaleState{});
  b.rebuild_pyramids();
  return b;
}

}  // namespace blendgan
