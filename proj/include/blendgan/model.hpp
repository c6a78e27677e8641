#pragma once

#include "blendgan/networks.hpp"
#include "blendgan/tensor_pyramid.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace blendgan {

struct TrainConfig {
  int iterations = 2000;
  int d_steps = 3;
  int g_steps = 3;
  double lr_g = 5e-4;
  double lr_d = 5e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  /// Fraction of the iterations after which both learning rates are scaled
  /// by lr_decay.
  double lr_decay_at = 0.8;
  double lr_decay = 0.1;
  double lambda_gp = 10.0;
  double alpha_rec = 10.0;
  double alpha_sem = 0.0;
  /// -1: 128 or 256 depending on max_dim; 0: never crop; >0: window side.
  std::int64_t crop_window = -1;
  double sigma_base = 0.1;
  double c_rec = 0.1;
  double scale_factor = 0.75;
  std::int64_t min_dim = 25;
  std::int64_t max_dim = 250;
  std::int64_t channel_base = 32;
  std::int64_t channel_cap = 512;
  double norm_momentum = 0.1;
  std::uint64_t seed = 0;
  /// Single intra-op thread; bitwise reproducible runs.
  bool deterministic = true;
  /// Intra-op threads when not deterministic (0 = library default).
  int threads = 0;

  std::int64_t effective_crop_window() const {
    return crop_window < 0 ? default_crop_window(max_dim) : crop_window;
  }
  /// Throws ConfigError on negative weights or malformed values.
  void validate() const;
};

/// Generation amplitudes and the fixed reconstruction noise.
struct NoiseSet {
  std::uint64_t seed = 0;
  double c_rec = 0.1;
  /// Per level; NaN until the level's amplitude has been computed.
  std::vector<double> sigma;
  /// Per level (1,3,h,w); undefined until sigma is known. Shared by every
  /// identity.
  std::vector<torch::Tensor> zrec;
};

/// Unit-normal draw scaled to the level's reconstruction amplitude:
/// sigma at the coarsest level, c_rec * sigma elsewhere.
torch::Tensor draw_reconstruction_noise(std::uint64_t seed, int level, int coarsest, Size2 size,
                                        double sigma, double c_rec);

struct TrainingImage {
  /// Original path (informational).
  std::string source;
  /// Finest-level image.
  ImageBuffer image;
};

/// Optimizer moments and bookkeeping for one level.
struct ScaleState {
  std::int64_t iterations_done = 0;
  bool trained = false;
  /// Adam state keyed "g.<param>.exp_avg", "d.<param>.exp_avg_sq", "g.<param>.step", ...
  std::map<std::string, torch::Tensor> optimizer;
};

/// Everything needed to generate from (and resume) a trained model.
struct ModelBundle {
  TrainConfig config;
  ScalePlan plan;
  std::int64_t num_identities = 0;
  std::vector<TrainingImage> images;
  std::vector<GeneratorScale> generators;          // by level
  std::vector<DiscriminatorScale> discriminators;  // by level
  NoiseSet noise;
  std::vector<ScaleState> state;  // by level
  /// pyramids[k][level]
  std::vector<std::vector<ImageBuffer>> pyramids;

  int num_levels() const { return plan.num_levels(); }
  bool level_trained(int level) const { return state.at(level).trained; }
  /// Rebuilds `pyramids` from `images` and `plan`.
  void rebuild_pyramids();
};

/// Fresh bundle: plan from the first image, every image resized to the
/// finest level size, networks initialized, nothing trained.
ModelBundle make_bundle(const std::vector<TrainingImage>& images, const TrainConfig& config);

}  // namespace blendgan
