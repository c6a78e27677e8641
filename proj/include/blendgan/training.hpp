#pragma once

#include "blendgan/identity_maps.hpp"
#include "blendgan/model.hpp"
#include "blendgan/region_generation.hpp"

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace blendgan {

struct LossRecord {
  int level = 0;
  std::int64_t iteration = 0;
  double d_loss = 0.0;
  double g_adv = 0.0;
  double g_rec = 0.0;
  double g_sem = 0.0;
  double gp = 0.0;
};

struct LossReport {
  std::vector<LossRecord> records;
  std::int64_t peak_memory_bytes = 0;
  /// Set when training aborted on a non-finite value.
  std::optional<std::string> fault;

  /// One JSON object per line.
  void write_ndjson(std::ostream& out) const;
};

// Losses -------------------------------------------------------------------

struct CriticLoss {
  torch::Tensor loss;  ///< mean D(fake) - mean D(real) + lambda * gp
  torch::Tensor gp;    ///< unweighted penalty mean (|grad| - 1)^2
};

/// A critic maps a batch (N,C,H,W) to a per-sample score (N); patch score
/// maps are averaged by `patch_average`.
using Critic = std::function<torch::Tensor(const torch::Tensor&)>;

/// Averages a patch score map (N,...) into one score per sample.
torch::Tensor patch_average(const torch::Tensor& scores);

/// WGAN-GP critic objective. `mix` holds one interpolation coefficient per
/// sample (uniform in [0,1]); the penalty uses the gradient of each
/// sample's score with respect to its own interpolate.
CriticLoss wgan_gp_d_loss(const Critic& critic, const torch::Tensor& real,
                          const torch::Tensor& fake, double lambda_gp, const torch::Tensor& mix);

/// Mean squared error between a reconstruction and its target.
torch::Tensor reconstruction_loss(const torch::Tensor& output, const torch::Tensor& target);

/// Image embedding used by the semantic blending term.
class Embedding {
 public:
  virtual ~Embedding() = default;
  /// (N,3,H,W) in [-1,1] -> (N,D)
  virtual torch::Tensor embed(const torch::Tensor& images) = 0;
};

/// || phi(generated) - sum_k alpha_k phi(image_k) ||_1, averaged over the
/// batch. `images` is (K,3,H,W); `alpha` has K entries on the simplex.
torch::Tensor semantic_blend_loss(Embedding& phi, const torch::Tensor& generated,
                                  const std::vector<double>& alpha, const torch::Tensor& images);

/// Dirichlet(1,...,1) draw.
std::vector<double> draw_simplex_weights(std::int64_t k, at::Generator& gen);

/// sigma_base * mean over identities of RMSE(upsampled reconstruction,
/// level image). Tensors are (3,H,W) or (1,3,H,W).
double compute_sigma(const std::vector<torch::Tensor>& upsampled_recs,
                     const std::vector<torch::Tensor>& targets, double sigma_base);

// Batches ------------------------------------------------------------------

struct BatchItem {
  std::int64_t identity = 0;
  CropWindow window;  ///< core window at the level, halo included
};

/// Full images (one per identity) on uncropped levels; two independent
/// random crops per identity on cropped levels. Every identity is present.
std::vector<BatchItem> make_batch(int level, const ScalePlan& plan, std::int64_t num_identities,
                                  at::Generator& gen);

/// Identity plane (1,K,h,w) for a training sample. Rejects maps that are not
/// categorical or not spatially constant.
torch::Tensor training_identity(const IdentityMap& map, Size2 size);

// Training -----------------------------------------------------------------

struct TrainHooks {
  /// Called after each level finishes (checkpointing).
  std::function<void(const ModelBundle&, int level)> on_level_done;
  /// Optional semantic embedding; required when alpha_sem > 0.
  std::shared_ptr<Embedding> embedding;
  /// Print progress lines to stderr.
  bool verbose = false;
};

/// Trains a single level against frozen coarser levels. Computes the
/// level's noise amplitude first when it is still unknown.
LossReport train_scale(int level, ModelBundle& bundle, const TrainHooks& hooks = {});

/// Trains every level not yet marked trained, coarse to fine. Resumes a
/// partially trained level from its stored iteration count.
void train_bundle(ModelBundle& bundle, const TrainHooks& hooks = {}, LossReport* report = nullptr);

/// Coarse-to-fine training of every level.
ModelBundle train_all(const std::vector<TrainingImage>& images, const TrainConfig& config,
                      const TrainHooks& hooks = {}, LossReport* report = nullptr);

/// Reconstruction of identity k at `level` (no upsampling), full size, using
/// z^rec at every level. Levels coarser than `level` must be trained.
torch::Tensor reconstruct_level(const ModelBundle& bundle, std::int64_t k, int level);

/// Reconstruction at level+1 resampled to the size of `level`; zeros at the
/// coarsest level. (1,3,h,w)
torch::Tensor reconstruction_prev_up(const ModelBundle& bundle, std::int64_t k, int level);

/// Computes sigma for `level` and draws its reconstruction noise.
void prepare_level_noise(ModelBundle& bundle, int level);

/// Optimizer and caches for training one level. Coarser levels are frozen;
/// their reconstruction path is cached once at construction.
class ScaleTrainer {
 public:
  ScaleTrainer(ModelBundle& bundle, int level, Embedding* embedding = nullptr);
  ~ScaleTrainer();
  ScaleTrainer(const ScaleTrainer&) = delete;
  ScaleTrainer& operator=(const ScaleTrainer&) = delete;

  /// One optimization iteration: all D steps then all G steps.
  LossRecord step(std::int64_t iteration);
  /// Stores optimizer moments and the iteration count into the bundle.
  void finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Configures intra-op threading from the config.
void apply_threading(const TrainConfig& config);

}  // namespace blendgan
