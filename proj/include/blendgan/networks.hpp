#pragma once

#include "blendgan/identity_maps.hpp"

#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/pimpl.h>

#include <cstdint>
#include <optional>

namespace blendgan {

/// Channels per block: min{cap, base * 2^floor(i/4)}, i counted from the
/// coarsest scale.
std::int64_t channels_for_scale(int scales_from_coarsest, std::int64_t base = 32,
                                std::int64_t cap = 512);

/// Receptive field of a stack of unpadded 3x3 convolutions.
constexpr std::int64_t receptive_field(int num_convs) { return 1 + 2 * num_convs; }
constexpr std::int64_t halo_for(std::int64_t rf) { return (rf - 1) / 2; }

/// head + three blocks + tail
constexpr int kConvsPerScale = 5;
constexpr std::int64_t kScaleReceptiveField = receptive_field(kConvsPerScale);
constexpr std::int64_t kScaleHalo = halo_for(kScaleReceptiveField);

/// How normalization statistics are obtained.
///  - Instance: per-sample spatial statistics of the input (differentiable).
///  - Tracked:  stored running statistics, mixed per pixel by slot weights.
///              Pointwise, so crops and full images agree exactly.
///  - Batch:    per-slot statistics pooled over the batch (differentiable),
///              mixed per pixel like Tracked.
///  - Update:   Batch, and the running statistics absorb the batch values.
enum class NormMode { Instance, Tracked, Batch, Update };

/// Parameter-free channel normalization with optional per-slot running
/// statistics. The generator uses one slot per identity; the discriminator
/// uses a single slot.
class TrackedNormImpl : public torch::nn::Module {
 public:
  TrackedNormImpl(std::int64_t channels, std::int64_t slots, double momentum = 0.1,
                  double eps = 1e-5);

  /// `slot_weights` is (N,slots,H,W) matching x spatially, or undefined for
  /// a single slot.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& slot_weights,
                        NormMode mode);

  void set_momentum(double m) { momentum_ = m; }
  const torch::Tensor& running_mean() const { return running_mean_; }
  const torch::Tensor& running_var() const { return running_var_; }

 private:
  /// Pooled (slots, C) mean and variance, slot mass (slots).
  std::tuple<torch::Tensor, torch::Tensor, torch::Tensor> batch_stats(
      const torch::Tensor& x, const torch::Tensor& slot_weights) const;
  void update(const torch::Tensor& mean, const torch::Tensor& var, const torch::Tensor& mass);

  std::int64_t slots_;
  double momentum_;
  double eps_;
  torch::Tensor running_mean_;  // (slots, C)
  torch::Tensor running_var_;   // (slots, C)
  torch::Tensor seen_;          // (slots) 0/1
};
TORCH_MODULE(TrackedNorm);

/// SPADE unit with 1x1 convolutions: id -> shared hidden (ReLU) -> gamma,
/// beta. Output = gamma * normalize(x) + beta.
class SpadeUnitImpl : public torch::nn::Module {
 public:
  SpadeUnitImpl(std::int64_t channels, std::int64_t num_identities, std::int64_t hidden);

  /// `id` is (N,K,H,W) with the spatial size of `x`.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& id, NormMode mode);
  std::pair<torch::Tensor, torch::Tensor> modulation(const torch::Tensor& id);

  torch::nn::Conv2d shared{nullptr};
  torch::nn::Conv2d gamma{nullptr};
  torch::nn::Conv2d beta{nullptr};
  TrackedNorm norm{nullptr};
};
TORCH_MODULE(SpadeUnit);

/// Conv3x3 -> SPADE(id) -> LeakyReLU(0.2)
class SBasicBlockImpl : public torch::nn::Module {
 public:
  SBasicBlockImpl(std::int64_t channels, std::int64_t num_identities);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& id, NormMode mode);

  torch::nn::Conv2d conv{nullptr};
  SpadeUnit spade{nullptr};
};
TORCH_MODULE(SBasicBlock);

/// Conv3x3 -> normalization -> LeakyReLU(0.2)
class BasicBlockImpl : public torch::nn::Module {
 public:
  explicit BasicBlockImpl(std::int64_t channels);
  torch::Tensor forward(const torch::Tensor& x, NormMode mode);

  torch::nn::Conv2d conv{nullptr};
  TrackedNorm norm{nullptr};
};
TORCH_MODULE(BasicBlock);

/// One pyramid level of the generator. All convolutions are unpadded, so an
/// input of size s yields an output of size s - (RF-1).
class GeneratorScaleImpl : public torch::nn::Module {
 public:
  GeneratorScaleImpl(std::int64_t channels, std::int64_t num_identities);

  /// z, prev_up: (N,3,H,W); id: (N,K,H,W). Returns (N,3,H-2h,W-2h) where h
  /// is the halo: tanh(net(z + prev_up) + centre crop of prev_up).
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& prev_up,
                        const torch::Tensor& id, NormMode mode = NormMode::Tracked);

  /// Same-size forward: zero-pads z + prev_up by the halo and replicates
  /// the identity map at the border.
  torch::Tensor forward_full(const torch::Tensor& z, const torch::Tensor& prev_up,
                             const torch::Tensor& id, NormMode mode = NormMode::Tracked);

  std::int64_t channels() const { return channels_; }
  std::int64_t num_identities() const { return num_identities_; }
  void set_norm_momentum(double m);

  torch::nn::Conv2d head{nullptr};
  torch::nn::ModuleList blocks;
  torch::nn::Conv2d tail{nullptr};

 private:
  std::int64_t channels_;
  std::int64_t num_identities_;
};
TORCH_MODULE(GeneratorScale);

/// One pyramid level of the unconditional patch discriminator; emits one
/// score per receptive-field patch.
class DiscriminatorScaleImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorScaleImpl(std::int64_t channels);
  torch::Tensor forward(const torch::Tensor& x, NormMode mode = NormMode::Tracked);

  std::int64_t channels() const { return channels_; }
  void set_norm_momentum(double m);

  torch::nn::Conv2d head{nullptr};
  torch::nn::ModuleList blocks;
  torch::nn::Conv2d tail{nullptr};

 private:
  std::int64_t channels_;
};
TORCH_MODULE(DiscriminatorScale);

/// Centre crop of the last two dims by `margin` on each side.
torch::Tensor centre_crop(const torch::Tensor& t, std::int64_t margin);
/// Centre crop of the last two dims down to (h, w).
torch::Tensor centre_crop_to(const torch::Tensor& t, std::int64_t h, std::int64_t w);

/// Zero-mean normal init (std 0.02), zero biases; SPADE gamma/beta start at
/// exactly 1 and 0.
void init_weights(torch::nn::Module& module, double stddev = 0.02,
                  std::optional<at::Generator> gen = std::nullopt);

/// gamma(id) * normalize(features) + beta(id) for a single (C,H,W) feature
/// map, normalizing with per-channel spatial statistics.
torch::Tensor spade_modulate(SpadeUnitImpl& unit, const torch::Tensor& features,
                             const IdentityMap& id_map, NormMode mode = NormMode::Instance);

/// Parameter-level deep copy (weights and buffers) between same-shape modules.
void copy_state(const torch::nn::Module& from, torch::nn::Module& to);

}  // namespace blendgan
