#pragma once

#include "blendgan/image_io.hpp"
#include "blendgan/tensor_pyramid.hpp"

#include <torch/types.h>

#include <vector>

namespace blendgan {

/// Per-pixel mixture weights over K training identities, stored (K,H,W).
///
/// Every pixel is a point on the probability simplex: weights are
/// non-negative and sum to one within 1e-6. A map is categorical when every
/// pixel is one-hot.
class IdentityMap {
 public:
  IdentityMap() = default;

  /// Validates the simplex invariants; throws ValidationError.
  static IdentityMap from_tensor(torch::Tensor khw);

  const torch::Tensor& tensor() const { return weights_; }
  std::int64_t num_identities() const { return weights_.size(0); }
  std::int64_t height() const { return weights_.size(1); }
  std::int64_t width() const { return weights_.size(2); }
  Size2 size() const { return {height(), width()}; }
  bool empty() const { return !weights_.defined(); }

  bool is_categorical() const;
  /// Identity index per pixel (argmax). Only meaningful for categorical maps.
  torch::Tensor labels() const;

 private:
  explicit IdentityMap(torch::Tensor w) : weights_(std::move(w)) {}
  torch::Tensor weights_;
};

IdentityMap constant_id(std::int64_t k, std::int64_t num_identities, Size2 size);

/// Spatially constant mixture; throws ValidationError off the simplex.
IdentityMap blend_constant(const std::vector<double>& weights, Size2 size);

/// One boolean (H,W) mask per identity; they must partition the grid.
IdentityMap mask_id(const std::vector<torch::Tensor>& masks);

/// Integer label image (H,W) with values in [0,K).
IdentityMap labels_id(const torch::Tensor& labels, std::int64_t num_identities);

enum class Axis { Horizontal, Vertical };

/// Two-identity linear ramp: identity 0 before fraction a, identity 1 after
/// fraction b, measured at pixel centres.
IdentityMap ramp_id(Axis axis, double a, double b, Size2 size);

/// Bilinear resampling followed by clamping and per-pixel renormalization.
IdentityMap resample_id(const IdentityMap& map, Size2 target);

/// One identity map per pyramid level, materialized at any level size on
/// demand.
class IdentitySchedule {
 public:
  IdentitySchedule() = default;
  /// The same map at every level.
  IdentitySchedule(IdentityMap map, int num_levels);
  explicit IdentitySchedule(std::vector<IdentityMap> per_level);

  int num_levels() const { return static_cast<int>(per_level_.size()); }
  std::int64_t num_identities() const;
  const IdentityMap& level(int i) const { return per_level_.at(i); }
  /// The level's map resampled to `size`.
  IdentityMap at(int i, Size2 size) const;

 private:
  std::vector<IdentityMap> per_level_;
};

/// Levels >= transition_level use coarse_map, finer levels use fine_map.
IdentitySchedule scale_schedule(const IdentityMap& coarse_map, const IdentityMap& fine_map,
                                int transition_level, const ScalePlan& plan);

/// Throws NonCategoricalError unless every pixel is one-hot.
void require_categorical(const IdentityMap& map);

// Wire formats ------------------------------------------------------------

/// Palette PNG, palette index = identity. Categorical maps only.
Bytes encode_id_png(const IdentityMap& map);
/// K is the larger of the palette size and max index + 1, unless given.
IdentityMap decode_id_png(const Bytes& bytes, std::int64_t num_identities = 0);

/// 16-byte header {"BGID", u16 version, u16 K, u32 h, u32 w} followed by K
/// planes of h*w little-endian float32.
Bytes encode_id_raster(const IdentityMap& map);
IdentityMap decode_id_raster(const Bytes& bytes);

/// Sniffs the format (PNG signature or BGID magic).
IdentityMap decode_id_map(const Bytes& bytes, std::int64_t num_identities = 0);

}  // namespace blendgan
