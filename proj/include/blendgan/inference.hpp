#pragma once

#include "blendgan/identity_maps.hpp"
#include "blendgan/model.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace blendgan {

/// Where the fixed reconstruction noise replaces random noise. z^rec of each
/// level is placed at offset round(frac * (output_size - plan_size)) along
/// each axis and used where `mask` is set (and z^rec covers the pixel).
struct RecPlacement {
  double row_frac = 0.0;
  double col_frac = 0.0;
  /// (H,W) at the output size, nonzero = use z^rec. Undefined = everywhere.
  torch::Tensor mask;
};

struct GenerationRequest {
  /// One map per level (a single map may be broadcast with
  /// IdentitySchedule(map, levels)).
  IdentitySchedule schedule;
  /// Finest output size; the plan's finest size when unset.
  std::optional<Size2> size;
  std::uint64_t seed = 0;
  /// Empty: random noise everywhere. Later placements win on overlap.
  std::vector<RecPlacement> reconstruction;
  /// First level that is run; -1 = coarsest.
  int start_level = -1;
  /// (3,h,w) image used as the upsampled previous image of `start_level`.
  torch::Tensor injected;
};

/// Per-level sizes for a finest output size: the plan's sizes scaled by the
/// ratio of the requested to the trained finest size, per axis.
std::vector<Size2> output_sizes(const ScalePlan& plan, Size2 finest);

/// Noise actually fed to level `level` for a request, (1,3,h,w).
torch::Tensor request_noise(const ModelBundle& bundle, const GenerationRequest& req, int level,
                            const std::vector<Size2>& sizes);

/// Core coarse-to-fine pass. Throws TooSmallInput if the start level would
/// be smaller than the receptive field.
ImageBuffer generate(const ModelBundle& bundle, const GenerationRequest& req);

enum class NoiseMode { Random, Reconstruction };

ImageBuffer sample(const ModelBundle& bundle, const IdentityMap& id_map,
                   std::optional<Size2> size, std::uint64_t seed);

ImageBuffer reconstruct(const ModelBundle& bundle, std::int64_t k);

struct MeldResult {
  ImageBuffer image;
  IdentityMap id_map;
  /// Column span [first, last) of each anchor band at the output size.
  std::vector<std::pair<std::int64_t, std::int64_t>> anchor_columns;
};

/// Horizontal meld across `anchors` (two or more identities, left to right).
/// Each of the N-1 transitions spans `transition_frac` of the width; the
/// remaining width is split evenly between the anchor bands, which use z^rec.
MeldResult meld(const ModelBundle& bundle, const std::vector<std::int64_t>& anchors,
                std::int64_t out_width, double transition_frac, std::uint64_t seed);

/// Identity map for a meld (K = the bundle's identity count).
IdentityMap meld_id_map(const std::vector<std::int64_t>& anchors, std::int64_t num_identities,
                        Size2 size, double transition_frac);

/// One frame per weight vector. Random mode reuses one noise draw for all
/// frames.
std::vector<ImageBuffer> morph(const ModelBundle& bundle,
                               const std::vector<std::vector<double>>& weights, NoiseMode noise,
                               std::uint64_t seed);

/// Structure identity at levels >= transition_level, texture identity below.
ImageBuffer fuse(const ModelBundle& bundle, std::int64_t structure_k, std::int64_t texture_k,
                 int transition_level, std::uint64_t seed,
                 NoiseMode noise = NoiseMode::Random);

/// Generation under a categorical mask at the mask's size. `faithful` (H,W)
/// marks pixels driven by z^rec; undefined = none.
ImageBuffer spatial_sample(const ModelBundle& bundle, const IdentityMap& mask_map,
                           const torch::Tensor& faithful, std::uint64_t seed);

/// Injects `edited` (resized to level m) as the upsampled previous image of
/// level m and re-renders levels m..0 with z^rec and `id_map`. Output has the
/// trained finest size.
ImageBuffer edit(const ModelBundle& bundle, const ImageBuffer& edited, int inject_level,
                 const IdentityMap& id_map, std::uint64_t seed);

/// Second-coarsest level (or 0 for single-level plans).
int default_inject_level(const ScalePlan& plan);

}  // namespace blendgan
