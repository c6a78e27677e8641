#pragma once

#include <torch/types.h>

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

namespace blendgan {

struct Size2 {
  std::int64_t height = 0;
  std::int64_t width = 0;

  friend bool operator==(const Size2&, const Size2&) = default;
  friend std::ostream& operator<<(std::ostream& os, const Size2& s) {
    return os << s.height << 'x' << s.width;
  }
};

/// A (C,H,W) float32 image with values in [-1, 1].
///
/// Construction clamps into range; loaders map [0,255] linearly onto [-1,1]
/// before handing pixels over.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  explicit ImageBuffer(torch::Tensor chw);

  const torch::Tensor& tensor() const { return data_; }
  std::int64_t channels() const { return data_.size(0); }
  std::int64_t height() const { return data_.size(1); }
  std::int64_t width() const { return data_.size(2); }
  Size2 size() const { return {height(), width()}; }
  bool empty() const { return !data_.defined(); }

 private:
  torch::Tensor data_;
};

/// Pyramid geometry: level 0 is the finest, level `coarsest()` the coarsest.
struct ScalePlan {
  double scale_factor = 0.75;
  std::vector<Size2> sizes;
  /// Side of the square training crop per level; nullopt means full image.
  std::vector<std::optional<std::int64_t>> crops;
  std::int64_t min_dim = 25;
  std::int64_t max_dim = 250;
  std::int64_t crop_window = 0;

  int num_levels() const { return static_cast<int>(sizes.size()); }
  int coarsest() const { return num_levels() - 1; }
  /// Index counted from the coarsest level (0 at the coarsest).
  int scales_from_coarsest(int level) const { return coarsest() - level; }
  const Size2& size(int level) const { return sizes.at(level); }
  bool cropped(int level) const { return crops.at(level).has_value(); }
};

struct CropWindow {
  std::int64_t top = 0;
  std::int64_t left = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t halo = 0;
};

enum class PadMode { Zeros, Replicate };
enum class Kernel { Bicubic, Bilinear };

/// 128 for small training images, 256 once the working size exceeds 300.
std::int64_t default_crop_window(std::int64_t max_dim);

/// Size of the finest level: the larger side is reduced to max_dim, never
/// enlarged.
Size2 working_size(Size2 full, std::int64_t max_dim);

/// Throws InvalidInput for bad ratios or an image smaller than min_dim.
/// A crop_window of 0 disables cropping.
ScalePlan build_scale_plan(Size2 full, double r, std::int64_t min_dim,
                           std::int64_t max_dim, std::int64_t crop_window);

/// (out, in) interpolation matrix; rows sum to one. Shrinking widens the
/// kernel by the inverse scale (antialiasing); borders replicate.
torch::Tensor resample_weights(std::int64_t in, std::int64_t out, Kernel kernel);

/// Separable resampling of the last two dimensions. Exact copy when the
/// size does not change.
torch::Tensor resample_tensor(const torch::Tensor& t, Size2 target, Kernel kernel);

/// Bicubic resampling clamped back into [-1, 1].
ImageBuffer resample(const ImageBuffer& img, Size2 target);

/// Rows/cols [first, last) of a source axis of length `in` that feed
/// output indices [out_first, out_last) of an axis resampled to `out`.
std::pair<std::int64_t, std::int64_t> resample_source_span(
    std::int64_t in, std::int64_t out, std::int64_t out_first,
    std::int64_t out_last, Kernel kernel);

/// Resamples a window of a larger tensor. `src` holds source rows starting
/// at src_top and cols starting at src_left of a (src_full) tensor; the
/// result is the [dst_top, dst_top+dst.height) x [dst_left, ...) window of
/// resample_tensor(full_source, dst_full). Throws GeometryError when `src`
/// does not cover the required span.
torch::Tensor resample_window(const torch::Tensor& src, Size2 src_full,
                              std::int64_t src_top, std::int64_t src_left,
                              Size2 dst_full, std::int64_t dst_top,
                              std::int64_t dst_left, Size2 dst, Kernel kernel);

/// Any (possibly out-of-bounds) rectangle of the last two dims. Pixels
/// outside the tensor are zero or replicate the border.
torch::Tensor extract_region(const torch::Tensor& t, std::int64_t top,
                             std::int64_t left, std::int64_t height,
                             std::int64_t width, PadMode pad = PadMode::Zeros);

/// Window expanded by `halo` on every side. The core window must lie inside
/// the tensor (GeometryError otherwise); halo pixels past the border are
/// zero-filled by default.
torch::Tensor crop_with_halo(const torch::Tensor& t, const CropWindow& win,
                             PadMode pad = PadMode::Zeros);

/// Level images resampled from the finest image.
std::vector<ImageBuffer> build_pyramid(const ImageBuffer& finest, const ScalePlan& plan);

}  // namespace blendgan
