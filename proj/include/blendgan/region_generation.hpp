#pragma once

#include "blendgan/model.hpp"

#include <functional>
#include <vector>

namespace blendgan {

/// Rectangle in level coordinates; may extend past the level bounds.
struct Region {
  std::int64_t top = 0;
  std::int64_t left = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;

  Region expanded(std::int64_t margin) const {
    return {top - margin, left - margin, height + 2 * margin, width + 2 * margin};
  }
  Size2 size() const { return {height, width}; }
  friend bool operator==(const Region&, const Region&) = default;
};

Region full_region(Size2 size);
/// Intersection with [0,h) x [0,w); may be empty (height or width 0).
Region clamp_region(const Region& r, Size2 bounds);

/// Inputs for running frozen generators over a window of the pyramid.
/// Every callback returns a batch (N, ., r.height, r.width) for a region at
/// a level; pixels outside the level bounds must be zero for noise.
struct PyramidSources {
  /// Output size per level.
  std::vector<Size2> sizes;
  std::int64_t batch = 1;
  /// Coarsest level that is run; the previous image above it comes from
  /// `start_prev` (zeros when unset).
  int start_level = 0;
  std::function<torch::Tensor(int level, const Region&)> noise;
  /// (N,K,h,w); replicate-padded outside the bounds.
  std::function<torch::Tensor(int level, const Region&)> identity;
  std::function<torch::Tensor(int level, const Region&)> start_prev;
};

/// Generates level outputs restricted to windows, recursing into coarser
/// levels only over the pixels a window depends on. Generators run in
/// Tracked (frozen) normalization mode.
class RegionGenerator {
 public:
  RegionGenerator(const ModelBundle& bundle, PyramidSources sources);

  /// Generator output at `level` over `r` (r must lie inside the bounds).
  torch::Tensor output(int level, const Region& r) const;

  /// Upsampled previous-level image at `level` over `r`; zero outside the
  /// bounds.
  torch::Tensor prev_up(int level, const Region& r) const;

  /// Convenience: the full-size output at level 0.
  torch::Tensor finest() const { return output(0, full_region(sources_.sizes.at(0))); }

 private:
  const ModelBundle& bundle_;
  PyramidSources sources_;
};

/// Zero outside [0,h) x [0,w) for a tensor laid over `r`.
torch::Tensor zero_outside(torch::Tensor t, const Region& r, Size2 bounds);

}  // namespace blendgan
