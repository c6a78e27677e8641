#include "blendgan/region_generation.hpp"

#include "blendgan/errors.hpp"

#include <torch/torch.h>

#include <algorithm>

namespace blendgan {

Region full_region(Size2 size) { return {0, 0, size.height, size.width}; }

Region clamp_region(const Region& r, Size2 bounds) {
  const auto top = std::clamp<std::int64_t>(r.top, 0, bounds.height);
  const auto left = std::clamp<std::int64_t>(r.left, 0, bounds.width);
  const auto bottom = std::clamp<std::int64_t>(r.top + r.height, 0, bounds.height);
  const auto right = std::clamp<std::int64_t>(r.left + r.width, 0, bounds.width);
  return {top, left, std::max<std::int64_t>(0, bottom - top),
          std::max<std::int64_t>(0, right - left)};
}

torch::Tensor zero_outside(torch::Tensor t, const Region& r, Size2 bounds) {
  const Region inside = clamp_region(r, bounds);
  if (inside == r) return t;
  auto mask = torch::zeros({r.height, r.width}, t.options());
  if (inside.height > 0 && inside.width > 0) {
    mask.slice(0, inside.top - r.top, inside.top - r.top + inside.height)
        .slice(1, inside.left - r.left, inside.left - r.left + inside.width)
        .fill_(1.0);
  }
  return t * mask;
}

RegionGenerator::RegionGenerator(const ModelBundle& bundle, PyramidSources sources)
    : bundle_(bundle), sources_(std::move(sources)) {
  if (static_cast<int>(sources_.sizes.size()) != bundle_.num_levels()) {
    throw InvalidInput("pyramid sources must give one size per level");
  }
  if (sources_.start_level < 0 || sources_.start_level > bundle_.plan.coarsest()) {
    throw InvalidInput("start level outside the pyramid");
  }
  if (!sources_.noise || !sources_.identity) {
    throw InvalidInput("pyramid sources need noise and identity callbacks");
  }
}

torch::Tensor RegionGenerator::prev_up(int level, const Region& r) const {
  const Size2 bounds = sources_.sizes.at(level);
  const auto opts = torch::TensorOptions().dtype(torch::kFloat32);
  if (level >= sources_.start_level) {
    if (level == sources_.start_level && sources_.start_prev) {
      return zero_outside(sources_.start_prev(level, r), r, bounds);
    }
    return torch::zeros({sources_.batch, 3, r.height, r.width}, opts);
  }
  const Region inside = clamp_region(r, bounds);
  auto out = torch::zeros({sources_.batch, 3, r.height, r.width}, opts);
  if (inside.height == 0 || inside.width == 0) return out;

  const Size2 src_size = sources_.sizes.at(level + 1);
  const auto rows = resample_source_span(src_size.height, bounds.height, inside.top,
                                         inside.top + inside.height, Kernel::Bicubic);
  const auto cols = resample_source_span(src_size.width, bounds.width, inside.left,
                                         inside.left + inside.width, Kernel::Bicubic);
  const Region src_region{rows.first, cols.first, rows.second - rows.first,
                          cols.second - cols.first};
  auto src = output(level + 1, src_region);
  auto up = resample_window(src, src_size, src_region.top, src_region.left, bounds, inside.top,
                            inside.left, inside.size(), Kernel::Bicubic)
                .clamp(-1.0, 1.0);
  out.slice(2, inside.top - r.top, inside.top - r.top + inside.height)
      .slice(3, inside.left - r.left, inside.left - r.left + inside.width)
      .copy_(up);
  return out;
}

torch::Tensor RegionGenerator::output(int level, const Region& r) const {
  const Size2 bounds = sources_.sizes.at(level);
  if (clamp_region(r, bounds) != r || r.height < 1 || r.width < 1) {
    throw GeometryError("output region must be a non-empty window inside the level");
  }
  if (level > sources_.start_level) {
    throw InvalidInput("level above the start level is not generated");
  }
  const Region in = r.expanded(kScaleHalo);
  auto z = zero_outside(sources_.noise(level, in), in, bounds);
  auto prev = prev_up(level, in);
  auto id = sources_.identity(level, in);
  torch::NoGradGuard no_grad;
  return bundle_.generators.at(level).ptr()->forward(z, prev, id, NormMode::Tracked);
}

}  // namespace blendgan
