#include "blendgan/tensor_pyramid.hpp"

#include "blendgan/errors.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <string>

namespace blendgan {
namespace {

double cubic(double x) {
  constexpr double a = -0.75;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

double triangle(double x) { return std::max(0.0, 1.0 - std::abs(x)); }

void check_positive(Size2 s, const char* what) {
  if (s.height < 1 || s.width < 1) {
    throw InvalidInput(std::string(what) + " must be at least 1x1, got " +
                       std::to_string(s.height) + "x" + std::to_string(s.width));
  }
}

}  // namespace

ImageBuffer::ImageBuffer(torch::Tensor chw) {
  if (!chw.defined() || chw.dim() != 3 || chw.size(1) < 1 || chw.size(2) < 1) {
    throw InvalidInput("ImageBuffer expects a non-empty (C,H,W) tensor");
  }
  data_ = chw.to(torch::kFloat32).clamp(-1.0, 1.0).contiguous();
}

std::int64_t default_crop_window(std::int64_t max_dim) { return max_dim <= 300 ? 128 : 256; }

Size2 working_size(Size2 full, std::int64_t max_dim) {
  check_positive(full, "image");
  const std::int64_t larger = std::max(full.height, full.width);
  if (larger <= max_dim) return full;
  const double f = static_cast<double>(max_dim) / static_cast<double>(larger);
  return {std::max<std::int64_t>(1, std::llround(full.height * f)),
          std::max<std::int64_t>(1, std::llround(full.width * f))};
}

ScalePlan build_scale_plan(Size2 full, double r, std::int64_t min_dim, std::int64_t max_dim,
                           std::int64_t crop_window) {
  if (!(r > 0.0 && r < 1.0)) throw InvalidInput("scale factor must lie in (0,1)");
  if (min_dim < 1 || min_dim > max_dim) throw InvalidInput("require 1 <= min_dim <= max_dim");
  if (crop_window < 0) throw InvalidInput("crop window must be >= 0");

  const Size2 top = working_size(full, max_dim);
  const std::int64_t min_side = std::min(top.height, top.width);
  if (min_side < min_dim) {
    throw InvalidInput("image smaller than min_dim: smaller side " + std::to_string(min_side) +
                       " < " + std::to_string(min_dim));
  }

  // Tolerance keeps exact powers (e.g. 20/160 at r=0.5) from rounding up.
  const double exact = std::log(static_cast<double>(min_dim) / static_cast<double>(min_side)) /
                       std::log(r);
  const int n = static_cast<int>(std::ceil(exact - 1e-9));

  ScalePlan plan;
  plan.scale_factor = r;
  plan.min_dim = min_dim;
  plan.max_dim = max_dim;
  plan.crop_window = crop_window;
  for (int i = 0; i < n; ++i) {
    const double f = std::pow(r, i);
    plan.sizes.push_back({std::max<std::int64_t>(1, std::llround(top.height * f)),
                          std::max<std::int64_t>(1, std::llround(top.width * f))});
  }
  const double snap = static_cast<double>(min_dim) / static_cast<double>(min_side);
  plan.sizes.push_back({std::max<std::int64_t>(1, std::llround(top.height * snap)),
                        std::max<std::int64_t>(1, std::llround(top.width * snap))});

  // Rounding can make the snapped coarsest level collide with its neighbour.
  while (plan.sizes.size() >= 2) {
    const Size2& fine = plan.sizes[plan.sizes.size() - 2];
    const Size2& coarse = plan.sizes.back();
    if (fine.height > coarse.height && fine.width > coarse.width) break;
    plan.sizes.erase(plan.sizes.end() - 2);
  }

  for (const Size2& s : plan.sizes) {
    if (crop_window > 0 && std::max(s.height, s.width) > crop_window) {
      plan.crops.emplace_back(crop_window);
    } else {
      plan.crops.emplace_back(std::nullopt);
    }
  }
  return plan;
}

torch::Tensor resample_weights(std::int64_t in, std::int64_t out, Kernel kernel) {
  if (in < 1 || out < 1) throw InvalidInput("resample sizes must be >= 1");
  auto w = torch::zeros({out, in}, torch::kFloat64);
  auto acc = w.accessor<double, 2>();
  const double scale = static_cast<double>(out) / static_cast<double>(in);
  const double squeeze = std::min(1.0, scale);
  const double radius = (kernel == Kernel::Bicubic ? 2.0 : 1.0) / squeeze;
  for (std::int64_t o = 0; o < out; ++o) {
    const double centre = (static_cast<double>(o) + 0.5) / scale - 0.5;
    const auto first = static_cast<std::int64_t>(std::floor(centre - radius));
    const auto last = static_cast<std::int64_t>(std::ceil(centre + radius));
    double total = 0.0;
    for (std::int64_t j = first; j <= last; ++j) {
      const double x = (static_cast<double>(j) - centre) * squeeze;
      const double v = kernel == Kernel::Bicubic ? cubic(x) : triangle(x);
      if (v == 0.0) continue;
      const std::int64_t idx = std::clamp<std::int64_t>(j, 0, in - 1);
      acc[o][idx] += v;
      total += v;
    }
    for (std::int64_t j = 0; j < in; ++j) acc[o][j] /= total;
  }
  return w;
}

torch::Tensor resample_tensor(const torch::Tensor& t, Size2 target, Kernel kernel) {
  check_positive(target, "resample target");
  const std::int64_t h = t.size(-2);
  const std::int64_t w = t.size(-1);
  if (h == target.height && w == target.width) return t.clone();
  const auto opts = t.options();
  auto out = t;
  if (h != target.height) {
    out = torch::matmul(resample_weights(h, target.height, kernel).to(opts), out);
  }
  if (w != target.width) {
    out = torch::matmul(out, resample_weights(w, target.width, kernel).to(opts).t());
  }
  return out.contiguous();
}

ImageBuffer resample(const ImageBuffer& img, Size2 target) {
  return ImageBuffer(resample_tensor(img.tensor(), target, Kernel::Bicubic));
}

std::pair<std::int64_t, std::int64_t> resample_source_span(std::int64_t in, std::int64_t out,
                                                           std::int64_t out_first,
                                                           std::int64_t out_last, Kernel kernel) {
  if (in == out) return {out_first, out_last};
  auto w = resample_weights(in, out, kernel).slice(0, out_first, out_last);
  auto used = (w != 0).any(0);
  auto idx = torch::nonzero(used).flatten();
  if (idx.numel() == 0) return {0, 0};
  return {idx.min().item<std::int64_t>(), idx.max().item<std::int64_t>() + 1};
}

torch::Tensor resample_window(const torch::Tensor& src, Size2 src_full, std::int64_t src_top,
                              std::int64_t src_left, Size2 dst_full, std::int64_t dst_top,
                              std::int64_t dst_left, Size2 dst, Kernel kernel) {
  const std::int64_t sh = src.size(-2);
  const std::int64_t sw = src.size(-1);
  auto axis = [&](std::int64_t in, std::int64_t out, std::int64_t first, std::int64_t count,
                  std::int64_t src_first, std::int64_t src_count) {
    auto full = in == out ? torch::eye(in, torch::kFloat64) : resample_weights(in, out, kernel);
    auto rows = full.slice(0, first, first + count);
    auto inside = rows.slice(1, src_first, src_first + src_count);
    if (!torch::allclose(inside.sum(1), torch::ones({count}, torch::kFloat64), 0.0, 1e-12)) {
      throw GeometryError("source window does not cover the resampling support");
    }
    return inside;
  };
  if (dst_top < 0 || dst_left < 0 || dst_top + dst.height > dst_full.height ||
      dst_left + dst.width > dst_full.width) {
    throw GeometryError("destination window outside the target size");
  }
  auto wy = axis(src_full.height, dst_full.height, dst_top, dst.height, src_top, sh);
  auto wx = axis(src_full.width, dst_full.width, dst_left, dst.width, src_left, sw);
  const auto opts = src.options();
  return torch::matmul(torch::matmul(wy.to(opts), src), wx.to(opts).t()).contiguous();
}

torch::Tensor extract_region(const torch::Tensor& t, std::int64_t top, std::int64_t left,
                             std::int64_t height, std::int64_t width, PadMode pad) {
  if (height < 0 || width < 0) throw GeometryError("negative region size");
  const std::int64_t h = t.size(-2);
  const std::int64_t w = t.size(-1);
  if (pad == PadMode::Replicate) {
    auto opts = torch::TensorOptions().dtype(torch::kLong);
    auto rows = torch::arange(top, top + height, opts).clamp(0, h - 1);
    auto cols = torch::arange(left, left + width, opts).clamp(0, w - 1);
    return t.index_select(-2, rows).index_select(-1, cols).contiguous();
  }
  auto shape = t.sizes().vec();
  shape[shape.size() - 2] = height;
  shape[shape.size() - 1] = width;
  auto out = torch::zeros(shape, t.options());
  const std::int64_t r0 = std::max<std::int64_t>(top, 0);
  const std::int64_t r1 = std::min<std::int64_t>(top + height, h);
  const std::int64_t c0 = std::max<std::int64_t>(left, 0);
  const std::int64_t c1 = std::min<std::int64_t>(left + width, w);
  if (r0 < r1 && c0 < c1) {
    out.slice(-2, r0 - top, r1 - top)
        .slice(-1, c0 - left, c1 - left)
        .copy_(t.slice(-2, r0, r1).slice(-1, c0, c1));
  }
  return out;
}

torch::Tensor crop_with_halo(const torch::Tensor& t, const CropWindow& win, PadMode pad) {
  if (win.halo < 0) throw GeometryError("halo must be >= 0");
  if (win.top < 0 || win.left < 0 || win.height < 1 || win.width < 1 ||
      win.top + win.height > t.size(-2) || win.left + win.width > t.size(-1)) {
    throw GeometryError("crop window (" + std::to_string(win.top) + "," +
                        std::to_string(win.left) + "," + std::to_string(win.height) + "," +
                        std::to_string(win.width) + ") outside a " + std::to_string(t.size(-2)) +
                        "x" + std::to_string(t.size(-1)) + " tensor");
  }
  return extract_region(t, win.top - win.halo, win.left - win.halo, win.height + 2 * win.halo,
                        win.width + 2 * win.halo, pad);
}

std::vector<ImageBuffer> build_pyramid(const ImageBuffer& finest, const ScalePlan& plan) {
  std::vector<ImageBuffer> levels;
  levels.reserve(plan.sizes.size());
  for (const Size2& s : plan.sizes) levels.push_back(resample(finest, s));
  return levels;
}

}  // namespace blendgan
