#pragma once

#include "blendgan/tensor_pyramid.hpp"

#include <filesystem>
#include <string>

namespace blendgan {

/// Pristine multivariate Gaussian and smoothing window for NIQE.
///
/// File format (text, whitespace separated):
///   blendgan-niqe 1
///   block <h> <w>
///   mu <D>          followed by D numbers
///   cov <D> <D>     followed by D*D numbers, row major
///   window <h> <w>  followed by h*w numbers, row major
struct NiqeModel {
  std::int64_t block_h = 96;
  std::int64_t block_w = 96;
  torch::Tensor mu;      // (36) float64
  torch::Tensor cov;     // (36,36)
  torch::Tensor window;  // (7,7)

  /// Throws ConfigError when the file is missing or malformed.
  static NiqeModel load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Score of an RGB image in [-1,1]; lower is better. Works on the rounded
/// luma channel (BT.601 studio range) cropped to whole blocks. Throws
/// InvalidInput for images smaller than one block.
double niqe(const ImageBuffer& img, const NiqeModel& model);

/// Same on a luma plane (H,W) with values in [0,255].
double niqe_luma(const torch::Tensor& luma, const NiqeModel& model);

/// MATLAB-style antialiased bicubic resize (a = -0.5, symmetric borders) of
/// an (H,W) plane by `scale`.
torch::Tensor imresize_matlab(const torch::Tensor& plane, double scale);

}  // namespace blendgan
