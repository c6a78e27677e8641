#pragma once

#include "blendgan/tensor_pyramid.hpp"

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace blendgan {

/// Gaussian fit of feature vectors: mean (D) and covariance (D,D), float64.
struct FeatureStats {
  torch::Tensor mu;
  torch::Tensor sigma;

  /// Rows of `features` (N,D) are observations. Unbiased covariance.
  static FeatureStats from_features(const torch::Tensor& features);
};

/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)). Throws NumericError
/// if a covariance has an eigenvalue below -1e-8.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

/// Deep-feature extractor for SIFID: one feature vector per spatial
/// position, (positions, D).
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual torch::Tensor features(const ImageBuffer& img) = 0;
};

/// Fixed random projection of k x k patches (k = 1 by default) followed by
/// nothing else; deterministic for a seed.
class StubExtractor : public FeatureExtractor {
 public:
  explicit StubExtractor(std::int64_t dims = 8, std::int64_t patch = 1, std::uint64_t seed = 7);
  torch::Tensor features(const ImageBuffer& img) override;
  const torch::Tensor& projection() const { return weight_; }

 private:
  std::int64_t patch_;
  torch::Tensor weight_;  // (D, 3*k*k)
};

/// TorchScript module taking (1,3,H,W) in [-1,1] and returning (1,D,h,w).
class TorchScriptExtractor : public FeatureExtractor {
 public:
  explicit TorchScriptExtractor(const std::filesystem::path& path);
  ~TorchScriptExtractor() override;
  torch::Tensor features(const ImageBuffer& img) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

double sifid(const ImageBuffer& real, const ImageBuffer& fake, FeatureExtractor& extractor);

/// Mean over pixels and channels of the population standard deviation
/// across samples, divided by the population standard deviation of the
/// reference.
double diversity(const std::vector<ImageBuffer>& samples, const ImageBuffer& reference);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
MeanStd mean_std(const std::vector<double>& values);

struct MetricReport {
  std::int64_t samples = 0;
  MeanStd diversity;
  MeanStd sifid;
  std::optional<MeanStd> niqe;

  void write_csv(std::ostream& out) const;
  std::string to_json() const;
};

struct NiqeModel;

/// SIFID of every sample against `reference`, diversity of the set, NIQE
/// when a model is given.
MetricReport evaluate_samples(const std::vector<ImageBuffer>& samples,
                              const ImageBuffer& reference, FeatureExtractor& extractor,
                              const NiqeModel* niqe = nullptr);

/// Peak signal-to-noise ratio in dB for images in [-1,1] (peak-to-peak 2).
double psnr(const ImageBuffer& a, const ImageBuffer& b);

}  // namespace blendgan
