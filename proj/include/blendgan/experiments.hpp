#pragma once

#include "blendgan/metrics.hpp"
#include "blendgan/model.hpp"

#include <iosfwd>
#include <vector>

namespace blendgan {

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct PanoramaPoint {
  int crop_index = 0;
  MeanStd sifid;
};

/// Square crops (side = panorama height) laid left to right with the given
/// fractional overlap between neighbours.
std::vector<ImageBuffer> panorama_crops(const ImageBuffer& panorama, int num_crops,
                                        double overlap);

/// One two-identity model per pair (crop 0, crop i), i = 1..num_crops-1;
/// mean SIFID of `samples` id-0 samples against crop 0.
std::vector<PanoramaPoint> panorama_experiment(const ImageBuffer& panorama, int num_crops,
                                               double overlap, const TrainConfig& config,
                                               FeatureExtractor& extractor, int samples = 50);

struct CapacityRow {
  std::int64_t num_images = 0;
  std::int64_t channels = 0;
  MeanStd sifid;
};

/// For every K in `ks` and channel base in `channel_variants`, trains on
/// the first K images and scores identity-0 samples against image 0.
std::vector<CapacityRow> capacity_experiment(const std::vector<ImageBuffer>& images,
                                             const std::vector<std::int64_t>& ks,
                                             const std::vector<std::int64_t>& channel_variants,
                                             const TrainConfig& config,
                                             FeatureExtractor& extractor, int samples = 50);

struct CroppingRow {
  std::string variant;  ///< "vanilla" or "cropped"
  MetricReport report;
};

/// Single-image models trained without and with cropping, scored on
/// `samples` samples each.
std::vector<CroppingRow> cropping_experiment(const ImageBuffer& image, const TrainConfig& config,
                                             FeatureExtractor& extractor, int samples = 50,
                                             const NiqeModel* niqe = nullptr);

struct MemoryPoint {
  std::int64_t side = 0;
  std::int64_t crop_window = 0;  ///< 0 = uncropped
  std::int64_t peak_bytes = 0;
};

/// Peak bytes of one finest-level training iteration on `image`, measured
/// after a warm-up iteration. Coarser levels keep their initial weights;
/// only the allocation profile is of interest.
std::int64_t training_step_memory(const ImageBuffer& image, const TrainConfig& config);

/// `image` resized to side x side for every side and crop window; the
/// working size limit is lifted so the finest level has the requested side.
std::vector<MemoryPoint> memory_curve(const ImageBuffer& image,
                                      const std::vector<std::int64_t>& sides,
                                      const std::vector<std::int64_t>& crop_windows,
                                      const TrainConfig& config);

void write_panorama_csv(std::ostream& out, const std::vector<PanoramaPoint>& curve);
void write_capacity_csv(std::ostream& out, const std::vector<CapacityRow>& rows);
void write_cropping_csv(std::ostream& out, const std::vector<CroppingRow>& rows);
void write_memory_csv(std::ostream& out, const std::vector<MemoryPoint>& points);

}  // namespace blendgan
