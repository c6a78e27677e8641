#include "blendgan/experiments.hpp"

#include "blendgan/errors.hpp"
#include "blendgan/identity_maps.hpp"
#include "blendgan/inference.hpp"
#include "blendgan/memory_profile.hpp"
#include "blendgan/training.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace blendgan {
namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
    i = j + 1;
  }
  return r;
}

std::vector<TrainingImage> as_training(const std::vector<ImageBuffer>& imgs) {
  std::vector<TrainingImage> out;
  for (std::size_t i = 0; i < imgs.size(); ++i) out.push_back({"image" + std::to_string(i), imgs[i]});
  return out;
}

MeanStd score_identity0(const ModelBundle& b, FeatureExtractor& extractor, int samples) {
  const auto id = constant_id(0, b.num_identities, b.plan.size(0));
  const auto& ref = b.images.front().image;
  std::vector<double> s;
  for (int i = 0; i < samples; ++i) {
    s.push_back(sifid(ref, sample(b, id, std::nullopt, static_cast<std::uint64_t>(i)), extractor));
  }
  return mean_std(s);
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidInput("spearman needs paired samples");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<ImageBuffer> panorama_crops(const ImageBuffer& panorama, int num_crops,
                                        double overlap) {
  if (num_crops < 2) throw InvalidInput("panorama experiment needs at least two crops");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw InvalidInput("overlap must lie in [0,1)");
  const auto side = panorama.height();
  const auto stride = std::max<std::int64_t>(1, std::llround(side * (1.0 - overlap)));
  const auto needed = (num_crops - 1) * stride + side;
  if (needed > panorama.width()) {
    throw InvalidInput("panorama of width " + std::to_string(panorama.width()) + " is too narrow: " +
                       std::to_string(num_crops) + " crops need " + std::to_string(needed));
  }
  std::vector<ImageBuffer> out;
  for (int i = 0; i < num_crops; ++i) {
    out.emplace_back(panorama.tensor().slice(2, i * stride, i * stride + side).clone());
  }
  return out;
}

std::vector<PanoramaPoint> panorama_experiment(const ImageBuffer& panorama, int num_crops,
                                               double overlap, const TrainConfig& config,
                                               FeatureExtractor& extractor, int samples) {
  const auto crops = panorama_crops(panorama, num_crops, overlap);
  std::vector<PanoramaPoint> curve;
  for (int i = 1; i < num_crops; ++i) {
    auto b = train_all(as_training({crops[0], crops[i]}), config);
    curve.push_back({i, score_identity0(b, extractor, samples)});
  }
  return curve;
}

std::vector<CapacityRow> capacity_experiment(const std::vector<ImageBuffer>& images,
                                             const std::vector<std::int64_t>& ks,
                                             const std::vector<std::int64_t>& channel_variants,
                                             const TrainConfig& config,
                                             FeatureExtractor& extractor, int samples) {
  if (channel_variants.size() < 2) throw InvalidInput("capacity experiment needs two variants");
  std::vector<CapacityRow> rows;
  for (auto k : ks) {
    if (k < 1 || k > static_cast<std::int64_t>(images.size())) {
      throw InvalidInput("K=" + std::to_string(k) + " exceeds the image pool");
    }
    std::vector<ImageBuffer> subset(images.begin(), images.begin() + k);
    for (auto c : channel_variants) {
      auto cfg = config;
      cfg.channel_base = c;
      cfg.channel_cap = std::max(cfg.channel_cap, c);
      auto b = train_all(as_training(subset), cfg);
      rows.push_back({k, c, score_identity0(b, extractor, samples)});
    }
  }
  return rows;
}

std::vector<CroppingRow> cropping_experiment(const ImageBuffer& image, const TrainConfig& config,
                                             FeatureExtractor& extractor, int samples,
                                             const NiqeModel* niqe) {
  std::vector<CroppingRow> rows;
  for (const bool cropped : {false, true}) {
    auto cfg = config;
    if (!cropped) cfg.crop_window = 0;
    else if (cfg.crop_window == 0) cfg.crop_window = -1;
    auto b = train_all(as_training({image}), cfg);
    const auto id = constant_id(0, 1, b.plan.size(0));
    std::vector<ImageBuffer> outs;
    for (int i = 0; i < samples; ++i) outs.push_back(sample(b, id, std::nullopt, i));
    rows.push_back({cropped ? "cropped" : "vanilla",
                    evaluate_samples(outs, b.images.front().image, extractor, niqe)});
  }
  return rows;
}

std::int64_t training_step_memory(const ImageBuffer& image, const TrainConfig& config) {
  auto b = make_bundle({{"memory", image}}, config);
  const int coarsest = b.plan.coarsest();
  // amplitudes are irrelevant here; skip the reconstruction passes
  for (int l = coarsest; l >= 0; --l) {
    b.noise.sigma[l] = config.sigma_base;
    b.noise.zrec[l] = draw_reconstruction_noise(b.noise.seed, l, coarsest, b.plan.size(l),
                                                config.sigma_base, b.noise.c_rec);
  }
  apply_threading(config);
  ScaleTrainer trainer(b, 0);
  trainer.step(0);
  return memory_profile([&] { trainer.step(1); });
}

std::vector<MemoryPoint> memory_curve(const ImageBuffer& image,
                                      const std::vector<std::int64_t>& sides,
                                      const std::vector<std::int64_t>& crop_windows,
                                      const TrainConfig& config) {
  std::vector<MemoryPoint> out;
  for (auto crop : crop_windows) {
    for (auto side : sides) {
      auto cfg = config;
      cfg.crop_window = crop;
      cfg.max_dim = std::max(cfg.max_dim, side);
      const auto resized = resample(image, {side, side});
      out.push_back({side, crop, training_step_memory(resized, cfg)});
    }
  }
  return out;
}

void write_panorama_csv(std::ostream& out, const std::vector<PanoramaPoint>& curve) {
  out << "crop_index,sifid_mean,sifid_std\n";
  for (const auto& p : curve) out << p.crop_index << ',' << p.sifid.mean << ',' << p.sifid.std << '\n';
}

void write_capacity_csv(std::ostream& out, const std::vector<CapacityRow>& rows) {
  out << "num_images,channels,sifid_mean,sifid_std\n";
  for (const auto& r : rows) {
    out << r.num_images << ',' << r.channels << ',' << r.sifid.mean << ',' << r.sifid.std << '\n';
  }
}

void write_cropping_csv(std::ostream& out, const std::vector<CroppingRow>& rows) {
  out << "variant,diversity,sifid_mean,sifid_std,niqe_mean,niqe_std,samples\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << r.report.diversity.mean << ',' << r.report.sifid.mean << ','
        << r.report.sifid.std << ',';
    if (r.report.niqe) out << r.report.niqe->mean << ',' << r.report.niqe->std;
    else out << ',';
    out << ',' << r.report.samples << '\n';
  }
}

void write_memory_csv(std::ostream& out, const std::vector<MemoryPoint>& points) {
  out << "side,crop_window,peak_bytes\n";
  for (const auto& p : points) out << p.side << ',' << p.crop_window << ',' << p.peak_bytes << '\n';
}

}  // namespace blendgan
