#include "blendgan/inference.hpp"

#include "blendgan/errors.hpp"
#include "blendgan/region_generation.hpp"
#include "blendgan/rng.hpp"

#include <torch/torch.h>

#include <cmath>

namespace blendgan {
namespace {

namespace F = torch::nn::functional;

void require_trained(const ModelBundle& b) {
  for (int l = 0; l < b.num_levels(); ++l) {
    if (!b.level_trained(l)) throw InvalidInput("model is not fully trained");
  }
}

void check_identity(const ModelBundle& b, std::int64_t k) {
  if (k < 0 || k >= b.num_identities) {
    throw InvalidInput("identity " + std::to_string(k) + " out of range [0," +
                       std::to_string(b.num_identities) + ")");
  }
}

/// Hard (nearest) resize of an (H,W) mask to `size`, as {0,1} float.
torch::Tensor resize_mask(const torch::Tensor& mask, Size2 size) {
  auto m = (mask.to(torch::kFloat32) != 0).to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
  if (m.size(2) != size.height || m.size(3) != size.width) {
    m = F::interpolate(m, F::InterpolateFuncOptions()
                              .size(std::vector<std::int64_t>{size.height, size.width})
                              .mode(torch::kNearest));
  }
  return m.squeeze(0).squeeze(0);
}

}  // namespace

std::vector<Size2> output_sizes(const ScalePlan& plan, Size2 finest) {
  if (finest.height < 1 || finest.width < 1) throw InvalidInput("output size must be positive");
  if (finest == plan.size(0)) return plan.sizes;
  std::vector<Size2> out;
  const double fh = static_cast<double>(finest.height) / plan.size(0).height;
  const double fw = static_cast<double>(finest.width) / plan.size(0).width;
  for (const auto& s : plan.sizes) {
    out.push_back({std::max<std::int64_t>(1, std::llround(s.height * fh)),
                   std::max<std::int64_t>(1, std::llround(s.width * fw))});
  }
  out.front() = finest;
  return out;
}

torch::Tensor request_noise(const ModelBundle& bundle, const GenerationRequest& req, int level,
                            const std::vector<Size2>& sizes) {
  const Size2 s = sizes.at(level);
  auto gen = make_generator(req.seed, "noise", {level});
  auto z = torch::randn({1, 3, s.height, s.width}, gen, torch::kFloat32) *
           bundle.noise.sigma.at(level);
  const auto& zrec = bundle.noise.zrec.at(level);
  for (const auto& p : req.reconstruction) {
    if (!zrec.defined()) throw InvalidInput("reconstruction noise missing");
    const Size2 plan_s = bundle.plan.size(level);
    const auto top = std::llround(p.row_frac * static_cast<double>(s.height - plan_s.height));
    const auto left = std::llround(p.col_frac * static_cast<double>(s.width - plan_s.width));
    // z^rec laid over the output grid, plus where it is defined
    auto placed = extract_region(zrec, -top, -left, s.height, s.width, PadMode::Zeros);
    auto cover = extract_region(torch::ones({1, 1, plan_s.height, plan_s.width}), -top, -left,
                                s.height, s.width, PadMode::Zeros);
    if (p.mask.defined()) cover = cover * resize_mask(p.mask, s);
    z = torch::where(cover > 0.5, placed, z);
  }
  return z;
}

ImageBuffer generate(const ModelBundle& bundle, const GenerationRequest& req) {
  require_trained(bundle);
  const int levels = bundle.num_levels();
  if (req.schedule.num_levels() != levels) {
    throw InvalidInput("identity schedule needs one map per level (" + std::to_string(levels) +
                       ")");
  }
  if (req.schedule.num_identities() != bundle.num_identities) {
    throw ValidationError("identity map has " + std::to_string(req.schedule.num_identities()) +
                          " channels, model has " + std::to_string(bundle.num_identities));
  }
  const int start = req.start_level < 0 ? bundle.plan.coarsest() : req.start_level;
  if (start > bundle.plan.coarsest()) throw InvalidInput("start level outside the pyramid");
  if (start < bundle.plan.coarsest() && !req.injected.defined()) {
    throw InvalidInput("starting below the coarsest level needs an injected image");
  }
  const auto sizes = output_sizes(bundle.plan, req.size.value_or(bundle.plan.size(0)));
  const Size2 s0 = sizes.at(start);
  if (std::min(s0.height, s0.width) < kScaleReceptiveField) {
    throw TooSmallInput("requested size gives " + std::to_string(s0.height) + "x" +
                        std::to_string(s0.width) + " at level " + std::to_string(start) +
                        ", below the receptive field " + std::to_string(kScaleReceptiveField));
  }

  std::vector<torch::Tensor> noise(levels), ids(levels);
  for (int l = start; l >= 0; --l) {
    noise[l] = request_noise(bundle, req, l, sizes);
    ids[l] = req.schedule.at(l, sizes[l]).tensor().unsqueeze(0);
  }
  PyramidSources src;
  src.sizes = sizes;
  src.batch = 1;
  src.start_level = start;
  src.noise = [&](int l, const Region& r) {
    return extract_region(noise.at(l), r.top, r.left, r.height, r.width, PadMode::Zeros);
  };
  src.identity = [&](int l, const Region& r) {
    return extract_region(ids.at(l), r.top, r.left, r.height, r.width, PadMode::Replicate);
  };
  torch::Tensor injected;
  if (req.injected.defined()) {
    if (req.injected.dim() != 3 || req.injected.size(0) != 3) {
      throw InvalidInput("injected image must be (3,h,w)");
    }
    injected = resample(ImageBuffer(req.injected), sizes.at(start)).tensor().unsqueeze(0);
    src.start_prev = [&](int, const Region& r) {
      return extract_region(injected, r.top, r.left, r.height, r.width, PadMode::Zeros);
    };
  }
  RegionGenerator rg(bundle, src);
  return ImageBuffer(rg.finest().squeeze(0));
}

ImageBuffer sample(const ModelBundle& bundle, const IdentityMap& id_map,
                   std::optional<Size2> size, std::uint64_t seed) {
  GenerationRequest req;
  req.schedule = IdentitySchedule(id_map, bundle.num_levels());
  req.size = size;
  req.seed = seed;
  return generate(bundle, req);
}

ImageBuffer reconstruct(const ModelBundle& bundle, std::int64_t k) {
  check_identity(bundle, k);
  GenerationRequest req;
  req.schedule = IdentitySchedule(constant_id(k, bundle.num_identities, bundle.plan.size(0)),
                                  bundle.num_levels());
  req.reconstruction.push_back({});
  return generate(bundle, req);
}

IdentityMap meld_id_map(const std::vector<std::int64_t>& anchors, std::int64_t num_identities,
                        Size2 size, double f) {
  const auto n = static_cast<std::int64_t>(anchors.size());
  if (n < 1) throw InvalidInput("meld needs at least one anchor");
  if (!(f >= 0.0) || (n > 1 && (n - 1) * f > 1.0)) {
    throw InvalidInput("transition fraction must lie in [0, 1/(anchors-1)]");
  }
  for (auto k : anchors) {
    if (k < 0 || k >= num_identities) throw InvalidInput("meld anchor out of range");
  }
  const double band = n > 1 ? (1.0 - (n - 1) * f) / n : 1.0;
  auto w = torch::zeros({num_identities, size.height, size.width}, torch::kFloat64);
  for (std::int64_t x = 0; x < size.width; ++x) {
    const double u = (x + 0.5) / size.width;
    std::int64_t i = 0;
    double t = 0.0;  // weight moving from anchor i to anchor i+1
    for (; i < n; ++i) {
      const double end = i * (band + f) + band;
      if (u < end || i == n - 1) break;
      if (u < end + f) {
        t = (u - end) / f;
        break;
      }
    }
    w[anchors[i]].select(1, x) += 1.0 - t;
    if (t > 0.0) w[anchors[i + 1]].select(1, x) += t;
  }
  return IdentityMap::from_tensor(w.to(torch::kFloat32));
}

MeldResult meld(const ModelBundle& bundle, const std::vector<std::int64_t>& anchors,
                std::int64_t out_width, double transition_frac, std::uint64_t seed) {
  if (anchors.size() < 2 && transition_frac != 0.0) {
    throw InvalidInput("meld needs at least two anchors");
  }
  const Size2 base = bundle.plan.size(0);
  if (out_width < base.width) {
    throw InvalidInput("meld output width must be at least the training width " +
                       std::to_string(base.width));
  }
  const Size2 size{base.height, out_width};
  MeldResult res;
  res.id_map = meld_id_map(anchors, bundle.num_identities, size, transition_frac);

  const auto n = static_cast<std::int64_t>(anchors.size());
  const double band = n > 1 ? (1.0 - (n - 1) * transition_frac) / n : 1.0;
  GenerationRequest req;
  req.schedule = IdentitySchedule(res.id_map, bundle.num_levels());
  req.size = size;
  req.seed = seed;
  for (std::int64_t i = 0; i < n; ++i) {
    const double lo = i * (band + transition_frac);
    const double hi = lo + band;
    const auto first = static_cast<std::int64_t>(std::ceil(lo * out_width - 0.5));
    const auto last = static_cast<std::int64_t>(std::ceil(hi * out_width - 0.5));
    res.anchor_columns.emplace_back(std::max<std::int64_t>(0, first),
                                    std::min(out_width, last));
    auto mask = torch::zeros({size.height, size.width});
    mask.slice(1, res.anchor_columns.back().first, res.anchor_columns.back().second).fill_(1.0);
    RecPlacement p;
    p.col_frac = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    p.mask = mask;
    req.reconstruction.push_back(p);
  }
  res.image = generate(bundle, req);
  return res;
}

std::vector<ImageBuffer> morph(const ModelBundle& bundle,
                               const std::vector<std::vector<double>>& weights, NoiseMode noise,
                               std::uint64_t seed) {
  std::vector<ImageBuffer> frames;
  for (const auto& w : weights) {
    if (static_cast<std::int64_t>(w.size()) != bundle.num_identities) {
      throw ValidationError("morph weights need " + std::to_string(bundle.num_identities) +
                            " entries");
    }
    GenerationRequest req;
    req.schedule =
        IdentitySchedule(blend_constant(w, bundle.plan.size(0)), bundle.num_levels());
    req.seed = seed;
    if (noise == NoiseMode::Reconstruction) req.reconstruction.push_back({});
    frames.push_back(generate(bundle, req));
  }
  return frames;
}

ImageBuffer fuse(const ModelBundle& bundle, std::int64_t structure_k, std::int64_t texture_k,
                 int transition_level, std::uint64_t seed, NoiseMode noise) {
  check_identity(bundle, structure_k);
  check_identity(bundle, texture_k);
  const Size2 s = bundle.plan.size(0);
  GenerationRequest req;
  req.schedule = scale_schedule(constant_id(structure_k, bundle.num_identities, s),
                                constant_id(texture_k, bundle.num_identities, s),
                                transition_level, bundle.plan);
  req.seed = seed;
  if (noise == NoiseMode::Reconstruction) req.reconstruction.push_back({});
  return generate(bundle, req);
}

ImageBuffer spatial_sample(const ModelBundle& bundle, const IdentityMap& mask_map,
                           const torch::Tensor& faithful, std::uint64_t seed) {
  require_categorical(mask_map);
  GenerationRequest req;
  req.schedule = IdentitySchedule(mask_map, bundle.num_levels());
  req.size = mask_map.size();
  req.seed = seed;
  if (faithful.defined()) {
    if (faithful.dim() != 2 || faithful.size(0) != mask_map.height() ||
        faithful.size(1) != mask_map.width()) {
      throw ValidationError("faithful mask must match the identity mask size");
    }
    RecPlacement p;
    p.mask = faithful;
    req.reconstruction.push_back(p);
  }
  return generate(bundle, req);
}

int default_inject_level(const ScalePlan& plan) { return std::max(0, plan.coarsest() - 1); }

ImageBuffer edit(const ModelBundle& bundle, const ImageBuffer& edited, int inject_level,
                 const IdentityMap& id_map, std::uint64_t seed) {
  if (inject_level < 0 || inject_level > bundle.plan.coarsest()) {
    throw InvalidInput("inject level " + std::to_string(inject_level) + " outside 0.." +
                       std::to_string(bundle.plan.coarsest()));
  }
  if (edited.channels() != 3) throw InvalidInput("edited image must be RGB");
  GenerationRequest req;
  req.schedule = IdentitySchedule(id_map, bundle.num_levels());
  req.seed = seed;
  req.start_level = inject_level;
  req.injected = edited.tensor();
  req.reconstruction.push_back({});
  return generate(bundle, req);
}

}  // namespace blendgan
