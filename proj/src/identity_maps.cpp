#include "blendgan/identity_maps.hpp"

#include "blendgan/errors.hpp"

#include <torch/torch.h>

#include <cmath>
#include <cstring>
#include <string>

namespace blendgan {
namespace {

constexpr double kSimplexTol = 1e-6;
constexpr std::uint16_t kRasterVersion = 1;

void check_size(Size2 size) {
  if (size.height < 1 || size.width < 1) throw InvalidInput("identity map size must be >= 1x1");
}

template <typename T>
void put(Bytes& out, T v) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T take(const Bytes& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw InvalidInput("truncated identity raster");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

IdentityMap IdentityMap::from_tensor(torch::Tensor khw) {
  if (!khw.defined() || khw.dim() != 3 || khw.size(0) < 1 || khw.size(1) < 1 ||
      khw.size(2) < 1) {
    throw ValidationError("identity map must be a non-empty (K,H,W) tensor");
  }
  auto w = khw.to(torch::kFloat32).contiguous();
  if (!torch::isfinite(w).all().item<bool>()) throw ValidationError("identity weights not finite");
  if ((w < 0).any().item<bool>()) throw ValidationError("identity weights must be >= 0");
  const double err = (w.sum(0) - 1.0).abs().max().item<double>();
  if (err > kSimplexTol) {
    throw ValidationError("identity weights must sum to 1 per pixel (max deviation " +
                          std::to_string(err) + ")");
  }
  return IdentityMap(w);
}

bool IdentityMap::is_categorical() const {
  return ((weights_ == 0) | (weights_ == 1)).all().item<bool>();
}

torch::Tensor IdentityMap::labels() const { return weights_.argmax(0); }

IdentityMap constant_id(std::int64_t k, std::int64_t num_identities, Size2 size) {
  check_size(size);
  if (num_identities < 1 || k < 0 || k >= num_identities) {
    throw InvalidInput("identity " + std::to_string(k) + " out of range for K=" +
                       std::to_string(num_identities));
  }
  auto w = torch::zeros({num_identities, size.height, size.width});
  w[k].fill_(1.0);
  return IdentityMap::from_tensor(w);
}

IdentityMap blend_constant(const std::vector<double>& weights, Size2 size) {
  check_size(size);
  if (weights.empty()) throw ValidationError("blend weights must not be empty");
  double total = 0.0;
  for (double v : weights) {
    if (!(v >= 0.0)) throw ValidationError("blend weights must be >= 0");
    total += v;
  }
  if (std::abs(total - 1.0) > kSimplexTol) {
    throw ValidationError("blend weights must sum to 1 (got " + std::to_string(total) + ")");
  }
  auto vec = torch::tensor(std::vector<double>(weights), torch::kFloat64).to(torch::kFloat32);
  auto w = vec.view({-1, 1, 1}).expand({vec.size(0), size.height, size.width}).contiguous();
  return IdentityMap::from_tensor(w);
}

IdentityMap mask_id(const std::vector<torch::Tensor>& masks) {
  if (masks.empty()) throw PartitionError("mask_id needs at least one mask");
  const auto h = masks.front().size(-2);
  const auto w = masks.front().size(-1);
  std::vector<torch::Tensor> planes;
  for (const auto& m : masks) {
    if (m.dim() != 2 || m.size(0) != h || m.size(1) != w) {
      throw PartitionError("masks must all be (H,W) with the same size");
    }
    planes.push_back(m.to(torch::kBool).to(torch::kFloat32));
  }
  auto stacked = torch::stack(planes);
  auto cover = stacked.sum(0);
  const auto overlapping = (cover > 1).sum().item<std::int64_t>();
  const auto uncovered = (cover < 1).sum().item<std::int64_t>();
  if (overlapping > 0 || uncovered > 0) {
    throw PartitionError("masks must partition the pixel grid: " + std::to_string(overlapping) +
                         " overlapping and " + std::to_string(uncovered) + " uncovered pixels");
  }
  return IdentityMap::from_tensor(stacked);
}

IdentityMap labels_id(const torch::Tensor& labels, std::int64_t num_identities) {
  if (labels.dim() != 2) throw PartitionError("label image must be (H,W)");
  auto l = labels.to(torch::kLong);
  if (num_identities < 1 || (l < 0).any().item<bool>() ||
      (l >= num_identities).any().item<bool>()) {
    throw PartitionError("labels must lie in [0, " + std::to_string(num_identities) + ")");
  }
  auto w = torch::one_hot(l, num_identities).permute({2, 0, 1}).to(torch::kFloat32);
  return IdentityMap::from_tensor(w);
}

IdentityMap ramp_id(Axis axis, double a, double b, Size2 size) {
  check_size(size);
  if (!(a >= 0.0 && b <= 1.0 && a < b)) {
    throw InvalidInput("ramp requires 0 <= a < b <= 1");
  }
  const std::int64_t n = axis == Axis::Horizontal ? size.width : size.height;
  auto u = (torch::arange(n, torch::kFloat64) + 0.5) / static_cast<double>(n);
  auto w0 = ((b - u) / (b - a)).clamp(0.0, 1.0).to(torch::kFloat32);
  auto w1 = 1.0 - w0;
  auto planes = torch::stack({w0, w1});
  if (axis == Axis::Horizontal) {
    planes = planes.view({2, 1, n}).expand({2, size.height, n});
  } else {
    planes = planes.view({2, n, 1}).expand({2, n, size.width});
  }
  return IdentityMap::from_tensor(planes.contiguous());
}

IdentityMap resample_id(const IdentityMap& map, Size2 target) {
  check_size(target);
  if (map.size() == target) return map;
  auto w = resample_tensor(map.tensor(), target, Kernel::Bilinear).clamp_min(0.0);
  w = w / w.sum(0, true);
  return IdentityMap::from_tensor(w);
}

IdentitySchedule::IdentitySchedule(IdentityMap map, int num_levels)
    : per_level_(static_cast<std::size_t>(num_levels), std::move(map)) {}

IdentitySchedule::IdentitySchedule(std::vector<IdentityMap> per_level)
    : per_level_(std::move(per_level)) {
  for (const auto& m : per_level_) {
    if (m.num_identities() != per_level_.front().num_identities()) {
      throw ValidationError("schedule levels disagree on the number of identities");
    }
  }
}

std::int64_t IdentitySchedule::num_identities() const {
  return per_level_.empty() ? 0 : per_level_.front().num_identities();
}

IdentityMap IdentitySchedule::at(int i, Size2 size) const { return resample_id(level(i), size); }

IdentitySchedule scale_schedule(const IdentityMap& coarse_map, const IdentityMap& fine_map,
                                int transition_level, const ScalePlan& plan) {
  if (transition_level < 0 || transition_level > plan.coarsest()) {
    throw InvalidInput("transition level " + std::to_string(transition_level) +
                       " outside 0.." + std::to_string(plan.coarsest()));
  }
  if (coarse_map.num_identities() != fine_map.num_identities()) {
    throw ValidationError("coarse and fine maps disagree on the number of identities");
  }
  std::vector<IdentityMap> levels;
  for (int i = 0; i < plan.num_levels(); ++i) {
    const auto& src = i >= transition_level ? coarse_map : fine_map;
    levels.push_back(resample_id(src, plan.size(i)));
  }
  return IdentitySchedule(std::move(levels));
}

void require_categorical(const IdentityMap& map) {
  if (!map.is_categorical()) {
    throw NonCategoricalError("a categorical (one-hot) identity map is required");
  }
}

Bytes encode_id_png(const IdentityMap& map) {
  require_categorical(map);
  if (map.num_identities() > 256) throw InvalidInput("indexed PNG holds at most 256 identities");
  auto labels = map.labels().to(torch::kUInt8).contiguous();
  IndexedImage img;
  img.height = map.height();
  img.width = map.width();
  img.palette_size = static_cast<int>(map.num_identities());
  const auto* p = labels.data_ptr<std::uint8_t>();
  img.indices.assign(p, p + labels.numel());
  return encode_indexed_png(img);
}

IdentityMap decode_id_png(const Bytes& bytes, std::int64_t num_identities) {
  auto img = decode_indexed_png(bytes);
  std::int64_t k = num_identities;
  if (k <= 0) {
    int top = 0;
    for (auto v : img.indices) top = std::max<int>(top, v + 1);
    k = std::max<std::int64_t>(img.palette_size, top);
  }
  auto labels = torch::from_blob(img.indices.data(), {img.height, img.width}, torch::kUInt8)
                    .to(torch::kLong);
  return labels_id(labels, k);
}

Bytes encode_id_raster(const IdentityMap& map) {
  Bytes out;
  out.insert(out.end(), {'B', 'G', 'I', 'D'});
  put<std::uint16_t>(out, kRasterVersion);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(map.num_identities()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(map.height()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(map.width()));
  auto t = map.tensor().contiguous();
  const auto* p = reinterpret_cast<const std::uint8_t*>(t.data_ptr<float>());
  out.insert(out.end(), p, p + t.numel() * sizeof(float));
  return out;
}

IdentityMap decode_id_raster(const Bytes& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "BGID", 4) != 0) {
    throw InvalidInput("not a BGID identity raster");
  }
  std::size_t pos = 4;
  const auto version = take<std::uint16_t>(bytes, pos);
  if (version != kRasterVersion) {
    throw VersionError("unsupported BGID version " + std::to_string(version));
  }
  const std::int64_t k = take<std::uint16_t>(bytes, pos);
  const std::int64_t h = take<std::uint32_t>(bytes, pos);
  const std::int64_t w = take<std::uint32_t>(bytes, pos);
  const std::size_t expected = 16 + static_cast<std::size_t>(k * h * w) * sizeof(float);
  if (bytes.size() != expected) throw InvalidInput("identity raster size does not match header");
  auto t = torch::empty({k, h, w}, torch::kFloat32);
  std::memcpy(t.data_ptr<float>(), bytes.data() + 16, expected - 16);
  return IdentityMap::from_tensor(t);
}

IdentityMap decode_id_map(const Bytes& bytes, std::int64_t num_identities) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), "BGID", 4) == 0) {
    auto map = decode_id_raster(bytes);
    if (num_identities > 0 && map.num_identities() != num_identities) {
      throw ValidationError("identity raster has K=" + std::to_string(map.num_identities()) +
                            ", model expects " + std::to_string(num_identities));
    }
    return map;
  }
  return decode_id_png(bytes, num_identities);
}

}  // namespace blendgan
