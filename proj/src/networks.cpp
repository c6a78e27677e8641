#include "blendgan/networks.hpp"

#include "blendgan/errors.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <string>

namespace blendgan {
namespace {

namespace F = torch::nn::functional;

torch::nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).padding(0).bias(true));
}

torch::Tensor lrelu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
}

}  // namespace

std::int64_t channels_for_scale(int scales_from_coarsest, std::int64_t base, std::int64_t cap) {
  if (scales_from_coarsest < 0) throw InvalidInput("scale index must be >= 0");
  const int doublings = std::min(scales_from_coarsest / 4, 30);
  std::int64_t c = base;
  for (int i = 0; i < doublings && c < cap; ++i) c *= 2;
  return std::min(cap, c);
}

torch::Tensor centre_crop(const torch::Tensor& t, std::int64_t margin) {
  if (margin == 0) return t;
  const auto h = t.size(-2);
  const auto w = t.size(-1);
  return t.slice(-2, margin, h - margin).slice(-1, margin, w - margin);
}

torch::Tensor centre_crop_to(const torch::Tensor& t, std::int64_t h, std::int64_t w) {
  const auto dh = t.size(-2) - h;
  const auto dw = t.size(-1) - w;
  if (dh < 0 || dw < 0 || dh % 2 != 0 || dw % 2 != 0) {
    throw GeometryError("centre crop needs an even, non-negative size difference");
  }
  return t.slice(-2, dh / 2, dh / 2 + h).slice(-1, dw / 2, dw / 2 + w);
}

// TrackedNorm ---------------------------------------------------------------

TrackedNormImpl::TrackedNormImpl(std::int64_t channels, std::int64_t slots, double momentum,
                                 double eps)
    : slots_(slots), momentum_(momentum), eps_(eps) {
  running_mean_ = register_buffer("running_mean", torch::zeros({slots, channels}));
  running_var_ = register_buffer("running_var", torch::ones({slots, channels}));
  seen_ = register_buffer("seen", torch::zeros({slots}));
}

std::tuple<torch::Tensor, torch::Tensor, torch::Tensor> TrackedNormImpl::batch_stats(
    const torch::Tensor& x, const torch::Tensor& slot_weights) const {
  auto mean = x.mean({2, 3});                                   // (N,C)
  auto sq = (x * x).mean({2, 3});                               // (N,C)
  auto w = slot_weights.defined() ? slot_weights.detach().mean({2, 3})  // (N,S)
                                  : torch::ones({x.size(0), 1}, x.options());
  auto mass = w.sum(0);                                         // (S)
  auto denom = mass.clamp_min(1e-12).unsqueeze(1);
  auto batch_mean = w.t().matmul(mean) / denom;
  auto batch_var = (w.t().matmul(sq) / denom - batch_mean * batch_mean).clamp_min(0.0);
  return {batch_mean, batch_var, mass};
}

void TrackedNormImpl::update(const torch::Tensor& mean, const torch::Tensor& var,
                             const torch::Tensor& mass) {
  torch::NoGradGuard no_grad;
  auto present = (mass > 1e-12).to(mean.dtype()).unsqueeze(1);  // (S,1)
  auto fresh = present * (1.0 - seen_.unsqueeze(1));
  auto blend = present * seen_.unsqueeze(1) * momentum_;
  running_mean_.mul_(1.0 - blend - fresh).add_((blend + fresh) * mean.detach());
  running_var_.mul_(1.0 - blend - fresh).add_((blend + fresh) * var.detach());
  seen_.copy_(torch::maximum(seen_, present.squeeze(1)));
}

torch::Tensor TrackedNormImpl::forward(const torch::Tensor& x, const torch::Tensor& slot_weights,
                                       NormMode mode) {
  if (mode == NormMode::Instance) {
    auto mean = x.mean({2, 3}, true);
    auto var = x.var({2, 3}, false, true);
    return (x - mean) / torch::sqrt(var + eps_);
  }
  if (slot_weights.defined() && slot_weights.size(1) != slots_) {
    throw InvalidInput("normalization expects " + std::to_string(slots_) + " slot planes");
  }
  torch::Tensor stat_mean = running_mean_;
  torch::Tensor stat_var = running_var_;
  if (mode == NormMode::Batch || mode == NormMode::Update) {
    auto [m, v, mass] = batch_stats(x, slot_weights);
    if (mode == NormMode::Update) update(m, v, mass);
    // slots absent from the batch keep their running values
    auto present = (mass > 1e-12).unsqueeze(1);
    stat_mean = torch::where(present, m, running_mean_);
    stat_var = torch::where(present, v, running_var_);
  }
  torch::Tensor mean;
  torch::Tensor var;
  if (!slot_weights.defined() || slots_ == 1) {
    mean = stat_mean[0].view({1, -1, 1, 1});
    var = stat_var[0].view({1, -1, 1, 1});
  } else {
    mean = torch::einsum("nshw,sc->nchw", {slot_weights, stat_mean});
    var = torch::einsum("nshw,sc->nchw", {slot_weights, stat_var});
  }
  return (x - mean) / torch::sqrt(var + eps_);
}

// SPADE ---------------------------------------------------------------------

SpadeUnitImpl::SpadeUnitImpl(std::int64_t channels, std::int64_t num_identities,
                             std::int64_t hidden) {
  shared = register_module("shared", conv(num_identities, hidden, 1));
  gamma = register_module("gamma", conv(hidden, channels, 1));
  beta = register_module("beta", conv(hidden, channels, 1));
  norm = register_module("norm", TrackedNorm(channels, num_identities));
}

std::pair<torch::Tensor, torch::Tensor> SpadeUnitImpl::modulation(const torch::Tensor& id) {
  auto h = torch::relu(shared->forward(id));
  return {gamma->forward(h), beta->forward(h)};
}

torch::Tensor SpadeUnitImpl::forward(const torch::Tensor& x, const torch::Tensor& id,
                                     NormMode mode) {
  if (id.size(0) != x.size(0) || id.size(2) != x.size(2) || id.size(3) != x.size(3)) {
    throw GeometryError("SPADE identity map does not match the feature map shape");
  }
  auto [g, b] = modulation(id);
  return g * norm->forward(x, id, mode) + b;
}

torch::Tensor spade_modulate(SpadeUnitImpl& unit, const torch::Tensor& features,
                             const IdentityMap& id_map, NormMode mode) {
  if (features.dim() != 3 || features.size(1) != id_map.height() ||
      features.size(2) != id_map.width()) {
    throw GeometryError("spade_modulate: features and identity map sizes differ");
  }
  auto id = id_map.tensor().to(features.dtype()).unsqueeze(0);
  return unit.forward(features.unsqueeze(0), id, mode).squeeze(0);
}

// Blocks --------------------------------------------------------------------

SBasicBlockImpl::SBasicBlockImpl(std::int64_t channels, std::int64_t num_identities) {
  conv = register_module("conv", blendgan::conv(channels, channels, 3));
  spade = register_module("spade", SpadeUnit(channels, num_identities, channels));
}

torch::Tensor SBasicBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& id,
                                       NormMode mode) {
  auto y = conv->forward(x);
  return lrelu(spade->forward(y, centre_crop_to(id, y.size(2), y.size(3)), mode));
}

BasicBlockImpl::BasicBlockImpl(std::int64_t channels) {
  conv = register_module("conv", blendgan::conv(channels, channels, 3));
  norm = register_module("norm", TrackedNorm(channels, 1));
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x, NormMode mode) {
  return lrelu(norm->forward(conv->forward(x), torch::Tensor(), mode));
}

// Generator -----------------------------------------------------------------

GeneratorScaleImpl::GeneratorScaleImpl(std::int64_t channels, std::int64_t num_identities)
    : channels_(channels), num_identities_(num_identities) {
  head = register_module("head", conv(3, channels, 3));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < 3; ++i) blocks->push_back(SBasicBlock(channels, num_identities));
  tail = register_module("tail", conv(channels, 3, 3));
  init_weights(*this);
}

torch::Tensor GeneratorScaleImpl::forward(const torch::Tensor& z, const torch::Tensor& prev_up,
                                          const torch::Tensor& id, NormMode mode) {
  if (z.sizes() != prev_up.sizes()) throw GeometryError("z and prev_up must share a shape");
  if (z.size(1) != 3) throw InvalidInput("generator noise must have 3 channels");
  if (id.size(0) != z.size(0) || id.size(1) != num_identities_ || id.size(2) != z.size(2) ||
      id.size(3) != z.size(3)) {
    throw GeometryError("identity tensor must be (N,K,H,W) matching the input");
  }
  if (z.size(2) < kScaleReceptiveField || z.size(3) < kScaleReceptiveField) {
    throw TooSmallInput("generator input " + std::to_string(z.size(2)) + "x" +
                        std::to_string(z.size(3)) + " is smaller than the receptive field " +
                        std::to_string(kScaleReceptiveField));
  }
  auto x = head->forward(z + prev_up);
  for (const auto& block : *blocks) x = block->as<SBasicBlockImpl>()->forward(x, id, mode);
  x = tail->forward(x);
  return torch::tanh(x + centre_crop(prev_up, kScaleHalo));
}

torch::Tensor GeneratorScaleImpl::forward_full(const torch::Tensor& z,
                                               const torch::Tensor& prev_up,
                                               const torch::Tensor& id, NormMode mode) {
  const std::vector<std::int64_t> pad(4, kScaleHalo);
  auto zp = F::pad(z, F::PadFuncOptions(pad));
  auto pp = F::pad(prev_up, F::PadFuncOptions(pad));
  auto ip = F::pad(id, F::PadFuncOptions(pad).mode(torch::kReplicate));
  return forward(zp, pp, ip, mode);
}

void GeneratorScaleImpl::set_norm_momentum(double m) {
  for (const auto& block : *blocks) block->as<SBasicBlockImpl>()->spade->norm->set_momentum(m);
}

// Discriminator -------------------------------------------------------------

DiscriminatorScaleImpl::DiscriminatorScaleImpl(std::int64_t channels) : channels_(channels) {
  head = register_module("head", conv(3, channels, 3));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < 3; ++i) blocks->push_back(BasicBlock(channels));
  tail = register_module("tail", conv(channels, 1, 3));
  init_weights(*this);
}

torch::Tensor DiscriminatorScaleImpl::forward(const torch::Tensor& x, NormMode mode) {
  if (x.size(2) < kScaleReceptiveField || x.size(3) < kScaleReceptiveField) {
    throw TooSmallInput("discriminator input smaller than the receptive field");
  }
  auto y = head->forward(x);
  for (const auto& block : *blocks) y = block->as<BasicBlockImpl>()->forward(y, mode);
  return tail->forward(y);
}

void DiscriminatorScaleImpl::set_norm_momentum(double m) {
  for (const auto& block : *blocks) block->as<BasicBlockImpl>()->norm->set_momentum(m);
}

// Utilities -----------------------------------------------------------------

void init_weights(torch::nn::Module& module, double stddev, std::optional<at::Generator> gen) {
  torch::NoGradGuard no_grad;
  // modules(true) needs shared_from_this, which stack-held modules lack
  std::vector<torch::nn::Module*> all{&module};
  for (auto& m : module.modules(/*include_self=*/false)) all.push_back(m.get());
  for (auto* m : all) {
    if (auto* c = m->as<torch::nn::Conv2dImpl>()) {
      c->weight.normal_(0.0, stddev, gen);
      if (c->bias.defined()) c->bias.zero_();
    }
  }
  for (auto* m : all) {
    if (auto* s = m->as<SpadeUnitImpl>()) {
      s->gamma->weight.zero_();
      s->gamma->bias.fill_(1.0);
      s->beta->weight.zero_();
      s->beta->bias.zero_();
    }
  }
}

void copy_state(const torch::nn::Module& from, torch::nn::Module& to) {
  torch::NoGradGuard no_grad;
  auto src_p = from.named_parameters(true);
  for (auto& item : to.named_parameters(true)) item.value().copy_(src_p[item.key()]);
  auto src_b = from.named_buffers(true);
  for (auto& item : to.named_buffers(true)) item.value().copy_(src_b[item.key()]);
}

}  // namespace blendgan
