#include "blendgan/errors.hpp"
#include "blendgan/identity_maps.hpp"
#include "blendgan/networks.hpp"
#include "blendgan/rng.hpp"

#include "doctest.h"
#include <torch/torch.h>

#include <random>

using namespace blendgan;
namespace F = torch::nn::functional;

namespace {

// receptive field by walking the stack: each 3x3 stride-1 conv adds 2
std::int64_t rf_recursion(int convs) {
  std::int64_t rf = 1;
  for (int i = 0; i < convs; ++i) rf += (3 - 1) * 1;
  return rf;
}

void randomize(torch::nn::Module& m, std::uint64_t seed, double stddev = 0.5) {
  torch::NoGradGuard no_grad;
  auto gen = make_generator(seed, "test-randomize");
  for (auto& p : m.parameters()) p.copy_(torch::randn(p.sizes(), gen, p.scalar_type()) * stddev);
}

}  // namespace

TEST_CASE("channel schedule") {
  CHECK(channels_for_scale(0) == 32);
  CHECK(channels_for_scale(4) == 64);
  CHECK(channels_for_scale(20) == 512);
  for (int i = 0; i <= 24; ++i) {
    std::int64_t expect = 32;
    for (int j = 0; j < i / 4; ++j) expect *= 2;
    CHECK(channels_for_scale(i) == std::min<std::int64_t>(512, expect));
  }
  CHECK(channels_for_scale(7, 16, 24) == 24);
}

TEST_CASE("receptive field") {
  CHECK(receptive_field(5) == rf_recursion(5));
  CHECK(kScaleReceptiveField == 11);
  CHECK(kScaleHalo == 5);
  CHECK(receptive_field(1) == 3);
  CHECK(halo_for(receptive_field(1)) == 1);
  CHECK(receptive_field(0) == 1);
  CHECK(halo_for(receptive_field(0)) == 0);
}

TEST_CASE("shrinkage for random sizes") {
  GeneratorScale g(8, 2);
  DiscriminatorScale d(8);
  std::mt19937 rng(3);
  std::uniform_int_distribution<std::int64_t> side(11, 40);
  torch::NoGradGuard no_grad;
  for (int t = 0; t < 10; ++t) {
    const std::int64_t h = side(rng), w = side(rng);
    auto z = torch::randn({1, 3, h, w});
    auto id = constant_id(t % 2, 2, {h, w}).tensor().unsqueeze(0);
    auto y = g->forward(z, torch::zeros_like(z), id);
    CHECK(y.size(2) == h - (kScaleReceptiveField - 1));
    CHECK(y.size(3) == w - (kScaleReceptiveField - 1));
    auto s = d->forward(z);
    CHECK(s.size(1) == 1);
    CHECK(s.size(2) == h - (kScaleReceptiveField - 1));
    CHECK(s.size(3) == w - (kScaleReceptiveField - 1));
    CHECK(g->forward_full(z, torch::zeros_like(z), id).sizes() == z.sizes());
  }
  auto big = torch::randn({1, 3, 138, 138});
  CHECK(d->forward(big).size(2) == 128);
  CHECK(d->forward(torch::randn({1, 3, 11, 11})).numel() == 1);
  auto small = torch::randn({1, 3, 10, 20});
  CHECK_THROWS_AS(g->forward(small, small, constant_id(0, 2, {10, 20}).tensor().unsqueeze(0)),
                  TooSmallInput);
  CHECK_THROWS_AS(d->forward(small), TooSmallInput);
}

TEST_CASE("generator output stays in [-1,1]") {
  GeneratorScale g(8, 2);
  randomize(*g, 11, 2.0);
  torch::NoGradGuard no_grad;
  auto z = torch::randn({2, 3, 24, 24}) * 50;
  auto id = blend_constant({0.3, 0.7}, {24, 24}).tensor().unsqueeze(0).expand({2, 2, 24, 24});
  auto y = g->forward(z, torch::randn({2, 3, 24, 24}) * 50, id.contiguous(), NormMode::Instance);
  CHECK(y.abs().max().item<double>() <= 1.0);
}

TEST_CASE("zero tail gives tanh of the cropped previous image") {
  GeneratorScale g(8, 2);
  randomize(*g, 5);
  torch::NoGradGuard no_grad;
  g->tail->weight.zero_();
  g->tail->bias.zero_();
  auto z = torch::randn({1, 3, 30, 30});
  auto prev = torch::randn({1, 3, 30, 30});
  auto id = constant_id(1, 2, {30, 30}).tensor().unsqueeze(0);
  auto y = g->forward(z, prev, id);
  CHECK(torch::allclose(y, torch::tanh(centre_crop(prev, kScaleHalo))));
}

TEST_CASE("discriminator with zero weights scores zero") {
  DiscriminatorScale d(8);
  torch::NoGradGuard no_grad;
  for (auto& p : d->parameters()) p.zero_();
  auto s = d->forward(torch::randn({2, 3, 20, 20}), NormMode::Instance);
  CHECK(s.abs().max().item<double>() == 0.0);
}

TEST_CASE("SPADE starts as identity modulation") {
  SpadeUnit unit(4, 2, 4);
  init_weights(*unit);
  auto f = torch::randn({4, 6, 7}, torch::kFloat64);
  unit->to(torch::kFloat64);
  auto out = spade_modulate(*unit, f, constant_id(0, 2, {6, 7}));
  auto mean = f.mean({1, 2}, true);
  auto var = f.var({1, 2}, false, true);
  auto expect = (f - mean) / torch::sqrt(var + 1e-5);
  CHECK(torch::allclose(out, expect, 1e-9, 1e-9));
}

TEST_CASE("SPADE on a constant feature map returns beta") {
  SpadeUnit unit(3, 2, 5);
  randomize(*unit, 9);
  auto id = blend_constant({0.4, 0.6}, {5, 5});
  torch::NoGradGuard no_grad;
  auto out = spade_modulate(*unit, torch::full({3, 5, 5}, 2.5f), id);
  auto [g, b] = unit->modulation(id.tensor().unsqueeze(0));
  CHECK(torch::allclose(out, b.squeeze(0), 1e-5, 1e-5));
}

TEST_CASE("SPADE: different identities modulate differently") {
  SpadeUnit unit(3, 2, 5);
  randomize(*unit, 21, 1.0);
  torch::NoGradGuard no_grad;
  auto f = torch::randn({3, 6, 6});
  auto a = spade_modulate(*unit, f, constant_id(0, 2, {6, 6}));
  auto b = spade_modulate(*unit, f, constant_id(1, 2, {6, 6}));
  // direct evaluation of the two 1x1 layers
  auto h0 = torch::relu(unit->shared->weight.select(1, 0).flatten() + unit->shared->bias);
  auto h1 = torch::relu(unit->shared->weight.select(1, 1).flatten() + unit->shared->bias);
  auto gw = unit->gamma->weight.flatten(1);
  auto g0 = gw.matmul(h0) + unit->gamma->bias;
  auto g1 = gw.matmul(h1) + unit->gamma->bias;
  if (!torch::allclose(g0, g1)) CHECK_FALSE(torch::allclose(a, b));
  auto n = (f - f.mean({1, 2}, true)) / torch::sqrt(f.var({1, 2}, false, true) + 1e-5);
  auto bw = unit->beta->weight.flatten(1);
  auto expect0 = g0.view({3, 1, 1}) * n + (bw.matmul(h0) + unit->beta->bias).view({3, 1, 1});
  CHECK(torch::allclose(a, expect0, 1e-4, 1e-5));
  CHECK_THROWS_AS(spade_modulate(*unit, f, constant_id(0, 2, {6, 5})), GeometryError);
}

TEST_CASE("SPADE locality: a delta in the id map changes one pixel") {
  SpadeUnit unit(3, 2, 5);
  randomize(*unit, 4, 1.0);
  torch::NoGradGuard no_grad;
  auto base = constant_id(0, 2, {8, 8}).tensor().unsqueeze(0);
  auto pert = base.clone();
  pert[0][0][3][5] = 0.0f;
  pert[0][1][3][5] = 1.0f;
  auto [g0, b0] = unit->modulation(base);
  auto [g1, b1] = unit->modulation(pert);
  auto changed = ((g0 - g1).abs().sum(1) + (b0 - b1).abs().sum(1)).squeeze(0) > 0;
  auto expect = torch::zeros({8, 8}, torch::kBool);
  expect[3][5] = true;
  CHECK(torch::equal(changed, expect));
}

TEST_CASE("cropped forward equals the window of the full forward") {
  // fixed two-level model run the way training and region generation do:
  // full level with zero halo, or a halo-padded crop through the unpadded net
  GeneratorScale g1(8, 2), g0(8, 2);
  randomize(*g1, 31, 0.3);
  randomize(*g0, 32, 0.3);
  torch::NoGradGuard no_grad;
  const std::int64_t h1 = 24, w1 = 30, h0 = 32, w0 = 40;
  auto z1 = torch::randn({1, 3, h1, w1});
  auto z0 = torch::randn({1, 3, h0, w0});
  auto id1 = constant_id(1, 2, {h1, w1}).tensor().unsqueeze(0);
  auto id0 = constant_id(1, 2, {h0, w0}).tensor().unsqueeze(0);
  auto x1 = g1->forward_full(z1, torch::zeros_like(z1), id1);
  auto up = F::interpolate(x1, F::InterpolateFuncOptions()
                                   .size(std::vector<std::int64_t>{h0, w0})
                                   .mode(torch::kBilinear)
                                   .align_corners(false));
  auto full = g0->forward_full(z0, up, id0);

  std::mt19937 rng(8);
  for (int t = 0; t < 10; ++t) {
    const std::int64_t ch = 6 + static_cast<std::int64_t>(rng() % 10);
    const std::int64_t cw = 6 + static_cast<std::int64_t>(rng() % 10);
    const std::int64_t top = kScaleHalo + static_cast<std::int64_t>(rng() % (h0 - ch - 2 * kScaleHalo + 1));
    const std::int64_t left = kScaleHalo + static_cast<std::int64_t>(rng() % (w0 - cw - 2 * kScaleHalo + 1));
    CropWindow win{top, left, ch, cw, kScaleHalo};
    auto crop = g0->forward(crop_with_halo(z0, win), crop_with_halo(up, win),
                            crop_with_halo(id0, win, PadMode::Replicate));
    auto window = full.slice(2, top, top + ch).slice(3, left, left + cw);
    CHECK((crop - window).abs().max().item<double>() <= 1e-5);
  }
}
