#include "blendgan/errors.hpp"
#include "blendgan/inference.hpp"
#include "blendgan/region_generation.hpp"
#include "blendgan/training.hpp"
#include "fixtures.hpp"

#include "doctest.h"
#include <torch/torch.h>

using namespace blendgan;

namespace {

const ModelBundle& bundle() {
  static ModelBundle b = train_all(fixtures::two_images(), fixtures::tiny_config(2));
  return b;
}

}  // namespace

TEST_CASE("output sizes scale the plan per axis") {
  const auto& b = bundle();
  auto same = output_sizes(b.plan, b.plan.size(0));
  CHECK(same == b.plan.sizes);
  auto wide = output_sizes(b.plan, {b.plan.size(0).height, 2 * b.plan.size(0).width});
  CHECK(wide[0].width == 2 * b.plan.size(0).width);
  for (int l = 0; l < b.num_levels(); ++l) {
    CHECK(wide[l].height == b.plan.size(l).height);
    CHECK(std::abs(wide[l].width - 2 * b.plan.size(l).width) <= 1);
  }
}

TEST_CASE("sampling is deterministic per seed") {
  const auto& b = bundle();
  auto id = constant_id(0, 2, b.plan.size(0));
  auto a = sample(b, id, std::nullopt, 5);
  auto c = sample(b, id, std::nullopt, 5);
  auto d = sample(b, id, std::nullopt, 6);
  CHECK(torch::equal(a.tensor(), c.tensor()));
  CHECK_FALSE(torch::equal(a.tensor(), d.tensor()));
  CHECK(a.size() == b.plan.size(0));
  CHECK(a.tensor().abs().max().item<double>() <= 1.0);
  auto big = sample(b, id, Size2{40, 64}, 5);
  CHECK(big.size() == Size2{40, 64});
}

TEST_CASE("too small requests are rejected") {
  const auto& b = bundle();
  CHECK_THROWS_AS(sample(b, constant_id(0, 2, {12, 12}), Size2{12, 12}, 0), TooSmallInput);
  CHECK_THROWS_AS(sample(b, constant_id(0, 3, b.plan.size(0)), std::nullopt, 0), ValidationError);
}

TEST_CASE("morph endpoints are the reconstructions") {
  const auto& b = bundle();
  auto frames = morph(b, {{1.0, 0.0}, {0.5, 0.5}, {0.0, 1.0}}, NoiseMode::Reconstruction, 3);
  REQUIRE(frames.size() == 3);
  CHECK(torch::equal(frames.front().tensor(), reconstruct(b, 0).tensor()));
  CHECK(torch::equal(frames.back().tensor(), reconstruct(b, 1).tensor()));
  CHECK_THROWS_AS(morph(b, {{0.6, 0.6}}, NoiseMode::Random, 0), ValidationError);
  CHECK_THROWS_AS(morph(b, {{1.0}}, NoiseMode::Random, 0), ValidationError);
}

TEST_CASE("reconstruct matches the training-time reconstruction path") {
  const auto& b = bundle();
  for (std::int64_t k = 0; k < 2; ++k) {
    auto r = reconstruct(b, k);
    CHECK(torch::allclose(r.tensor(), reconstruct_level(b, k, 0).squeeze(0)));
  }
  CHECK_THROWS_AS(reconstruct(b, 2), InvalidInput);
}

TEST_CASE("meld identity map") {
  auto m = meld_id_map({0, 1}, 2, {4, 100}, 0.2);
  for (std::int64_t x = 0; x < 100; ++x) {
    const double u = (x + 0.5) / 100.0;
    const double t = std::clamp((u - 0.4) / 0.2, 0.0, 1.0);
    CHECK(m.tensor()[1][2][x].item<double>() == doctest::Approx(t).epsilon(1e-6));
    CHECK(m.tensor()[0][2][x].item<double>() == doctest::Approx(1.0 - t).epsilon(1e-6));
  }
  auto three = meld_id_map({1, 0, 1}, 2, {2, 90}, 0.1);
  CHECK(three.tensor()[1][0][0].item<double>() == 1.0);
  CHECK(three.tensor()[0][0][45].item<double>() == 1.0);
  CHECK(three.tensor()[1][0][89].item<double>() == 1.0);
  CHECK_THROWS_AS(meld_id_map({0, 1}, 2, {4, 100}, 1.5), InvalidInput);
  CHECK_THROWS_AS(meld_id_map({0, 2}, 2, {4, 100}, 0.2), InvalidInput);
}

TEST_CASE("meld output") {
  const auto& b = bundle();
  auto r = meld(b, {0, 1}, 3 * b.plan.size(0).width, 1.0 / 3, 0);
  CHECK(r.image.size() == Size2{b.plan.size(0).height, 3 * b.plan.size(0).width});
  REQUIRE(r.anchor_columns.size() == 2);
  CHECK(r.anchor_columns[0].first == 0);
  CHECK(r.anchor_columns[1].second == r.image.width());
  CHECK_THROWS_AS(meld(b, {0, 1}, 8, 0.3, 0), InvalidInput);
}

TEST_CASE("spatial sampling needs a categorical map") {
  const auto& b = bundle();
  const auto s = b.plan.size(0);
  auto left = torch::zeros({s.height, s.width}, torch::kBool);
  left.slice(1, 0, s.width / 2).fill_(true);
  auto mask = mask_id({left, left.logical_not()});
  auto out = spatial_sample(b, mask, torch::Tensor(), 0);
  CHECK(out.size() == s);
  CHECK_THROWS_AS(spatial_sample(b, blend_constant({0.5, 0.5}, s), torch::Tensor(), 0),
                  NonCategoricalError);
  // faithful everywhere with a constant mask is the reconstruction
  auto all = spatial_sample(b, constant_id(1, 2, s), torch::ones({s.height, s.width}), 0);
  CHECK(torch::equal(all.tensor(), reconstruct(b, 1).tensor()));
}

TEST_CASE("fuse with one identity is ordinary sampling") {
  const auto& b = bundle();
  auto f = fuse(b, 0, 0, 1, 9);
  auto s = sample(b, constant_id(0, 2, b.plan.size(0)), std::nullopt, 9);
  CHECK(torch::equal(f.tensor(), s.tensor()));
  CHECK_THROWS_AS(fuse(b, 0, 1, b.num_levels() + 1, 0), InvalidInput);
}

TEST_CASE("edit keeps the trained size") {
  const auto& b = bundle();
  auto e = edit(b, b.images[0].image, default_inject_level(b.plan), constant_id(0, 2, {4, 4}), 0);
  CHECK(e.size() == b.plan.size(0));
  CHECK(default_inject_level(b.plan) == b.plan.coarsest() - 1);
}

TEST_CASE("region generation: windows agree with the full output") {
  const auto& b = bundle();
  GenerationRequest req;
  req.schedule = IdentitySchedule(constant_id(1, 2, b.plan.size(0)), b.num_levels());
  req.seed = 4;
  const auto sizes = output_sizes(b.plan, b.plan.size(0));
  std::vector<torch::Tensor> noise;
  for (int l = 0; l < b.num_levels(); ++l) noise.push_back(request_noise(b, req, l, sizes));
  PyramidSources src;
  src.sizes = sizes;
  src.start_level = b.plan.coarsest();
  src.noise = [&](int l, const Region& r) {
    return extract_region(noise[l], r.top, r.left, r.height, r.width, PadMode::Zeros);
  };
  src.identity = [&](int l, const Region& r) {
    auto id = req.schedule.at(l, sizes[l]).tensor().unsqueeze(0);
    return extract_region(id, r.top, r.left, r.height, r.width, PadMode::Replicate);
  };
  RegionGenerator rg(b, src);
  auto full = rg.finest();
  CHECK(torch::equal(full.squeeze(0), generate(b, req).tensor()));
  for (Region r : {Region{0, 0, 8, 8}, Region{5, 7, 12, 9}, Region{20, 20, 12, 12}}) {
    auto win = rg.output(0, r);
    auto ref = full.slice(2, r.top, r.top + r.height).slice(3, r.left, r.left + r.width);
    CHECK((win - ref).abs().max().item<double>() <= 1e-5);
  }
}
