#include "blendgan/errors.hpp"
#include "blendgan/tensor_pyramid.hpp"

#include "doctest.h"
#include <torch/torch.h>

#include <cmath>
#include <random>

using namespace blendgan;
namespace F = torch::nn::functional;

namespace {

double max_abs(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

}  // namespace

TEST_CASE("scale plan: closed-form level count on 160x160 at r=0.5") {
  const auto plan = build_scale_plan({160, 160}, 0.5, 20, 160, 0);
  // n = ceil(log(20/160)/log(0.5)) = 3, so 4 levels
  REQUIRE(plan.num_levels() == 4);
  CHECK(plan.size(0) == Size2{160, 160});
  CHECK(plan.size(1) == Size2{80, 80});
  CHECK(plan.size(2) == Size2{40, 40});
  CHECK(plan.size(3) == Size2{20, 20});
}

TEST_CASE("scale plan: single level when min_dim equals the image") {
  const auto plan = build_scale_plan({64, 64}, 0.5, 64, 64, 0);
  CHECK(plan.num_levels() == 1);
  CHECK(plan.size(0) == Size2{64, 64});
}

TEST_CASE("scale plan: crop only where the level exceeds the window") {
  const auto plan = build_scale_plan({400, 660}, 0.75, 25, 660, 256);
  bool any = false;
  for (int i = 0; i < plan.num_levels(); ++i) {
    const auto s = plan.size(i);
    const bool expect = std::max(s.height, s.width) > 256;
    CHECK(plan.cropped(i) == expect);
    if (expect) CHECK(*plan.crops[i] == 256);
    any = any || expect;
  }
  CHECK(any);
}

TEST_CASE("scale plan: invariants over many inputs") {
  std::mt19937 rng(1);
  std::uniform_int_distribution<int> side(30, 700);
  std::uniform_real_distribution<double> ratio(0.5, 0.9);
  for (int t = 0; t < 100; ++t) {
    const Size2 full{side(rng), side(rng)};
    const double r = ratio(rng);
    const auto top = working_size(full, 250);
    if (std::min(top.height, top.width) < 25) {
      CHECK_THROWS_AS(build_scale_plan(full, r, 25, 250, 128), InvalidInput);
      continue;
    }
    const auto plan = build_scale_plan(full, r, 25, 250, 128);
    CHECK(plan.size(0) == top);
    CHECK(std::max(top.height, top.width) <= 250);
    for (int i = 1; i < plan.num_levels(); ++i) {
      CHECK(plan.size(i).height < plan.size(i - 1).height);
      CHECK(plan.size(i).width < plan.size(i - 1).width);
    }
    const auto c = plan.size(plan.coarsest());
    CHECK(std::min(c.height, c.width) >= 25);
    // aspect ratio within rounding
    for (const auto& s : plan.sizes) {
      const double want_w = static_cast<double>(s.height) * top.width / top.height;
      CHECK(std::abs(s.width - want_w) <= 1.0 + static_cast<double>(top.width) / top.height);
    }
  }
}

TEST_CASE("scale plan: rejects bad inputs") {
  CHECK_THROWS_AS(build_scale_plan({20, 20}, 0.75, 25, 250, 0), InvalidInput);
  CHECK_THROWS_AS(build_scale_plan({100, 100}, 1.0, 25, 250, 0), InvalidInput);
  CHECK_THROWS_AS(build_scale_plan({100, 100}, 0.0, 25, 250, 0), InvalidInput);
}

TEST_CASE("scale plan: resampling down the plan reproduces the sizes") {
  const auto plan = build_scale_plan({90, 130}, 0.75, 25, 250, 0);
  auto img = ImageBuffer(torch::rand({3, 90, 130}) * 2 - 1);
  const auto pyr = build_pyramid(img, plan);
  REQUIRE(pyr.size() == plan.sizes.size());
  for (int i = 0; i < plan.num_levels(); ++i) CHECK(pyr[i].size() == plan.size(i));
}

TEST_CASE("default crop window follows the working size") {
  CHECK(default_crop_window(250) == 128);
  CHECK(default_crop_window(300) == 128);
  CHECK(default_crop_window(512) == 256);
}

TEST_CASE("resample: constants stay constant") {
  auto img = ImageBuffer(torch::full({3, 17, 23}, 0.3));
  for (Size2 s : {Size2{5, 9}, Size2{40, 31}, Size2{17, 23}, Size2{1, 1}}) {
    auto out = resample(img, s);
    CHECK(out.size() == s);
    CHECK(max_abs(out.tensor(), torch::full({3, s.height, s.width}, 0.3)) < 1e-6);
  }
}

TEST_CASE("resample: identical size is bit-identical") {
  auto img = ImageBuffer(torch::rand({3, 12, 19}) * 2 - 1);
  CHECK(torch::equal(resample(img, {12, 19}).tensor(), img.tensor()));
}

TEST_CASE("resample: up then down on a smooth ramp returns the ramp") {
  auto x = torch::linspace(-0.8, 0.8, 40).view({1, 1, 40}).expand({3, 32, 40});
  auto y = torch::linspace(-0.5, 0.5, 32).view({1, 32, 1});
  auto img = ImageBuffer((0.5 * x + 0.4 * y).contiguous());
  auto back = resample(resample(img, {64, 80}), {32, 40});
  // borders replicate, so compare away from the edges
  auto core = [](const torch::Tensor& t) { return t.slice(1, 3, -3).slice(2, 3, -3); };
  CHECK(max_abs(core(back.tensor()), core(img.tensor())) < 1e-2);
}

TEST_CASE("resample: bicubic upsampling matches the reference interpolation") {
  auto t = torch::rand({1, 3, 9, 13}, torch::kFloat64);
  auto ours = resample_tensor(t, {27, 26}, Kernel::Bicubic);
  auto ref = F::interpolate(t, F::InterpolateFuncOptions()
                                   .size(std::vector<int64_t>{27, 26})
                                   .mode(torch::kBicubic)
                                   .align_corners(false));
  CHECK(max_abs(ours, ref) < 1e-10);
}

TEST_CASE("resample: bilinear downsampling matches the antialiased reference away from borders") {
  auto t = torch::rand({1, 2, 64, 60}, torch::kFloat64);
  auto ours = resample_tensor(t, {16, 20}, Kernel::Bilinear);
  auto ref = F::interpolate(t, F::InterpolateFuncOptions()
                                   .size(std::vector<int64_t>{16, 20})
                                   .mode(torch::kBilinear)
                                   .align_corners(false)
                                   .antialias(true));
  auto core = [](const torch::Tensor& x) { return x.slice(2, 2, -2).slice(3, 2, -2); };
  CHECK(max_abs(core(ours), core(ref)) < 1e-10);
}

TEST_CASE("resample weights: rows are normalized") {
  for (auto [in, out] : {std::pair{10, 7}, std::pair{7, 10}, std::pair{100, 3}, std::pair{5, 5}}) {
    for (auto k : {Kernel::Bicubic, Kernel::Bilinear}) {
      auto w = resample_weights(in, out, k);
      CHECK(max_abs(w.sum(1), torch::ones({out}, torch::kFloat64)) < 1e-12);
    }
  }
}

TEST_CASE("resample_window equals the window of the full resample") {
  std::mt19937 rng(5);
  auto src = torch::rand({2, 3, 41, 37}, torch::kFloat64);
  for (int t = 0; t < 40; ++t) {
    const Size2 dst_full{std::uniform_int_distribution<int>(20, 90)(rng),
                         std::uniform_int_distribution<int>(20, 90)(rng)};
    const auto full = resample_tensor(src, dst_full, Kernel::Bicubic);
    const std::int64_t h = std::uniform_int_distribution<int>(1, dst_full.height)(rng);
    const std::int64_t w = std::uniform_int_distribution<int>(1, dst_full.width)(rng);
    const std::int64_t top = std::uniform_int_distribution<int>(0, dst_full.height - h)(rng);
    const std::int64_t left = std::uniform_int_distribution<int>(0, dst_full.width - w)(rng);
    auto [r0, r1] = resample_source_span(41, dst_full.height, top, top + h, Kernel::Bicubic);
    auto [c0, c1] = resample_source_span(37, dst_full.width, left, left + w, Kernel::Bicubic);
    auto part = src.slice(2, r0, r1).slice(3, c0, c1);
    auto win = resample_window(part, {41, 37}, r0, c0, dst_full, top, left, {h, w}, Kernel::Bicubic);
    CHECK(max_abs(win, full.slice(2, top, top + h).slice(3, left, left + w)) < 1e-12);
  }
  auto tiny = src.slice(2, 0, 2);
  CHECK_THROWS_AS(resample_window(tiny, {41, 37}, 0, 0, {80, 74}, 10, 0, {4, 74}, Kernel::Bicubic),
                  GeometryError);
}

TEST_CASE("crop_with_halo equals zero-pad then slice") {
  std::mt19937 rng(11);
  for (int t = 0; t < 200; ++t) {
    const std::int64_t h = std::uniform_int_distribution<int>(1, 24)(rng);
    const std::int64_t w = std::uniform_int_distribution<int>(1, 24)(rng);
    const std::int64_t halo = std::uniform_int_distribution<int>(0, 6)(rng);
    auto x = torch::randn({3, h, w});
    CropWindow win;
    win.height = std::uniform_int_distribution<int>(1, static_cast<int>(h))(rng);
    win.width = std::uniform_int_distribution<int>(1, static_cast<int>(w))(rng);
    win.top = std::uniform_int_distribution<int>(0, static_cast<int>(h - win.height))(rng);
    win.left = std::uniform_int_distribution<int>(0, static_cast<int>(w - win.width))(rng);
    win.halo = halo;
    auto padded = F::pad(x, F::PadFuncOptions({halo, halo, halo, halo}));
    auto ref = padded.slice(1, win.top, win.top + win.height + 2 * halo)
                   .slice(2, win.left, win.left + win.width + 2 * halo);
    CHECK(torch::equal(crop_with_halo(x, win), ref));
  }
}

TEST_CASE("crop_with_halo geometry cases") {
  auto x = torch::rand({3, 256, 256}) + 1.0;
  auto corner = crop_with_halo(x, {0, 0, 128, 128, 5});
  CHECK(corner.size(1) == 138);
  CHECK(corner.size(2) == 138);
  CHECK(corner.slice(1, 0, 5).abs().sum().item<double>() == 0.0);
  CHECK(corner.slice(2, 0, 5).abs().sum().item<double>() == 0.0);

  auto small = torch::rand({3, 20, 30});
  CHECK(torch::equal(crop_with_halo(small, {0, 0, 20, 30, 0}), small));

  auto ones = torch::ones({3, 256, 256});
  auto inner = crop_with_halo(ones, {60, 60, 128, 128, 5});
  CHECK(torch::equal(inner, torch::ones({3, 138, 138})));

  CHECK_THROWS_AS(crop_with_halo(x, {200, 0, 128, 128, 5}), GeometryError);
  CHECK_THROWS_AS(crop_with_halo(x, {-1, 0, 10, 10, 5}), GeometryError);
}

TEST_CASE("image buffer clamps into range and rejects empty input") {
  auto img = ImageBuffer(torch::tensor({2.0, -3.0, 0.5}).view({3, 1, 1}));
  CHECK(img.tensor().max().item<float>() == 1.0f);
  CHECK(img.tensor().min().item<float>() == -1.0f);
  CHECK_THROWS_AS(ImageBuffer(torch::zeros({3, 0, 4})), InvalidInput);
}
