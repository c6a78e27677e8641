#include "blendgan/errors.hpp"
#include "blendgan/metrics.hpp"
#include "blendgan/niqe.hpp"
#include "fixtures.hpp"

#include "doctest.h"
#include <torch/torch.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

using namespace blendgan;

namespace {

FeatureStats stats(torch::Tensor mu, torch::Tensor sigma) {
  return {mu.to(torch::kFloat64), sigma.to(torch::kFloat64)};
}

torch::Tensor rotation(double angle) {
  return torch::tensor({std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle)},
                       torch::kFloat64)
      .view({2, 2});
}

}  // namespace

TEST_CASE("frechet closed forms") {
  auto eye = torch::eye(2, torch::kFloat64);
  auto zero = torch::zeros({2}, torch::kFloat64);
  CHECK(frechet_distance(stats(zero, eye), stats(zero, eye)) <= 1e-8);
  CHECK(std::abs(frechet_distance(stats(zero, eye), stats(torch::tensor({2.0, 0.0}), eye)) - 4.0) <= 1e-8);
  // one dimension: (ma-mb)^2 + (sa-sb)^2
  auto one = [](double m, double v) {
    return stats(torch::tensor({m}), torch::tensor({v}).view({1, 1}));
  };
  CHECK(std::abs(frechet_distance(one(1.0, 4.0), one(-2.0, 9.0)) - (9.0 + 1.0)) <= 1e-8);
  // commuting diagonal covariances
  auto a = stats(zero, torch::diag(torch::tensor({4.0, 9.0})));
  auto b = stats(zero, eye);
  CHECK(std::abs(frechet_distance(a, b) - 5.0) <= 1e-8);
  // shared eigenbasis, rotated
  auto r = rotation(0.7);
  auto ra = stats(zero, r.matmul(torch::diag(torch::tensor({4.0, 1.0}, torch::kFloat64))).matmul(r.t()));
  auto rb = stats(torch::tensor({0.0, 3.0}),
                  r.matmul(torch::diag(torch::tensor({9.0, 16.0}, torch::kFloat64))).matmul(r.t()));
  CHECK(std::abs(frechet_distance(ra, rb) - (9.0 + 1.0 + 9.0)) <= 1e-8);
  // symmetric in its arguments
  CHECK(std::abs(frechet_distance(ra, rb) - frechet_distance(rb, ra)) <= 1e-8);
}

TEST_CASE("frechet rejects bad covariances") {
  auto zero = torch::zeros({2}, torch::kFloat64);
  auto bad = stats(zero, torch::diag(torch::tensor({1.0, -0.5})));
  CHECK_THROWS_AS(frechet_distance(bad, stats(zero, torch::eye(2))), NumericError);
  CHECK_THROWS_AS(frechet_distance(stats(zero, torch::eye(2)), stats(torch::zeros({3}), torch::eye(3))),
                  InvalidInput);
}

TEST_CASE("feature statistics") {
  auto f = torch::tensor({1.0, 2.0, 3.0, 4.0, 5.0, 9.0}, torch::kFloat64).view({3, 2});
  auto s = FeatureStats::from_features(f);
  CHECK(torch::allclose(s.mu, torch::tensor({3.0, 5.0}, torch::kFloat64)));
  CHECK(s.sigma[0][0].item<double>() == doctest::Approx(4.0));
  CHECK(s.sigma[0][1].item<double>() == doctest::Approx(7.0));
  CHECK(s.sigma[1][1].item<double>() == doctest::Approx(13.0));
  CHECK_THROWS_AS(FeatureStats::from_features(torch::ones({1, 2})), InvalidInput);
}

TEST_CASE("sifid of an image with itself is zero") {
  StubExtractor ex;
  auto img = fixtures::checker(32, 32);
  CHECK(sifid(img, img, ex) <= 1e-10);
  auto other = fixtures::stripes(32, 32);
  CHECK(sifid(img, other, ex) > 0.01);
  // stub features are the projection of pixel colours
  auto f = ex.features(img);
  CHECK(f.size(0) == 32 * 32);
  CHECK(f.size(1) == 8);
  auto px = img.tensor().to(torch::kFloat64).select(1, 3).select(1, 5);
  CHECK(torch::allclose(f[3 * 32 + 5], ex.projection().matmul(px)));
}

TEST_CASE("diversity closed form") {
  auto a = ImageBuffer(torch::zeros({3, 4, 4}));
  auto b = ImageBuffer(torch::ones({3, 4, 4}));
  auto ref = torch::ones({3, 4, 4});
  ref.slice(2, 0, 2).fill_(-1.0f);
  // per-pixel std 0.5, reference std 1
  CHECK(diversity({a, b}, ImageBuffer(ref)) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(diversity({a, a}, ImageBuffer(ref)) == 0.0);
  CHECK_THROWS_AS(diversity({a}, ImageBuffer(ref)), InvalidInput);
  CHECK_THROWS_AS(diversity({a, b}, a), NumericError);
}

TEST_CASE("psnr") {
  auto a = ImageBuffer(torch::zeros({3, 4, 4}));
  auto b = ImageBuffer(torch::full({3, 4, 4}, 0.2f));
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));
}

TEST_CASE("mean_std and reports") {
  auto m = mean_std({1.0, 3.0});
  CHECK(m.mean == 2.0);
  CHECK(m.std == 1.0);
  StubExtractor ex;
  auto ref = fixtures::checker(24, 24);
  auto r = evaluate_samples({ref, fixtures::stripes(24, 24)}, ref, ex);
  CHECK(r.samples == 2);
  CHECK_FALSE(r.niqe.has_value());
  std::ostringstream csv;
  r.write_csv(csv);
  CHECK(csv.str().rfind("metric,mean,std,samples\n", 0) == 0);
  CHECK(csv.str().find("niqe") == std::string::npos);
}

TEST_CASE("imresize keeps constants and halves sizes") {
  auto plane = torch::full({20, 30}, 7.0, torch::kFloat64);
  auto half = imresize_matlab(plane, 0.5);
  CHECK(half.size(0) == 10);
  CHECK(half.size(1) == 15);
  CHECK(torch::allclose(half, torch::full({10, 15}, 7.0, torch::kFloat64)));
}

TEST_CASE("niqe model file round trip") {
  NiqeModel m;
  m.block_h = m.block_w = 32;
  m.mu = torch::zeros({36}, torch::kFloat64);
  m.cov = torch::eye(36, torch::kFloat64);
  auto g = torch::arange(-3, 4, torch::kFloat64);
  auto w = torch::exp(-(g.view({7, 1}).pow(2) + g.view({1, 7}).pow(2)) / (2 * 49.0 / 36.0));
  m.window = w / w.sum();
  auto path = std::filesystem::temp_directory_path() / "blendgan_test_niqe.txt";
  m.save(path);
  auto back = NiqeModel::load(path);
  CHECK(back.block_h == 32);
  CHECK(torch::allclose(back.window, m.window));
  auto img = fixtures::checker(64, 64);
  const double s = niqe(img, back);
  CHECK(std::isfinite(s));
  CHECK(s == niqe(img, back));
  CHECK_THROWS_AS(niqe(fixtures::checker(16, 16), back), InvalidInput);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(NiqeModel::load(path), ConfigError);
}

TEST_CASE("niqe grows with added noise") {
  const char* file = std::getenv("BLENDGAN_NIQE_MODEL");
  if (!file || !std::filesystem::exists(file)) {
    MESSAGE("skipped: BLENDGAN_NIQE_MODEL does not name a pristine model file");
    return;
  }
  auto model = NiqeModel::load(file);
  auto gen = at::detail::createCPUGenerator(3);
  auto base = fixtures::checker(192, 192).tensor();
  double prev = niqe(ImageBuffer(base), model);
  for (double amp : {0.1, 0.3}) {
    auto noisy = (base + torch::randn(base.sizes(), gen) * amp).clamp(-1, 1);
    const double s = niqe(ImageBuffer(noisy), model);
    CHECK(s > prev);
    prev = s;
  }
}
