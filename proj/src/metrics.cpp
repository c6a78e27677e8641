#include "blendgan/metrics.hpp"

#include "blendgan/errors.hpp"
#include "blendgan/niqe.hpp"
#include "blendgan/rng.hpp"

#include "json.hpp"
#include <torch/script.h>
#include <torch/torch.h>

#include <cmath>
#include <ostream>

namespace blendgan {
namespace {

constexpr double kEigTolerance = 1e-8;

/// Symmetric square root via eigendecomposition; eigenvalues down to
/// -tolerance are clipped to zero.
torch::Tensor psd_sqrt(const torch::Tensor& m, const char* what) {
  auto sym = 0.5 * (m + m.t());
  auto [evals, evecs] = torch::linalg_eigh(sym);
  const double lo = evals.min().item<double>();
  if (lo < -kEigTolerance) {
    throw NumericError(std::string(what) + " is not positive semidefinite (eigenvalue " +
                       std::to_string(lo) + ")");
  }
  auto root = evals.clamp_min(0.0).sqrt();
  return evecs.matmul(torch::diag(root)).matmul(evecs.t());
}

}  // namespace

FeatureStats FeatureStats::from_features(const torch::Tensor& features) {
  if (features.dim() != 2 || features.size(0) < 2) {
    throw InvalidInput("feature statistics need at least two (N,D) observations");
  }
  auto f = features.to(torch::kFloat64);
  FeatureStats s;
  s.mu = f.mean(0);
  auto c = f - s.mu;
  s.sigma = c.t().matmul(c) / static_cast<double>(f.size(0) - 1);
  return s;
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.mu.numel() != b.mu.numel() || a.sigma.sizes() != b.sigma.sizes() ||
      a.sigma.size(0) != a.mu.numel()) {
    throw InvalidInput("feature statistics have mismatched dimensions");
  }
  auto sa = a.sigma.to(torch::kFloat64);
  auto sb = b.sigma.to(torch::kFloat64);
  auto diff = a.mu.to(torch::kFloat64) - b.mu.to(torch::kFloat64);
  auto root_a = psd_sqrt(sa, "first covariance");
  psd_sqrt(sb, "second covariance");
  // Tr((Sa Sb)^(1/2)) = Tr((Sa^(1/2) Sb Sa^(1/2))^(1/2))
  auto inner = root_a.matmul(sb).matmul(root_a);
  inner = 0.5 * (inner + inner.t());
  auto evals = torch::linalg_eigvalsh(inner);
  const double scale = std::max(1.0, evals.abs().max().item<double>());
  if (evals.min().item<double>() < -kEigTolerance * scale) {
    throw NumericError("covariance product has a negative eigenvalue");
  }
  const double tr_cross = evals.clamp_min(0.0).sqrt().sum().item<double>();
  const double d = diff.dot(diff).item<double>() + sa.trace().item<double>() +
                   sb.trace().item<double>() - 2.0 * tr_cross;
  return std::max(0.0, d);
}

StubExtractor::StubExtractor(std::int64_t dims, std::int64_t patch, std::uint64_t seed)
    : patch_(patch) {
  if (dims < 1 || patch < 1) throw InvalidInput("stub extractor needs positive sizes");
  auto gen = make_generator(seed, "stub-extractor");
  weight_ = torch::randn({dims, 3 * patch * patch}, gen, torch::kFloat64);
}

torch::Tensor StubExtractor::features(const ImageBuffer& img) {
  if (img.channels() != 3) throw InvalidInput("stub extractor expects RGB");
  auto x = img.tensor().to(torch::kFloat64).unsqueeze(0);
  auto cols = torch::nn::functional::unfold(x, torch::nn::functional::UnfoldFuncOptions(patch_));
  return weight_.matmul(cols.squeeze(0)).t();  // (positions, D)
}

struct TorchScriptExtractor::Impl {
  torch::jit::script::Module module;
};

TorchScriptExtractor::TorchScriptExtractor(const std::filesystem::path& path)
    : impl_(std::make_unique<Impl>()) {
  if (!std::filesystem::exists(path)) {
    throw NotFound("feature extractor not found: " + path.string());
  }
  impl_->module = torch::jit::load(path.string());
  impl_->module.eval();
}

TorchScriptExtractor::~TorchScriptExtractor() = default;

torch::Tensor TorchScriptExtractor::features(const ImageBuffer& img) {
  torch::NoGradGuard no_grad;
  auto out = impl_->module.forward({img.tensor().unsqueeze(0)}).toTensor();
  if (out.dim() != 4 || out.size(0) != 1) {
    throw InvalidInput("feature extractor must return a (1,D,h,w) tensor");
  }
  return out.squeeze(0).flatten(1).t().to(torch::kFloat64);
}

double sifid(const ImageBuffer& real, const ImageBuffer& fake, FeatureExtractor& extractor) {
  return frechet_distance(FeatureStats::from_features(extractor.features(real)),
                          FeatureStats::from_features(extractor.features(fake)));
}

double diversity(const std::vector<ImageBuffer>& samples, const ImageBuffer& reference) {
  if (samples.size() < 2) throw InvalidInput("diversity needs at least two samples");
  std::vector<torch::Tensor> stack;
  for (const auto& s : samples) {
    if (s.tensor().sizes() != samples.front().tensor().sizes()) {
      throw InvalidInput("diversity samples must share a size");
    }
    stack.push_back(s.tensor().to(torch::kFloat64));
  }
  auto per_pixel = torch::stack(stack).std(0, /*unbiased=*/false);
  const double ref_std = reference.tensor().to(torch::kFloat64).std(/*unbiased=*/false).item<double>();
  if (!(ref_std > 0.0)) throw NumericError("reference image has zero standard deviation");
  return per_pixel.mean().item<double>() / ref_std;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd r;
  if (values.empty()) return r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  for (double v : values) r.std += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(values.size()));
  return r;
}

void MetricReport::write_csv(std::ostream& out) const {
  out << "metric,mean,std,samples\n";
  out << "diversity," << diversity.mean << ',' << diversity.std << ',' << samples << '\n';
  out << "sifid," << sifid.mean << ',' << sifid.std << ',' << samples << '\n';
  if (niqe) out << "niqe," << niqe->mean << ',' << niqe->std << ',' << samples << '\n';
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["samples"] = samples;
  j["diversity"] = {{"mean", diversity.mean}, {"std", diversity.std}};
  j["sifid"] = {{"mean", sifid.mean}, {"std", sifid.std}};
  if (niqe) j["niqe"] = {{"mean", niqe->mean}, {"std", niqe->std}};
  return j.dump(2);
}

MetricReport evaluate_samples(const std::vector<ImageBuffer>& samples,
                              const ImageBuffer& reference, FeatureExtractor& extractor,
                              const NiqeModel* niqe_model) {
  if (samples.empty()) throw InvalidInput("no samples to evaluate");
  MetricReport r;
  r.samples = static_cast<std::int64_t>(samples.size());
  std::vector<double> sif;
  std::vector<double> nq;
  for (const auto& s : samples) {
    sif.push_back(sifid(reference, s, extractor));
    if (niqe_model) nq.push_back(niqe(s, *niqe_model));
  }
  r.sifid = mean_std(sif);
  if (samples.size() >= 2) r.diversity = {diversity(samples, reference), 0.0};
  if (niqe_model) r.niqe = mean_std(nq);
  return r;
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  if (a.tensor().sizes() != b.tensor().sizes()) throw InvalidInput("psnr: size mismatch");
  const double mse =
      (a.tensor().to(torch::kFloat64) - b.tensor().to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(4.0 / mse);
}

}  // namespace blendgan
