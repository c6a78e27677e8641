#include "blendgan/niqe.hpp"

#include "blendgan/errors.hpp"

#include <torch/torch.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <vector>

namespace blendgan {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

torch::Tensor read_values(std::istream& in, std::vector<std::int64_t> shape,
                          const std::string& what) {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) {
    if (!(in >> x)) throw ConfigError("NIQE model: truncated " + what + " section");
  }
  return torch::tensor(v, torch::kFloat64).reshape(shape);
}

/// Ratio table of the generalized Gaussian moment match.
struct GammaTable {
  std::vector<double> gam;
  std::vector<double> r;
  GammaTable() {
    for (int i = 0; i <= 9800; ++i) {
      const double g = 0.2 + 0.001 * i;
      gam.push_back(g);
      const double a = std::tgamma(2.0 / g);
      r.push_back(a * a / (std::tgamma(1.0 / g) * std::tgamma(3.0 / g)));
    }
  }
};

const GammaTable& gamma_table() {
  static const GammaTable t;
  return t;
}

struct Aggd {
  double alpha, beta_l, beta_r;
};

Aggd estimate_aggd(const std::vector<double>& x) {
  double sl = 0.0, sr = 0.0, sa = 0.0, s2 = 0.0;
  std::int64_t nl = 0, nr = 0;
  for (double v : x) {
    if (v < 0) {
      sl += v * v;
      ++nl;
    } else if (v > 0) {
      sr += v * v;
      ++nr;
    }
    sa += std::abs(v);
    s2 += v * v;
  }
  const double n = static_cast<double>(x.size());
  const double left_std = nl ? std::sqrt(sl / nl) : kNaN;
  const double right_std = nr ? std::sqrt(sr / nr) : kNaN;
  const double gammahat = left_std / right_std;
  const double rhat = (sa / n) * (sa / n) / (s2 / n);
  const double rhatnorm = rhat * (std::pow(gammahat, 3) + 1) * (gammahat + 1) /
                          std::pow(gammahat * gammahat + 1, 2);
  const auto& t = gamma_table();
  std::size_t best = 0;
  if (!std::isnan(rhatnorm)) {
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < t.r.size(); ++i) {
      const double e = (t.r[i] - rhatnorm) * (t.r[i] - rhatnorm);
      if (e < best_err) {
        best_err = e;
        best = i;
      }
    }
  }
  const double alpha = t.gam[best];
  const double f = std::sqrt(std::tgamma(1.0 / alpha) / std::tgamma(3.0 / alpha));
  return {alpha, left_std * f, right_std * f};
}

/// 18 features of one normalized block (row-major h x w values).
std::vector<double> block_features(const std::vector<double>& b, std::int64_t h, std::int64_t w) {
  std::vector<double> feat;
  const auto base = estimate_aggd(b);
  feat.push_back(base.alpha);
  feat.push_back((base.beta_l + base.beta_r) / 2.0);
  const int shifts[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
  std::vector<double> prod(b.size());
  for (const auto& s : shifts) {
    for (std::int64_t i = 0; i < h; ++i) {
      for (std::int64_t j = 0; j < w; ++j) {
        const auto si = ((i - s[0]) % h + h) % h;
        const auto sj = ((j - s[1]) % w + w) % w;
        prod[i * w + j] = b[i * w + j] * b[si * w + sj];
      }
    }
    const auto p = estimate_aggd(prod);
    const double mean =
        (p.beta_r - p.beta_l) * (std::tgamma(2.0 / p.alpha) / std::tgamma(1.0 / p.alpha));
    feat.insert(feat.end(), {p.alpha, mean, p.beta_l, p.beta_r});
  }
  return feat;
}

/// Correlation with replicated borders ('nearest').
torch::Tensor smooth(const torch::Tensor& plane, const torch::Tensor& window) {
  const auto kh = window.size(0), kw = window.size(1);
  auto x = plane.unsqueeze(0).unsqueeze(0);
  x = torch::nn::functional::pad(
      x, torch::nn::functional::PadFuncOptions({kw / 2, kw / 2, kh / 2, kh / 2})
             .mode(torch::kReplicate));
  // convolution flips the window
  auto k = window.flip({0, 1}).unsqueeze(0).unsqueeze(0);
  return torch::conv2d(x, k).squeeze(0).squeeze(0);
}

double cubic(double x) {
  const double a = std::abs(x), a2 = a * a, a3 = a2 * a;
  if (a <= 1) return 1.5 * a3 - 2.5 * a2 + 1;
  if (a <= 2) return -0.5 * a3 + 2.5 * a2 - 4 * a + 2;
  return 0.0;
}

/// (out, in) MATLAB imresize weights along one axis.
torch::Tensor matlab_weights(std::int64_t in, std::int64_t out, double scale) {
  const double width = scale < 1.0 ? 4.0 / scale : 4.0;
  const auto p = static_cast<std::int64_t>(std::ceil(width)) + 2;
  auto w = torch::zeros({out, in}, torch::kFloat64);
  auto acc = w.accessor<double, 2>();
  for (std::int64_t o = 0; o < out; ++o) {
    const double u = (o + 1) / scale + 0.5 * (1.0 - 1.0 / scale);
    const double left = std::floor(u - width / 2.0);
    std::vector<double> ws(p);
    double sum = 0.0;
    for (std::int64_t j = 0; j < p; ++j) {
      const double d = u - (left + j);
      ws[j] = scale < 1.0 ? scale * cubic(d * scale) : cubic(d);
      sum += ws[j];
    }
    for (std::int64_t j = 0; j < p; ++j) {
      // 1-based source index, folded symmetrically into [1, in]
      auto idx = static_cast<std::int64_t>(left) + j;
      while (idx < 1 || idx > in) idx = idx < 1 ? 1 - idx : 2 * in + 1 - idx;
      acc[o][idx - 1] += ws[j] / sum;
    }
  }
  return w;
}

}  // namespace

NiqeModel NiqeModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("NIQE model file not found: " + path.string());
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "blendgan-niqe" || version != 1) {
    throw ConfigError("not a NIQE model file (expected 'blendgan-niqe 1'): " + path.string());
  }
  NiqeModel m;
  std::string key;
  while (in >> key) {
    if (key == "block") {
      in >> m.block_h >> m.block_w;
    } else if (key == "mu") {
      std::int64_t d = 0;
      in >> d;
      m.mu = read_values(in, {d}, "mu");
    } else if (key == "cov") {
      std::int64_t r = 0, c = 0;
      in >> r >> c;
      m.cov = read_values(in, {r, c}, "cov");
    } else if (key == "window") {
      std::int64_t r = 0, c = 0;
      in >> r >> c;
      m.window = read_values(in, {r, c}, "window");
    } else {
      throw ConfigError("NIQE model: unknown section '" + key + "'");
    }
  }
  if (!m.mu.defined() || !m.cov.defined() || !m.window.defined() || m.mu.numel() != 36 ||
      m.cov.size(0) != 36 || m.cov.size(1) != 36) {
    throw ConfigError("NIQE model needs mu (36), cov (36x36) and window sections");
  }
  if (m.block_h < 8 || m.block_w < 8) throw ConfigError("NIQE block size too small");
  return m;
}

void NiqeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << std::setprecision(17);
  out << "blendgan-niqe 1\nblock " << block_h << ' ' << block_w << '\n';
  auto dump = [&](const torch::Tensor& t) {
    auto c = t.contiguous().to(torch::kFloat64);
    const double* p = c.data_ptr<double>();
    for (std::int64_t i = 0; i < c.numel(); ++i) out << p[i] << (i % 6 == 5 ? '\n' : ' ');
    out << '\n';
  };
  out << "mu " << mu.numel() << '\n';
  dump(mu);
  out << "cov " << cov.size(0) << ' ' << cov.size(1) << '\n';
  dump(cov);
  out << "window " << window.size(0) << ' ' << window.size(1) << '\n';
  dump(window);
}

torch::Tensor imresize_matlab(const torch::Tensor& plane, double scale) {
  const auto h = plane.size(0), w = plane.size(1);
  const auto oh = static_cast<std::int64_t>(std::ceil(h * scale));
  const auto ow = static_cast<std::int64_t>(std::ceil(w * scale));
  auto x = plane.to(torch::kFloat64);
  return matlab_weights(h, oh, scale).matmul(x).matmul(matlab_weights(w, ow, scale).t());
}

double niqe_luma(const torch::Tensor& luma, const NiqeModel& model) {
  const auto nbh = luma.size(0) / model.block_h;
  const auto nbw = luma.size(1) / model.block_w;
  if (nbh < 1 || nbw < 1) {
    throw InvalidInput("NIQE needs an image of at least " + std::to_string(model.block_h) + "x" +
                       std::to_string(model.block_w));
  }
  auto img = luma.to(torch::kFloat64)
                 .slice(0, 0, nbh * model.block_h)
                 .slice(1, 0, nbw * model.block_w)
                 .contiguous();
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(nbh * nbw));
  for (int scale = 1; scale <= 2; ++scale) {
    auto mu = smooth(img, model.window);
    auto sigma = (smooth(img * img, model.window) - mu * mu).abs().sqrt();
    auto norm = ((img - mu) / (sigma + 1.0)).contiguous();
    const auto bh = model.block_h / scale, bw = model.block_w / scale;
    std::size_t row = 0;
    for (std::int64_t bx = 0; bx < nbw; ++bx) {
      for (std::int64_t by = 0; by < nbh; ++by) {
        auto blk = norm.slice(0, by * bh, (by + 1) * bh).slice(1, bx * bw, (bx + 1) * bw)
                       .contiguous();
        std::vector<double> v(blk.data_ptr<double>(), blk.data_ptr<double>() + blk.numel());
        auto f = block_features(v, bh, bw);
        rows[row].insert(rows[row].end(), f.begin(), f.end());
        ++row;
      }
    }
    if (scale == 1) img = imresize_matlab(img / 255.0, 0.5) * 255.0;
  }

  const auto n = static_cast<std::int64_t>(rows.size());
  auto feats = torch::empty({n, 36}, torch::kFloat64);
  for (std::int64_t i = 0; i < n; ++i) {
    feats[i] = torch::tensor(rows[static_cast<std::size_t>(i)], torch::kFloat64);
  }
  auto nan = torch::isnan(feats);
  auto mu_d = torch::where(nan, torch::zeros_like(feats), feats).sum(0) /
              (~nan).to(torch::kFloat64).sum(0);
  auto clean = feats.index({~nan.any(1)});
  torch::Tensor cov_d;
  if (clean.size(0) >= 2) {
    auto c = clean - clean.mean(0);
    cov_d = c.t().matmul(c) / static_cast<double>(clean.size(0) - 1);
  } else {
    cov_d = torch::full({36, 36}, kNaN, torch::kFloat64);
  }
  auto inv = torch::linalg_pinv((model.cov + cov_d) / 2.0);
  auto diff = (model.mu - mu_d).unsqueeze(0);
  const double q = diff.matmul(inv).matmul(diff.t()).item<double>();
  return std::sqrt(q);
}

double niqe(const ImageBuffer& img, const NiqeModel& model) {
  if (img.channels() != 3) throw InvalidInput("NIQE expects an RGB image");
  auto rgb = (img.tensor().to(torch::kFloat64) + 1.0) / 2.0;  // [0,1]
  auto y = 16.0 + 65.481 * rgb[0] + 128.553 * rgb[1] + 24.966 * rgb[2];
  return niqe_luma(y.round(), model);
}

}  // namespace blendgan
