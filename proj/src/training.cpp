#include "blendgan/training.hpp"

#include "blendgan/errors.hpp"
#include "blendgan/memory_profile.hpp"
#include "blendgan/rng.hpp"

#include "json.hpp"
#include <torch/torch.h>

#include <cmath>
#include <iostream>

namespace blendgan {
namespace {

/// (N,K,h,w) one-hot planes for the given identities.
torch::Tensor one_hot_planes(const std::vector<std::int64_t>& ids, std::int64_t k,
                             std::int64_t h, std::int64_t w) {
  const auto n = static_cast<std::int64_t>(ids.size());
  auto idx = torch::tensor(ids, torch::kLong);
  return torch::one_hot(idx, k).to(torch::kFloat32).view({n, k, 1, 1}).expand({n, k, h, w})
      .contiguous();
}

Region core_region(const CropWindow& w) { return {w.top, w.left, w.height, w.width}; }

bool finite(const torch::Tensor& t) { return torch::isfinite(t).all().item<bool>(); }

/// Reconstruction-path sources for identity k: z^rec at every level.
PyramidSources rec_sources(const ModelBundle& b, std::int64_t k) {
  PyramidSources s;
  s.sizes = b.plan.sizes;
  s.batch = 1;
  s.start_level = b.plan.coarsest();
  const auto num = b.num_identities;
  s.noise = [&b](int level, const Region& r) {
    const auto& z = b.noise.zrec.at(level);
    if (!z.defined()) throw InvalidInput("reconstruction noise missing at level " + std::to_string(level));
    return extract_region(z, r.top, r.left, r.height, r.width, PadMode::Zeros);
  };
  s.identity = [k, num](int, const Region& r) { return one_hot_planes({k}, num, r.height, r.width); };
  return s;
}

void check_identity(const ModelBundle& b, std::int64_t k) {
  if (k < 0 || k >= b.num_identities) {
    throw InvalidInput("identity " + std::to_string(k) + " out of range [0," +
                       std::to_string(b.num_identities) + ")");
  }
}

}  // namespace

// Reports ---------------------------------------------------------------------

void LossReport::write_ndjson(std::ostream& out) const {
  for (const auto& r : records) {
    nlohmann::json j{{"level", r.level},   {"iteration", r.iteration}, {"d_loss", r.d_loss},
                     {"g_adv", r.g_adv},   {"g_rec", r.g_rec},         {"g_sem", r.g_sem},
                     {"gp", r.gp}};
    out << j.dump() << '\n';
  }
  if (peak_memory_bytes > 0 || fault) {
    nlohmann::json j{{"peak_memory_bytes", peak_memory_bytes}};
    if (fault) j["fault"] = *fault;
    out << j.dump() << '\n';
  }
}

// Losses ----------------------------------------------------------------------

torch::Tensor patch_average(const torch::Tensor& scores) {
  return scores.reshape({scores.size(0), -1}).mean(1);
}

CriticLoss wgan_gp_d_loss(const Critic& critic, const torch::Tensor& real,
                          const torch::Tensor& fake, double lambda_gp, const torch::Tensor& mix) {
  if (real.sizes() != fake.sizes()) throw GeometryError("real and fake batches differ in shape");
  const auto n = real.size(0);
  if (mix.numel() != n) throw InvalidInput("one interpolation coefficient per sample required");
  auto d_real = critic(real);
  auto d_fake = critic(fake);

  std::vector<std::int64_t> shape(real.dim(), 1);
  shape[0] = n;
  auto u = mix.to(real.dtype()).reshape(shape);
  auto x_hat = (u * real.detach() + (1.0 - u) * fake.detach()).requires_grad_(true);
  auto score = critic(x_hat);
  torch::Tensor grad;
  if (score.requires_grad()) {
    grad = torch::autograd::grad({score.sum()}, {x_hat}, {}, /*retain_graph=*/true,
                                 /*create_graph=*/true, /*allow_unused=*/true)[0];
  }
  if (!grad.defined()) grad = torch::zeros_like(x_hat);
  auto norms = grad.reshape({n, -1}).norm(2, 1);
  auto gp = (norms - 1.0).pow(2).mean();
  return {d_fake.mean() - d_real.mean() + lambda_gp * gp, gp};
}

torch::Tensor reconstruction_loss(const torch::Tensor& output, const torch::Tensor& target) {
  if (output.sizes() != target.sizes()) throw GeometryError("reconstruction shapes differ");
  return (output - target).pow(2).mean();
}

torch::Tensor semantic_blend_loss(Embedding& phi, const torch::Tensor& generated,
                                  const std::vector<double>& alpha, const torch::Tensor& images) {
  if (static_cast<std::int64_t>(alpha.size()) != images.size(0)) {
    throw InvalidInput("one blend weight per training image required");
  }
  double total = 0.0;
  for (double a : alpha) {
    if (!(a >= 0.0)) throw ValidationError("blend weights must be non-negative");
    total += a;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ValidationError("blend weights must sum to 1");
  auto e_gen = phi.embed(generated);
  auto e_img = phi.embed(images);
  auto w = torch::tensor(alpha, torch::kFloat64).to(e_img.dtype()).unsqueeze(1);
  auto target = (w * e_img).sum(0, /*keepdim=*/true);
  return (e_gen - target).abs().sum(1).mean();
}

std::vector<double> draw_simplex_weights(std::int64_t k, at::Generator& gen) {
  if (k < 1) throw InvalidInput("need at least one weight");
  auto u = torch::rand({k}, gen, torch::kFloat64).clamp_min(1e-300);
  auto e = -torch::log(u);
  e = e / e.sum();
  std::vector<double> out(k);
  for (std::int64_t i = 0; i < k; ++i) out[i] = e[i].item<double>();
  return out;
}

double compute_sigma(const std::vector<torch::Tensor>& upsampled_recs,
                     const std::vector<torch::Tensor>& targets, double sigma_base) {
  if (upsampled_recs.size() != targets.size() || targets.empty()) {
    throw InvalidInput("compute_sigma needs one reconstruction per target");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto a = upsampled_recs[i].to(torch::kFloat64).reshape(targets[i].sizes());
    auto mse = (a - targets[i].to(torch::kFloat64)).pow(2).mean().item<double>();
    sum += std::sqrt(mse);
  }
  return sigma_base * sum / static_cast<double>(targets.size());
}

// Batches ---------------------------------------------------------------------

std::vector<BatchItem> make_batch(int level, const ScalePlan& plan, std::int64_t num_identities,
                                  at::Generator& gen) {
  if (num_identities < 1) throw InvalidInput("need at least one identity");
  const Size2 s = plan.size(level);
  std::vector<BatchItem> items;
  if (!plan.cropped(level)) {
    for (std::int64_t k = 0; k < num_identities; ++k) {
      items.push_back({k, CropWindow{0, 0, s.height, s.width, kScaleHalo}});
    }
    return items;
  }
  const auto side = *plan.crops.at(level);
  const auto ch = std::min(side, s.height);
  const auto cw = std::min(side, s.width);
  for (int rep = 0; rep < 2; ++rep) {
    for (std::int64_t k = 0; k < num_identities; ++k) {
      const auto top = torch::randint(s.height - ch + 1, {1}, gen, torch::kLong).item<std::int64_t>();
      const auto left = torch::randint(s.width - cw + 1, {1}, gen, torch::kLong).item<std::int64_t>();
      items.push_back({k, CropWindow{top, left, ch, cw, kScaleHalo}});
    }
  }
  std::vector<bool> seen(num_identities, false);
  for (const auto& it : items) seen[it.identity] = true;
  for (bool b : seen) {
    if (!b) throw Error("batch is missing an identity");
  }
  return items;
}

torch::Tensor training_identity(const IdentityMap& map, Size2 size) {
  require_categorical(map);
  const auto& t = map.tensor();
  auto first = t.index({torch::indexing::Slice(), 0, 0}).view({-1, 1, 1});
  if (!torch::equal(t, first.expand_as(t))) {
    throw ValidationError("training identity maps must be spatially constant");
  }
  return first.unsqueeze(0).expand({1, map.num_identities(), size.height, size.width}).contiguous();
}

// Reconstruction path ---------------------------------------------------------

torch::Tensor reconstruct_level(const ModelBundle& bundle, std::int64_t k, int level) {
  check_identity(bundle, k);
  if (level < 0 || level > bundle.plan.coarsest()) throw InvalidInput("level out of range");
  RegionGenerator rg(bundle, rec_sources(bundle, k));
  return rg.output(level, full_region(bundle.plan.size(level)));
}

torch::Tensor reconstruction_prev_up(const ModelBundle& bundle, std::int64_t k, int level) {
  check_identity(bundle, k);
  if (level < 0 || level > bundle.plan.coarsest()) throw InvalidInput("level out of range");
  const Size2 s = bundle.plan.size(level);
  if (level == bundle.plan.coarsest()) return torch::zeros({1, 3, s.height, s.width});
  RegionGenerator rg(bundle, rec_sources(bundle, k));
  return rg.prev_up(level, full_region(s));
}

void prepare_level_noise(ModelBundle& bundle, int level) {
  const int coarsest = bundle.plan.coarsest();
  if (level < 0 || level > coarsest) throw InvalidInput("level out of range");
  double sigma = bundle.config.sigma_base;
  if (level < coarsest) {
    std::vector<torch::Tensor> recs;
    std::vector<torch::Tensor> targets;
    for (std::int64_t k = 0; k < bundle.num_identities; ++k) {
      recs.push_back(reconstruction_prev_up(bundle, k, level));
      targets.push_back(bundle.pyramids.at(k).at(level).tensor().unsqueeze(0));
    }
    sigma = compute_sigma(recs, targets, bundle.config.sigma_base);
  }
  bundle.noise.sigma.at(level) = sigma;
  bundle.noise.zrec.at(level) = draw_reconstruction_noise(
      bundle.noise.seed, level, coarsest, bundle.plan.size(level), sigma, bundle.noise.c_rec);
}

// ScaleTrainer ----------------------------------------------------------------

namespace {

struct Inputs {
  torch::Tensor z;
  torch::Tensor prev;
  torch::Tensor id;
};

using AdamState = torch::optim::AdamParamState;

void export_adam(torch::optim::Adam& opt, const torch::nn::Module& m, const std::string& prefix,
                 std::map<std::string, torch::Tensor>& out) {
  auto& state = opt.state();
  for (const auto& p : m.named_parameters(true)) {
    auto it = state.find(p.value().unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const AdamState&>(*it->second);
    const std::string key = prefix + p.key();
    out[key + ".step"] = torch::tensor(s.step(), torch::kLong);
    out[key + ".exp_avg"] = s.exp_avg().clone();
    out[key + ".exp_avg_sq"] = s.exp_avg_sq().clone();
  }
}

void import_adam(torch::optim::Adam& opt, const torch::nn::Module& m, const std::string& prefix,
                 const std::map<std::string, torch::Tensor>& in) {
  auto& state = opt.state();
  for (const auto& p : m.named_parameters(true)) {
    const std::string key = prefix + p.key();
    auto step = in.find(key + ".step");
    if (step == in.end()) continue;
    auto s = std::make_unique<AdamState>();
    s->step(step->second.item<std::int64_t>());
    s->exp_avg(in.at(key + ".exp_avg").clone());
    s->exp_avg_sq(in.at(key + ".exp_avg_sq").clone());
    state[p.value().unsafeGetTensorImpl()] = std::move(s);
  }
}

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

}  // namespace

struct ScaleTrainer::Impl {
  ModelBundle& bundle;
  int level;
  Embedding* embedding;
  const TrainConfig& cfg;
  GeneratorScale g;
  DiscriminatorScale d;
  torch::optim::Adam opt_g;
  torch::optim::Adam opt_d;
  std::vector<torch::Tensor> reals;     // per identity (1,3,h,w)
  std::vector<torch::Tensor> rec_prev;  // per identity (1,3,h,w)

  Impl(ModelBundle& b, int lvl, Embedding* phi)
      : bundle(b),
        level(lvl),
        embedding(phi),
        cfg(b.config),
        g(b.generators.at(lvl)),
        d(b.discriminators.at(lvl)),
        opt_g(g->parameters(),
              torch::optim::AdamOptions(cfg.lr_g).betas({cfg.beta1, cfg.beta2})),
        opt_d(d->parameters(),
              torch::optim::AdamOptions(cfg.lr_d).betas({cfg.beta1, cfg.beta2})) {
    if (cfg.alpha_sem > 0.0 && embedding == nullptr) {
      throw ConfigError("alpha_sem > 0 requires a semantic embedding");
    }
    if (!b.noise.zrec.at(lvl).defined()) prepare_level_noise(b, lvl);
    for (std::int64_t k = 0; k < b.num_identities; ++k) {
      reals.push_back(b.pyramids.at(k).at(lvl).tensor().unsqueeze(0));
      rec_prev.push_back(reconstruction_prev_up(b, k, lvl));
    }
    const auto& saved = b.state.at(lvl).optimizer;
    if (!saved.empty()) {
      import_adam(opt_g, *g, "g.", saved);
      import_adam(opt_d, *d, "d.", saved);
    }
  }

  Size2 size() const { return bundle.plan.size(level); }

  /// Random-noise inputs for items sharing one window, batched.
  Inputs random_group(const std::vector<BatchItem>& items, at::Generator& gen) {
    const auto n = static_cast<std::int64_t>(items.size());
    std::vector<std::int64_t> ids;
    for (const auto& it : items) ids.push_back(it.identity);
    const Region in = core_region(items.front().window).expanded(kScaleHalo);
    const auto num = bundle.num_identities;
    const auto& sigma = bundle.noise.sigma;

    PyramidSources src;
    src.sizes = bundle.plan.sizes;
    src.batch = n;
    src.start_level = bundle.plan.coarsest();
    src.noise = [&](int l, const Region& r) {
      return torch::randn({n, 3, r.height, r.width}, gen, torch::kFloat32) * sigma.at(l);
    };
    src.identity = [&](int, const Region& r) {
      return one_hot_planes(ids, num, r.height, r.width);
    };
    RegionGenerator rg(bundle, src);
    Inputs out;
    out.prev = rg.prev_up(level, in);
    out.z = zero_outside(
        torch::randn({n, 3, in.height, in.width}, gen, torch::kFloat32) * sigma.at(level), in,
        size());
    out.id = one_hot_planes(ids, num, in.height, in.width);
    return out;
  }

  Inputs random_inputs(const std::vector<BatchItem>& items, at::Generator& gen) {
    bool shared = true;
    for (const auto& it : items) {
      shared = shared && core_region(it.window) == core_region(items.front().window);
    }
    if (shared) return random_group(items, gen);
    std::vector<torch::Tensor> z, prev, id;
    for (const auto& it : items) {
      auto one = random_group({it}, gen);
      z.push_back(one.z);
      prev.push_back(one.prev);
      id.push_back(one.id);
    }
    return {torch::cat(z), torch::cat(prev), torch::cat(id)};
  }

  Inputs rec_inputs(const std::vector<BatchItem>& items) {
    std::vector<torch::Tensor> z, prev;
    std::vector<std::int64_t> ids;
    const auto& zrec = bundle.noise.zrec.at(level);
    Region in;
    for (const auto& it : items) {
      in = core_region(it.window).expanded(kScaleHalo);
      z.push_back(extract_region(zrec, in.top, in.left, in.height, in.width));
      prev.push_back(extract_region(rec_prev[it.identity], in.top, in.left, in.height, in.width));
      ids.push_back(it.identity);
    }
    return {torch::cat(z), torch::cat(prev),
            one_hot_planes(ids, bundle.num_identities, in.height, in.width)};
  }

  torch::Tensor real_batch(const std::vector<BatchItem>& items) {
    std::vector<torch::Tensor> out;
    for (const auto& it : items) {
      const auto& w = it.window;
      out.push_back(reals[it.identity]
                        .slice(2, w.top, w.top + w.height)
                        .slice(3, w.left, w.left + w.width));
    }
    return torch::cat(out);
  }

  torch::Tensor semantic_term(const std::vector<BatchItem>& items, at::Generator& gen) {
    const auto alpha = draw_simplex_weights(bundle.num_identities, gen);
    const auto& w = items.front().window;
    const Region in = core_region(w).expanded(kScaleHalo);
    auto blend = torch::tensor(alpha, torch::kFloat64).to(torch::kFloat32).view({1, -1, 1, 1});
    PyramidSources src = rec_sources(bundle, 0);
    src.identity = [&](int, const Region& r) {
      return blend.expand({1, bundle.num_identities, r.height, r.width}).contiguous();
    };
    RegionGenerator rg(bundle, src);
    auto prev = rg.prev_up(level, in);
    auto z = extract_region(bundle.noise.zrec.at(level), in.top, in.left, in.height, in.width);
    auto id = blend.expand({1, bundle.num_identities, in.height, in.width}).contiguous();
    auto out = g->forward(z, prev, id, NormMode::Tracked);
    std::vector<torch::Tensor> imgs;
    for (const auto& r : reals) {
      imgs.push_back(r.slice(2, w.top, w.top + w.height).slice(3, w.left, w.left + w.width));
    }
    return semantic_blend_loss(*embedding, out, alpha, torch::cat(imgs));
  }

  LossRecord step(std::int64_t iteration) {
    LossRecord rec;
    rec.level = level;
    rec.iteration = iteration;
    const auto decay_from = static_cast<std::int64_t>(std::floor(cfg.lr_decay_at * cfg.iterations));
    const double factor = iteration >= decay_from ? cfg.lr_decay : 1.0;
    set_lr(opt_g, cfg.lr_g * factor);
    set_lr(opt_d, cfg.lr_d * factor);

    auto gen = make_generator(cfg.seed, "train", {level, iteration});
    const auto critic = [this](const torch::Tensor& x) {
      return patch_average(d->forward(x, NormMode::Instance));
    };

    for (int s = 0; s < cfg.d_steps; ++s) {
      auto items = make_batch(level, bundle.plan, bundle.num_identities, gen);
      auto real = real_batch(items);
      torch::Tensor fake;
      {
        torch::NoGradGuard no_grad;
        auto in = random_inputs(items, gen);
        fake = g->forward(in.z, in.prev, in.id, NormMode::Batch);
      }
      auto mix = torch::rand({real.size(0)}, gen, torch::kFloat32);
      opt_d.zero_grad();
      auto loss = wgan_gp_d_loss(critic, real, fake, cfg.lambda_gp, mix);
      loss.loss.backward();
      rec.d_loss = loss.loss.item<double>();
      rec.gp = loss.gp.item<double>();
      if (!std::isfinite(rec.d_loss)) {
        throw TrainingFault("non-finite discriminator loss at level " + std::to_string(level) +
                            ", iteration " + std::to_string(iteration));
      }
      opt_d.step();
    }

    for (auto& p : d->parameters()) p.set_requires_grad(false);
    try {
      for (int s = 0; s < cfg.g_steps; ++s) {
        auto items = make_batch(level, bundle.plan, bundle.num_identities, gen);
        opt_g.zero_grad();
        Inputs in;
        {
          torch::NoGradGuard no_grad;
          in = random_inputs(items, gen);
        }
        auto fake = g->forward(in.z, in.prev, in.id, NormMode::Batch);
        auto adv = -patch_average(d->forward(fake, NormMode::Instance)).mean();
        auto ri = rec_inputs(items);
        auto rec_out = g->forward(ri.z, ri.prev, ri.id, NormMode::Update);
        auto rl = reconstruction_loss(rec_out, real_batch(items));
        auto total = adv + cfg.alpha_rec * rl;
        torch::Tensor sem;
        if (cfg.alpha_sem > 0.0) {
          sem = semantic_term(items, gen);
          total = total + cfg.alpha_sem * sem;
        }
        total.backward();
        rec.g_adv = adv.item<double>();
        rec.g_rec = rl.item<double>();
        rec.g_sem = sem.defined() ? sem.item<double>() : 0.0;
        if (!std::isfinite(total.item<double>())) {
          throw TrainingFault("non-finite generator loss at level " + std::to_string(level) +
                              ", iteration " + std::to_string(iteration));
        }
        opt_g.step();
      }
    } catch (...) {
      for (auto& p : d->parameters()) p.set_requires_grad(true);
      throw;
    }
    for (auto& p : d->parameters()) p.set_requires_grad(true);

    for (const auto& p : g->parameters()) {
      if (!finite(p)) throw TrainingFault("generator parameters diverged at level " + std::to_string(level));
    }
    bundle.state.at(level).iterations_done = iteration + 1;
    return rec;
  }

  void finish() {
    auto& st = bundle.state.at(level);
    st.optimizer.clear();
    export_adam(opt_g, *g, "g.", st.optimizer);
    export_adam(opt_d, *d, "d.", st.optimizer);
  }
};

ScaleTrainer::ScaleTrainer(ModelBundle& bundle, int level, Embedding* embedding) {
  if (level < 0 || level > bundle.plan.coarsest()) throw InvalidInput("level out of range");
  impl_ = std::make_unique<Impl>(bundle, level, embedding);
}
ScaleTrainer::~ScaleTrainer() = default;
LossRecord ScaleTrainer::step(std::int64_t iteration) { return impl_->step(iteration); }
void ScaleTrainer::finish() { impl_->finish(); }

// Drivers ---------------------------------------------------------------------

void apply_threading(const TrainConfig& config) {
  if (config.deterministic) {
    torch::set_num_threads(1);
  } else if (config.threads > 0) {
    torch::set_num_threads(config.threads);
  }
}

LossReport train_scale(int level, ModelBundle& bundle, const TrainHooks& hooks) {
  const int coarsest = bundle.plan.coarsest();
  if (level < 0 || level > coarsest) throw InvalidInput("level out of range");
  for (int l = level + 1; l <= coarsest; ++l) {
    if (!bundle.level_trained(l)) {
      throw InvalidInput("level " + std::to_string(l) + " must be trained before level " +
                         std::to_string(level));
    }
  }
  apply_threading(bundle.config);
  LossReport report;
  auto& st = bundle.state.at(level);
  const std::int64_t total = bundle.config.iterations;
  if (std::isnan(bundle.noise.sigma.at(level)) || !bundle.noise.zrec.at(level).defined()) {
    prepare_level_noise(bundle, level);
  }
  if (st.iterations_done >= total) {
    st.trained = true;
    if (hooks.on_level_done) hooks.on_level_done(bundle, level);
    return report;
  }
  if (st.iterations_done == 0 && level < coarsest &&
      bundle.generators[level]->channels() == bundle.generators[level + 1]->channels()) {
    copy_state(*bundle.generators[level + 1], *bundle.generators[level]);
    copy_state(*bundle.discriminators[level + 1], *bundle.discriminators[level]);
  }

  ScaleTrainer trainer(bundle, level, hooks.embedding.get());
  const std::int64_t every = std::max<std::int64_t>(1, total / 10);
  for (std::int64_t it = st.iterations_done; it < total; ++it) {
    try {
      LossRecord rec;
      const auto peak = memory_profile([&] { rec = trainer.step(it); });
      report.records.push_back(rec);
      report.peak_memory_bytes = std::max(report.peak_memory_bytes, peak);
    } catch (const TrainingFault& e) {
      report.fault = e.what();
      throw;
    }
    if (hooks.verbose && ((it + 1) % every == 0 || it + 1 == total)) {
      const auto& r = report.records.back();
      std::cerr << "level " << level << " iter " << it + 1 << "/" << total << " d=" << r.d_loss
                << " adv=" << r.g_adv << " rec=" << r.g_rec << " gp=" << r.gp << '\n';
    }
  }
  trainer.finish();
  st.trained = true;
  if (hooks.on_level_done) hooks.on_level_done(bundle, level);
  return report;
}

void train_bundle(ModelBundle& bundle, const TrainHooks& hooks, LossReport* report) {
  for (int level = bundle.plan.coarsest(); level >= 0; --level) {
    if (bundle.level_trained(level)) continue;
    try {
      auto r = train_scale(level, bundle, hooks);
      if (report) {
        report->records.insert(report->records.end(), r.records.begin(), r.records.end());
        report->peak_memory_bytes = std::max(report->peak_memory_bytes, r.peak_memory_bytes);
      }
    } catch (const TrainingFault& e) {
      if (report) report->fault = e.what();
      throw;
    }
  }
}

ModelBundle train_all(const std::vector<TrainingImage>& images, const TrainConfig& config,
                      const TrainHooks& hooks, LossReport* report) {
  auto bundle = make_bundle(images, config);
  train_bundle(bundle, hooks, report);
  return bundle;
}

}  // namespace blendgan
