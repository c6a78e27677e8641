// blendgan: train, sample and serve multi-image identity-conditioned models.

#include "blendgan/checkpoint.hpp"
#include "blendgan/config.hpp"
#include "blendgan/errors.hpp"
#include "blendgan/experiments.hpp"
#include "blendgan/image_io.hpp"
#include "blendgan/inference.hpp"
#include "blendgan/metrics.hpp"
#include "blendgan/niqe.hpp"
#include "blendgan/rng.hpp"
#include "blendgan/service.hpp"
#include "blendgan/training.hpp"

#include "CLI11.hpp"
#include <torch/torch.h>

#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace blendgan;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string device = "cpu";
  std::vector<std::string> overrides;  // key=value
  std::optional<int> iterations;
};

TrainConfig resolve_config(const Globals& g) {
  TrainConfig c;
  if (!g.config.empty()) c = load_config(g.config);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.iterations) c.iterations = *g.iterations;
  if (g.seed) c.seed = *g.seed;
  c.validate();
  return c;
}

Size2 parse_size(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw InvalidInput("size must look like HxW, got '" + s + "'");
  return {std::stoll(s.substr(0, x)), std::stoll(s.substr(x + 1))};
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / name;
}

void write_png(const Globals& g, const std::string& name, const ImageBuffer& img) {
  const auto p = out_path(g, name);
  save_png(p, img);
  std::cout << p.string() << '\n';
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& path) {
  if (path.empty()) return std::make_unique<StubExtractor>();
  return std::make_unique<TorchScriptExtractor>(path);
}

std::optional<NiqeModel> maybe_niqe(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return NiqeModel::load(path);
}

/// Random smooth texture used when no image is given.
ImageBuffer synthetic_image(std::int64_t side, std::uint64_t seed) {
  auto gen = make_generator(seed, "synthetic");
  auto coarse = torch::rand({3, 8, 8}, gen) * 2 - 1;
  auto fine = resample_tensor(coarse, {side, side}, Kernel::Bicubic);
  return ImageBuffer(fine + 0.1 * torch::randn({3, side, side}, gen));
}

IdentityMap load_id_map(const std::string& path, std::int64_t k) {
  auto m = decode_id_map(read_file(path), k);
  if (m.num_identities() != k) {
    throw ValidationError(path + " has " + std::to_string(m.num_identities()) +
                          " identities, model has " + std::to_string(k));
  }
  return m;
}

std::vector<double> parse_weights(const std::string& s) {
  std::vector<double> w;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) w.push_back(std::stod(item));
  return w;
}

NoiseMode noise_mode(const std::string& s) {
  if (s == "random") return NoiseMode::Random;
  if (s == "reconstruction") return NoiseMode::Reconstruction;
  throw InvalidInput("noise must be random or reconstruction");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-image generative model toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "RNG seed (training and generation)");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_option("--device", g.device, "Compute device")->check(CLI::IsMember({"cpu"}));
  app.add_option("--set", g.overrides, "Override a config field (key=value)");
  app.add_option("--iterations", g.iterations, "Iterations per scale");

  std::string bundle_dir;
  std::int64_t id = 0;
  int n = 1;
  std::string size_text;
  std::string noise = "random";
  std::string extractor_path;
  std::string niqe_path;

  auto* train = app.add_subcommand("train", "Train a model on one or more images");
  std::vector<std::string> images;
  std::string project_id;
  bool verbose = false;
  train->add_option("--images", images, "Training images")->required()->check(CLI::ExistingFile);
  train->add_option("--project-id", project_id);
  train->add_flag("--resume", "Continue a partially trained bundle in --out-dir");
  train->add_flag("-v,--verbose", verbose);

  auto* sample_cmd = app.add_subcommand("sample", "Draw random samples");
  std::string weights_text;
  std::string id_map_path;
  sample_cmd->add_option("--bundle", bundle_dir)->required();
  sample_cmd->add_option("--id", id, "Identity index");
  sample_cmd->add_option("--blend", weights_text, "Comma separated identity weights");
  sample_cmd->add_option("--id-map", id_map_path, "Indexed PNG or BGID raster");
  sample_cmd->add_option("--size", size_text, "Output size HxW");
  sample_cmd->add_option("-n,--n", n, "Number of samples");

  auto* rec_cmd = app.add_subcommand("reconstruct", "Reconstruct a training image");
  rec_cmd->add_option("--bundle", bundle_dir)->required();
  rec_cmd->add_option("--id", id);

  auto* meld_cmd = app.add_subcommand("meld", "Horizontal transition between identities");
  std::vector<std::int64_t> anchors{0, 1};
  std::int64_t width = 0;
  double transition = 1.0 / 3.0;
  meld_cmd->add_option("--bundle", bundle_dir)->required();
  meld_cmd->add_option("--anchors", anchors)->delimiter(',');
  meld_cmd->add_option("--width", width, "Output width (default: trained width)");
  meld_cmd->add_option("--transition", transition, "Width fraction per transition");

  auto* morph_cmd = app.add_subcommand("morph", "Frames along identity weights");
  std::vector<std::string> frames;
  morph_cmd->add_option("--bundle", bundle_dir)->required();
  morph_cmd->add_option("--weights", frames,
                        "Per frame: t for two identities, or a:b:... weight vectors")
      ->delimiter(',')
      ->required();
  morph_cmd->add_option("--noise", noise)->check(CLI::IsMember({"random", "reconstruction"}));

  auto* fuse_cmd = app.add_subcommand("fuse", "Structure from one identity, texture from another");
  std::int64_t structure = 0, texture = 1;
  int level = -1;
  fuse_cmd->add_option("--bundle", bundle_dir)->required();
  fuse_cmd->add_option("--structure", structure);
  fuse_cmd->add_option("--texture", texture);
  fuse_cmd->add_option("--level", level, "Transition scale");
  fuse_cmd->add_option("--noise", noise)->check(CLI::IsMember({"random", "reconstruction"}));

  auto* spatial_cmd = app.add_subcommand("spatial", "Generate under a categorical mask");
  std::string mask_path, faithful_path;
  spatial_cmd->add_option("--bundle", bundle_dir)->required();
  spatial_cmd->add_option("--mask", mask_path)->required()->check(CLI::ExistingFile);
  spatial_cmd->add_option("--faithful", faithful_path, "Mask of pixels driven by z^rec")
      ->check(CLI::ExistingFile);

  auto* edit_cmd = app.add_subcommand("edit", "Harmonize an edited image");
  std::string edited_path;
  edit_cmd->add_option("--bundle", bundle_dir)->required();
  edit_cmd->add_option("--image", edited_path)->required()->check(CLI::ExistingFile);
  edit_cmd->add_option("--id", id);
  edit_cmd->add_option("--level", level, "Injection scale");

  auto* eval_cmd = app.add_subcommand("eval", "Diversity, SIFID and NIQE over samples");
  int eval_n = 50;
  eval_cmd->add_option("--bundle", bundle_dir)->required();
  eval_cmd->add_option("--id", id);
  eval_cmd->add_option("-n,--n", eval_n);
  eval_cmd->add_option("--extractor", extractor_path, "TorchScript feature extractor");
  eval_cmd->add_option("--niqe-model", niqe_path, "NIQE model file");

  auto* mem_cmd = app.add_subcommand("bench-memory", "Peak training-step memory vs image size");
  std::vector<std::int64_t> sides{128, 256, 512};
  std::vector<std::int64_t> crops{0, 128};
  std::string image_path;
  mem_cmd->add_option("--sides", sides)->delimiter(',');
  mem_cmd->add_option("--crops", crops, "Crop windows (0 = none)")->delimiter(',');
  mem_cmd->add_option("--image", image_path)->check(CLI::ExistingFile);

  auto* exp_cmd = app.add_subcommand("experiment", "Analysis experiments");
  exp_cmd->require_subcommand(1);
  int num_crops = 5;
  double overlap = 0.5;
  int samples = 50;
  std::vector<std::int64_t> ks{1, 2};
  std::vector<std::int64_t> channels{16, 32};
  auto* pano = exp_cmd->add_subcommand("panorama", "SIFID vs distance between crops");
  pano->add_option("--image", image_path)->required()->check(CLI::ExistingFile);
  pano->add_option("--crops", num_crops);
  pano->add_option("--overlap", overlap);
  pano->add_option("--samples", samples);
  pano->add_option("--extractor", extractor_path);
  auto* cap = exp_cmd->add_subcommand("capacity", "SIFID vs number of images and width");
  cap->add_option("--images", images)->required()->check(CLI::ExistingFile);
  cap->add_option("--ks", ks)->delimiter(',');
  cap->add_option("--channels", channels)->delimiter(',');
  cap->add_option("--samples", samples);
  cap->add_option("--extractor", extractor_path);
  auto* crop_exp = exp_cmd->add_subcommand("cropping", "Vanilla vs cropped training");
  crop_exp->add_option("--image", image_path)->required()->check(CLI::ExistingFile);
  crop_exp->add_option("--samples", samples);
  crop_exp->add_option("--extractor", extractor_path);
  crop_exp->add_option("--niqe-model", niqe_path);

  auto* serve_cmd = app.add_subcommand("serve", "HTTP inference service");
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t cache = 4;
  serve_cmd->add_option("--root", bundle_dir, "Bundle directory or directory of bundles")
      ->required()
      ->check(CLI::ExistingDirectory);
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--port", port);
  serve_cmd->add_option("--cache", cache, "Loaded models kept in memory");

  CLI11_PARSE(app, argc, argv);

  try {
    const std::uint64_t seed = g.seed.value_or(0);
    auto load = [&] {
      auto b = load_bundle(bundle_dir);
      apply_threading(b.config);
      return b;
    };

    if (*train) {
      const auto cfg = resolve_config(g);
      ModelBundle b;
      if (train->count("--resume") && is_bundle_dir(g.out_dir)) {
        b = load_bundle(g.out_dir);
      } else {
        std::vector<TrainingImage> imgs;
        for (const auto& p : images) imgs.push_back({p, load_image(p)});
        b = make_bundle(imgs, cfg);
      }
      TrainHooks hooks;
      hooks.verbose = verbose;
      hooks.on_level_done = [&](const ModelBundle& bb, int lvl) {
        save_bundle(bb, g.out_dir, project_id);
        if (verbose) std::cerr << "saved level " << lvl << " to " << g.out_dir << '\n';
      };
      save_bundle(b, g.out_dir, project_id);
      LossReport report;
      try {
        train_bundle(b, hooks, &report);
      } catch (const TrainingFault&) {
        std::ofstream log(out_path(g, "losses.ndjson"));
        report.write_ndjson(log);
        throw;
      }
      std::ofstream log(out_path(g, "losses.ndjson"));
      report.write_ndjson(log);
      std::cout << fs::path(g.out_dir).string() << '\n';
    } else if (*sample_cmd) {
      const auto b = load();
      const Size2 size = size_text.empty() ? b.plan.size(0) : parse_size(size_text);
      IdentityMap map;
      if (!id_map_path.empty()) map = load_id_map(id_map_path, b.num_identities);
      else if (!weights_text.empty()) map = blend_constant(parse_weights(weights_text), size);
      else map = constant_id(id, b.num_identities, size);
      for (int i = 0; i < n; ++i) {
        GenerationRequest req;
        req.schedule = IdentitySchedule(map, b.num_levels());
        req.size = size;
        req.seed = seed + static_cast<std::uint64_t>(i);
        write_png(g, "sample_" + std::to_string(i) + ".png", generate(b, req));
      }
    } else if (*rec_cmd) {
      const auto b = load();
      write_png(g, "reconstruct_" + std::to_string(id) + ".png", reconstruct(b, id));
    } else if (*meld_cmd) {
      const auto b = load();
      auto r = meld(b, anchors, width > 0 ? width : b.plan.size(0).width, transition, seed);
      write_png(g, "meld.png", r.image);
      write_file(out_path(g, "meld_id.bgid"), encode_id_raster(r.id_map));
    } else if (*morph_cmd) {
      const auto b = load();
      std::vector<std::vector<double>> seq;
      for (const auto& f : frames) {
        if (f.find(':') == std::string::npos) {
          const double t = std::stod(f);
          if (b.num_identities != 2) throw ValidationError("scalar morph weights need K = 2");
          seq.push_back({1.0 - t, t});
        } else {
          auto w = f;
          std::replace(w.begin(), w.end(), ':', ',');
          seq.push_back(parse_weights(w));
        }
      }
      const auto out = morph(b, seq, noise_mode(noise), seed);
      for (std::size_t i = 0; i < out.size(); ++i) {
        write_png(g, "morph_" + std::to_string(i) + ".png", out[i]);
      }
    } else if (*fuse_cmd) {
      const auto b = load();
      const int lvl = level >= 0 ? level : default_inject_level(b.plan);
      write_png(g, "fuse.png", fuse(b, structure, texture, lvl, seed, noise_mode(noise)));
    } else if (*spatial_cmd) {
      const auto b = load();
      const auto map = load_id_map(mask_path, b.num_identities);
      torch::Tensor faithful;
      if (!faithful_path.empty()) {
        const auto m = decode_indexed_png(read_file(faithful_path));
        faithful = torch::tensor(m.indices, torch::kUInt8).view({m.height, m.width}).ne(0).to(torch::kFloat32);
      }
      write_png(g, "spatial.png", spatial_sample(b, map, faithful, seed));
    } else if (*edit_cmd) {
      const auto b = load();
      const int lvl = level >= 0 ? level : default_inject_level(b.plan);
      write_png(g, "edit.png",
                edit(b, load_image(edited_path), lvl, constant_id(id, b.num_identities, b.plan.size(0)),
                     seed));
    } else if (*eval_cmd) {
      const auto b = load();
      auto extractor = make_extractor(extractor_path);
      const auto niqe_model = maybe_niqe(niqe_path);
      const auto map = constant_id(id, b.num_identities, b.plan.size(0));
      std::vector<ImageBuffer> outs;
      for (int i = 0; i < eval_n; ++i) outs.push_back(sample(b, map, std::nullopt, seed + i));
      const auto report = evaluate_samples(outs, b.images.at(id).image, *extractor,
                                           niqe_model ? &*niqe_model : nullptr);
      std::ofstream csv(out_path(g, "metrics_id" + std::to_string(id) + ".csv"));
      report.write_csv(csv);
      report.write_csv(std::cout);
    } else if (*mem_cmd) {
      auto cfg = resolve_config(g);
      // fixed width so the curve reflects image size only
      if (g.config.empty() && g.overrides.empty()) {
        cfg.channel_base = 16;
        cfg.channel_cap = 16;
      }
      const auto img = image_path.empty() ? synthetic_image(*std::max_element(sides.begin(), sides.end()), seed)
                                          : load_image(image_path);
      const auto points = memory_curve(img, sides, crops, cfg);
      std::ofstream csv(out_path(g, "memory.csv"));
      write_memory_csv(csv, points);
      write_memory_csv(std::cout, points);
    } else if (*exp_cmd) {
      const auto cfg = resolve_config(g);
      auto extractor = make_extractor(extractor_path);
      if (*pano) {
        const auto curve = panorama_experiment(load_image(image_path), num_crops, overlap, cfg,
                                               *extractor, samples);
        std::ofstream csv(out_path(g, "panorama.csv"));
        write_panorama_csv(csv, curve);
        write_panorama_csv(std::cout, curve);
      } else if (*cap) {
        std::vector<ImageBuffer> imgs;
        for (const auto& p : images) imgs.push_back(load_image(p));
        const auto rows = capacity_experiment(imgs, ks, channels, cfg, *extractor, samples);
        std::ofstream csv(out_path(g, "capacity.csv"));
        write_capacity_csv(csv, rows);
        write_capacity_csv(std::cout, rows);
      } else {
        const auto niqe_model = maybe_niqe(niqe_path);
        const auto rows = cropping_experiment(load_image(image_path), cfg, *extractor, samples,
                                              niqe_model ? &*niqe_model : nullptr);
        std::ofstream csv(out_path(g, "cropping.csv"));
        write_cropping_csv(csv, rows);
        write_cropping_csv(std::cout, rows);
      }
    } else if (*serve_cmd) {
      InferenceService service(bundle_dir, cache);
      std::cerr << "serving " << bundle_dir << " on http://" << host << ':' << port << '\n';
      service.run(host, port);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
