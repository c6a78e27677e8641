#include "blendgan/checkpoint.hpp"
#include "blendgan/config.hpp"
#include "blendgan/errors.hpp"
#include "blendgan/experiments.hpp"
#include "blendgan/image_io.hpp"
#include "blendgan/inference.hpp"
#include "blendgan/metrics.hpp"
#include "blendgan/service.hpp"
#include "blendgan/training.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>
#include <torch/torch.h>

namespace py = pybind11;
using namespace blendgan;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using Bundle = std::shared_ptr<ModelBundle>;

Array to_numpy(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat32).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  Array out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<float>(), c.numel() * sizeof(float));
  return out;
}

torch::Tensor from_numpy(const Array& a) {
  std::vector<std::int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<float*>(a.data()), shape, torch::kFloat32).clone();
}

ImageBuffer image_from(const Array& a) {
  if (a.ndim() != 3 || a.shape(0) != 3) throw py::value_error("image must have shape (3, H, W)");
  return ImageBuffer(from_numpy(a));
}

TrainConfig config_from(const std::map<std::string, std::string>& values) {
  TrainConfig c;
  for (const auto& [k, v] : values) set_config_value(c, k, v);
  c.validate();
  return c;
}

std::optional<Size2> size_from(const std::optional<std::pair<std::int64_t, std::int64_t>>& s) {
  if (!s) return std::nullopt;
  return Size2{s->first, s->second};
}

}  // namespace

PYBIND11_MODULE(_blendgan, m) {
  m.doc() = "Identity-conditioned multi-image generative models";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NotFound>(m, "NotFound", PyExc_FileNotFoundError);

  py::class_<ModelBundle, Bundle>(m, "Bundle")
      .def_readonly("num_identities", &ModelBundle::num_identities)
      .def_property_readonly("num_levels", &ModelBundle::num_levels)
      .def_property_readonly("sizes",
                             [](const ModelBundle& b) {
                               std::vector<std::pair<std::int64_t, std::int64_t>> out;
                               for (const auto& s : b.plan.sizes) out.emplace_back(s.height, s.width);
                               return out;
                             })
      .def_property_readonly("sigma", [](const ModelBundle& b) { return b.noise.sigma; })
      .def_property_readonly("config", [](const ModelBundle& b) { return config_to_json(b.config).dump(); })
      .def("image", [](const ModelBundle& b, std::int64_t k) { return to_numpy(b.images.at(k).image.tensor()); })
      .def("trained", &ModelBundle::level_trained);

  m.def("config_keys", &config_keys);
  m.def("load_image", [](const std::string& path) { return to_numpy(load_image(path).tensor()); });

  m.def(
      "make_bundle",
      [](const std::vector<Array>& images, const std::map<std::string, std::string>& config) {
        std::vector<TrainingImage> imgs;
        for (std::size_t i = 0; i < images.size(); ++i) {
          imgs.push_back({"array" + std::to_string(i), image_from(images[i])});
        }
        return std::make_shared<ModelBundle>(make_bundle(imgs, config_from(config)));
      },
      py::arg("images"), py::arg("config") = std::map<std::string, std::string>{});
  m.def(
      "train",
      [](Bundle b, const std::optional<std::filesystem::path>& checkpoint_dir) {
        TrainHooks hooks;
        if (checkpoint_dir) {
          hooks.on_level_done = [&](const ModelBundle& bb, int) { save_bundle(bb, *checkpoint_dir); };
        }
        LossReport report;
        {
          py::gil_scoped_release release;
          train_bundle(*b, hooks, &report);
        }
        std::vector<std::map<std::string, double>> out;
        for (const auto& r : report.records) {
          out.push_back({{"level", r.level},
                         {"iteration", static_cast<double>(r.iteration)},
                         {"d_loss", r.d_loss},
                         {"g_adv", r.g_adv},
                         {"g_rec", r.g_rec},
                         {"g_sem", r.g_sem},
                         {"gp", r.gp}});
        }
        return out;
      },
      py::arg("bundle"), py::arg("checkpoint_dir") = std::nullopt,
      "Trains every untrained level; returns one loss record per iteration.");
  m.def("save_bundle", [](const Bundle& b, const std::filesystem::path& dir) { save_bundle(*b, dir); });
  m.def("load_bundle", [](const std::filesystem::path& dir) {
    return std::make_shared<ModelBundle>(load_bundle(dir));
  });

  m.def(
      "sample",
      [](const Bundle& b, std::int64_t k, std::uint64_t seed,
         std::optional<std::pair<std::int64_t, std::int64_t>> size) {
        const auto s = size_from(size).value_or(b->plan.size(0));
        return to_numpy(sample(*b, constant_id(k, b->num_identities, s), s, seed).tensor());
      },
      py::arg("bundle"), py::arg("k") = 0, py::arg("seed") = 0, py::arg("size") = std::nullopt);
  m.def(
      "generate",
      [](const Bundle& b, const std::vector<double>& weights, std::uint64_t seed,
         bool reconstruction_noise, std::optional<std::pair<std::int64_t, std::int64_t>> size) {
        GenerationRequest req;
        const auto s = size_from(size).value_or(b->plan.size(0));
        req.schedule = IdentitySchedule(blend_constant(weights, s), b->num_levels());
        req.size = s;
        req.seed = seed;
        if (reconstruction_noise) req.reconstruction.push_back({});
        return to_numpy(generate(*b, req).tensor());
      },
      py::arg("bundle"), py::arg("weights"), py::arg("seed") = 0,
      py::arg("reconstruction_noise") = false, py::arg("size") = std::nullopt);
  m.def("reconstruct", [](const Bundle& b, std::int64_t k) { return to_numpy(reconstruct(*b, k).tensor()); });
  m.def(
      "morph",
      [](const Bundle& b, const std::vector<std::vector<double>>& weights, bool random_noise,
         std::uint64_t seed) {
        std::vector<Array> out;
        for (const auto& f : morph(*b, weights, random_noise ? NoiseMode::Random : NoiseMode::Reconstruction, seed)) {
          out.push_back(to_numpy(f.tensor()));
        }
        return out;
      },
      py::arg("bundle"), py::arg("weights"), py::arg("random_noise") = false, py::arg("seed") = 0);
  m.def(
      "meld",
      [](const Bundle& b, const std::vector<std::int64_t>& anchors, std::int64_t width,
         double transition, std::uint64_t seed) {
        auto r = meld(*b, anchors, width, transition, seed);
        return py::make_tuple(to_numpy(r.image.tensor()), r.anchor_columns);
      },
      py::arg("bundle"), py::arg("anchors"), py::arg("width"), py::arg("transition") = 1.0 / 3.0,
      py::arg("seed") = 0);

  m.def("frechet_distance", [](const Array& mu_a, const Array& cov_a, const Array& mu_b, const Array& cov_b) {
    return frechet_distance({from_numpy(mu_a), from_numpy(cov_a)}, {from_numpy(mu_b), from_numpy(cov_b)});
  });
  m.def(
      "sifid",
      [](const Array& real, const Array& fake) {
        StubExtractor e;
        return sifid(image_from(real), image_from(fake), e);
      },
      "SIFID with the built-in random-projection extractor.");
  m.def("diversity", [](const std::vector<Array>& samples, const Array& reference) {
    std::vector<ImageBuffer> s;
    for (const auto& a : samples) s.push_back(image_from(a));
    return diversity(s, image_from(reference));
  });
  m.def("psnr", [](const Array& a, const Array& b) { return psnr(image_from(a), image_from(b)); });
  m.def("spearman", &spearman);

  m.def(
      "serve_request",
      [](const std::filesystem::path& root, const std::string& method, const std::string& path,
         const std::string& body) {
        InferenceService service(root);
        auto r = service.handle(method, path, body);
        return py::make_tuple(r.status, py::bytes(r.body));
      },
      py::arg("root"), py::arg("method"), py::arg("path"), py::arg("body") = "",
      "Runs one request through the HTTP handler without opening a socket.");
}
