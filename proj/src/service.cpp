#include "blendgan/service.hpp"

#include "blendgan/checkpoint.hpp"
#include "blendgan/errors.hpp"
#include "blendgan/identity_maps.hpp"
#include "blendgan/image_io.hpp"
#include "blendgan/inference.hpp"

#include "httplib.h"
#include <torch/torch.h>

#include <chrono>
#include <regex>

namespace blendgan {
namespace fs = std::filesystem;
using nlohmann::json;

// ModelStore ------------------------------------------------------------------

ModelStore::ModelStore(fs::path root, std::size_t capacity)
    : root_(std::move(root)), capacity_(std::max<std::size_t>(1, capacity)) {}

std::vector<std::string> ModelStore::ids() const {
  std::vector<std::string> out;
  if (is_bundle_dir(root_)) {
    out.push_back(root_.filename().string());
    return out;
  }
  if (!fs::is_directory(root_)) return out;
  for (const auto& e : fs::directory_iterator(root_)) {
    if (e.is_directory() && is_bundle_dir(e.path())) out.push_back(e.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

fs::path ModelStore::dir_for(const std::string& id) const {
  if (is_bundle_dir(root_) && root_.filename().string() == id) return root_;
  if (id.empty() || id.find('/') != std::string::npos || id == "." || id == "..") {
    throw NotFound("unknown model '" + id + "'");
  }
  auto dir = root_ / id;
  if (!is_bundle_dir(dir)) throw NotFound("unknown model '" + id + "'");
  return dir;
}

std::shared_ptr<const ModelBundle> ModelStore::get(const std::string& id) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto it = lru_.begin(); it != lru_.end(); ++it) {
      if (it->first == id) {
        lru_.splice(lru_.begin(), lru_, it);
        return lru_.front().second;
      }
    }
  }
  auto bundle = std::make_shared<const ModelBundle>(load_bundle(dir_for(id)));
  std::lock_guard<std::mutex> lock(mu_);
  for (const auto& e : lru_) {
    if (e.first == id) return e.second;
  }
  lru_.emplace_front(id, bundle);
  while (lru_.size() > capacity_) lru_.pop_back();
  return bundle;
}

std::size_t ModelStore::cached() const {
  std::lock_guard<std::mutex> lock(mu_);
  return lru_.size();
}

// Request parsing ---------------------------------------------------------------

namespace {

ServiceResponse json_response(int status, const json& j) {
  ServiceResponse r;
  r.status = status;
  r.body = j.dump();
  r.headers["Content-Type"] = "application/json";
  return r;
}

ServiceResponse error_response(int status, const std::string& kind, const std::string& msg) {
  return json_response(status, {{"error", msg}, {"kind", kind}});
}

Size2 parse_size(const json& body, Size2 fallback) {
  if (!body.contains("size")) return fallback;
  const auto& s = body.at("size");
  if (s.is_array() && s.size() == 2) return {s[0].get<std::int64_t>(), s[1].get<std::int64_t>()};
  if (s.is_object()) return {s.at("height").get<std::int64_t>(), s.at("width").get<std::int64_t>()};
  throw InvalidInput("size must be [height, width]");
}

/// (H,W) plane, nonzero where set, from an indexed or gray PNG.
torch::Tensor decode_mask_plane(const std::string& b64) {
  const auto img = decode_indexed_png(base64_decode(b64));
  auto t = torch::from_blob(const_cast<std::uint8_t*>(img.indices.data()), {img.height, img.width},
                            torch::kUInt8);
  return (t != 0).to(torch::kFloat32).clone();
}

IdentityMap parse_id_map(const json& spec, std::int64_t k, Size2 size) {
  const auto kind = spec.value("kind", std::string("constant"));
  if (kind == "constant") return constant_id(spec.value("k", std::int64_t{0}), k, size);
  if (kind == "blend") {
    auto m = blend_constant(spec.at("weights").get<std::vector<double>>(), size);
    if (m.num_identities() != k) {
      throw ValidationError("blend weights need " + std::to_string(k) + " entries");
    }
    return m;
  }
  if (kind == "ramp") {
    const auto axis = spec.value("axis", std::string("horizontal")) == "vertical"
                          ? Axis::Vertical
                          : Axis::Horizontal;
    auto two = ramp_id(axis, spec.value("a", 1.0 / 3.0), spec.value("b", 2.0 / 3.0), size);
    const auto from = spec.value("from", std::int64_t{0});
    const auto to = spec.value("to", std::int64_t{1});
    if (from < 0 || from >= k || to < 0 || to >= k) throw ValidationError("ramp identity out of range");
    auto w = torch::zeros({k, size.height, size.width});
    w[from] += two.tensor()[0];
    w[to] += two.tensor()[1];
    return IdentityMap::from_tensor(w);
  }
  if (kind == "mask") {
    if (spec.contains("masks")) {
      std::vector<torch::Tensor> masks;
      for (const auto& m : spec.at("masks")) masks.push_back(decode_mask_plane(m.get<std::string>()) != 0);
      if (static_cast<std::int64_t>(masks.size()) != k) {
        throw ValidationError("mask payload needs one mask per identity (" + std::to_string(k) + ")");
      }
      return mask_id(masks);
    }
    auto m = decode_id_map(base64_decode(spec.at("data").get<std::string>()), k);
    if (m.num_identities() != k) {
      throw ValidationError("mask has " + std::to_string(m.num_identities()) +
                            " identities, model has " + std::to_string(k));
    }
    return m;
  }
  throw InvalidInput("unknown id_map kind '" + kind + "'");
}

IdentitySchedule parse_schedule(const json& body, const ModelBundle& b, Size2 size) {
  if (body.contains("schedule")) {
    const auto& s = body.at("schedule");
    if (!s.is_array() || static_cast<int>(s.size()) != b.num_levels()) {
      throw InvalidInput("schedule needs one id_map per scale (" + std::to_string(b.num_levels()) + ")");
    }
    std::vector<IdentityMap> maps;
    for (const auto& m : s) maps.push_back(parse_id_map(m, b.num_identities, size));
    return IdentitySchedule(std::move(maps));
  }
  return IdentitySchedule(parse_id_map(body.value("id_map", json::object()), b.num_identities, size),
                          b.num_levels());
}

std::vector<RecPlacement> parse_noise(const json& body) {
  const auto mode = body.value("noise", std::string("random"));
  if (mode == "random") return {};
  if (mode == "reconstruction") return {RecPlacement{}};
  if (mode == "mixed") {
    RecPlacement p;
    const auto& m = body.at("noise_mask");
    p.mask = decode_mask_plane(m.is_string() ? m.get<std::string>() : m.at("data").get<std::string>());
    return {p};
  }
  throw InvalidInput("noise must be random, reconstruction or mixed");
}

std::string png_b64(const ImageBuffer& img) { return base64_encode(encode_png(img)); }

}  // namespace

// InferenceService -----------------------------------------------------------

InferenceService::InferenceService(fs::path root, std::size_t cache_size)
    : store_(std::move(root), cache_size) {}

InferenceService::~InferenceService() { stop(); }

ServiceResponse InferenceService::list_models() {
  json out = json::array();
  for (const auto& id : store_.ids()) {
    auto b = store_.get(id);
    json thumbs = json::array();
    for (const auto& img : b->images) thumbs.push_back(png_b64(img.image));
    out.push_back({{"model_id", id},
                   {"K", b->num_identities},
                   {"scales", b->num_levels()},
                   {"size", {b->plan.size(0).height, b->plan.size(0).width}},
                   {"thumbnails", thumbs}});
  }
  return json_response(200, out);
}

ServiceResponse InferenceService::generate(const std::string& id, const json& body) {
  if (!body.is_object()) throw InvalidInput("request body must be a JSON object");
  const auto bundle = store_.get(id);
  const auto& b = *bundle;
  const auto t0 = std::chrono::steady_clock::now();
  const auto mode = body.value("mode", std::string("sample"));
  const auto seed = body.value("seed", std::uint64_t{0});
  const Size2 size = parse_size(body, b.plan.size(0));
  ImageBuffer image;

  if (mode == "morph") return morph(id, body);
  if (mode == "sample") {
    GenerationRequest req;
    req.schedule = parse_schedule(body, b, size);
    req.size = size;
    req.seed = seed;
    req.reconstruction = parse_noise(body);
    image = blendgan::generate(b, req);
  } else if (mode == "meld") {
    const auto anchors = body.value("anchors", std::vector<std::int64_t>{0, 1});
    image = meld(b, anchors, body.value("width", size.width), body.value("transition", 1.0 / 3.0),
                 seed)
                .image;
  } else if (mode == "fuse") {
    image = fuse(b, body.value("structure", std::int64_t{0}), body.value("texture", std::int64_t{1}),
                 body.value("transition_scale", default_inject_level(b.plan)), seed,
                 parse_noise(body).empty() ? NoiseMode::Random : NoiseMode::Reconstruction);
  } else if (mode == "spatial") {
    const auto map = parse_id_map(body.value("id_map", json::object()), b.num_identities, size);
    torch::Tensor faithful;
    const auto noise = parse_noise(body);
    if (!noise.empty()) {
      faithful = noise.front().mask.defined() ? noise.front().mask
                                              : torch::ones({map.height(), map.width()});
      if (faithful.size(0) != map.height() || faithful.size(1) != map.width()) {
        throw ValidationError("noise mask must match the identity mask size");
      }
    }
    image = spatial_sample(b, map, faithful, seed);
  } else if (mode == "edit") {
    const auto edited = decode_image(base64_decode(body.at("image").get<std::string>()));
    const auto map = parse_id_map(body.value("id_map", json::object()), b.num_identities,
                                  b.plan.size(0));
    image = edit(b, edited, body.value("inject_scale", default_inject_level(b.plan)), map, seed);
  } else {
    throw InvalidInput("unknown mode '" + mode + "'");
  }
  const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  json out{{"image", png_b64(image)}, {"request_echo", body}};
  if (body.value("include_timing", false)) out["timing_ms"] = ms;
  auto r = json_response(200, out);
  r.headers["X-Timing-Ms"] = std::to_string(ms);
  return r;
}

ServiceResponse InferenceService::morph(const std::string& id, const json& body) {
  if (!body.is_object()) throw InvalidInput("request body must be a JSON object");
  const auto bundle = store_.get(id);
  const auto t0 = std::chrono::steady_clock::now();
  const auto weights = body.at("weights_sequence");
  std::vector<std::vector<double>> seq;
  for (const auto& w : weights) {
    if (w.is_number()) {
      // scalar t for two identities: (1 - t, t)
      const double t = w.get<double>();
      if (bundle->num_identities != 2) throw ValidationError("scalar morph weights need K = 2");
      seq.push_back({1.0 - t, t});
    } else {
      seq.push_back(w.get<std::vector<double>>());
    }
  }
  const auto noise = body.value("noise", std::string("reconstruction")) == "random"
                         ? NoiseMode::Random
                         : NoiseMode::Reconstruction;
  auto frames = blendgan::morph(*bundle, seq, noise, body.value("seed", std::uint64_t{0}));
  json out_frames = json::array();
  for (const auto& f : frames) out_frames.push_back(png_b64(f));
  const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  json out{{"frames", out_frames}, {"request_echo", body}};
  if (body.value("include_timing", false)) out["timing_ms"] = ms;
  auto r = json_response(200, out);
  r.headers["X-Timing-Ms"] = std::to_string(ms);
  return r;
}

ServiceResponse InferenceService::handle(const std::string& method, const std::string& path,
                                         const std::string& body) {
  static const std::regex route(R"(^/models/([^/]+)/(generate|morph)$)");
  try {
    if (method == "GET" && path == "/models") return list_models();
    std::smatch m;
    if (method == "POST" && std::regex_match(path, m, route)) {
      json j;
      try {
        j = json::parse(body);
      } catch (const json::exception& e) {
        return error_response(400, "malformed", std::string("invalid JSON: ") + e.what());
      }
      return m[2] == "generate" ? generate(m[1], j) : morph(m[1], j);
    }
    return error_response(404, "route", "no route for " + method + " " + path);
  } catch (const NonCategoricalError& e) {
    return error_response(422, "non-categorical", e.what());
  } catch (const PartitionError& e) {
    return error_response(400, "partition", e.what());
  } catch (const ValidationError& e) {
    return error_response(400, "validation", e.what());
  } catch (const NotFound& e) {
    return error_response(404, "not-found", e.what());
  } catch (const TooSmallInput& e) {
    return error_response(400, "size", e.what());
  } catch (const InvalidInput& e) {
    return error_response(400, "invalid", e.what());
  } catch (const GeometryError& e) {
    return error_response(400, "geometry", e.what());
  } catch (const json::exception& e) {
    return error_response(400, "malformed", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

void InferenceService::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    auto r = handle(req.method, req.path, req.body);
    res.status = r.status;
    for (const auto& [k, v] : r.headers) {
      if (k != "Content-Type") res.set_header(k, v);
    }
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body, "application/json");
  };
  server_->Get("/models", forward);
  server_->Post(R"(/models/([^/]+)/(generate|morph))", forward);
  server_->Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.status = 204;
  });
}

int InferenceService::start(const std::string& host, int port) {
  install_routes();
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void InferenceService::run(const std::string& host, int port) {
  install_routes();
  if (!server_->listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void InferenceService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace blendgan
