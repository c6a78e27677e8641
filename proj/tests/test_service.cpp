#include "blendgan/checkpoint.hpp"
#include "blendgan/image_io.hpp"
#include "blendgan/inference.hpp"
#include "blendgan/service.hpp"
#include "blendgan/training.hpp"
#include "fixtures.hpp"

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"

#include <filesystem>
#include <future>

using namespace blendgan;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// root/demo holds a tiny trained bundle
const fs::path& root() {
  static fs::path dir = [] {
    auto r = fs::temp_directory_path() / "blendgan_test_service";
    fs::remove_all(r);
    save_bundle(train_all(fixtures::two_images(), fixtures::tiny_config(1)), r / "demo");
    return r;
  }();
  return dir;
}

std::string mask_png(std::int64_t h, std::int64_t w, std::uint8_t value, std::int64_t split) {
  IndexedImage img{h, w, std::vector<std::uint8_t>(h * w, 0), 2};
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < split; ++x) img.indices[y * w + x] = value;
  }
  return base64_encode(encode_indexed_png(img));
}

}  // namespace

TEST_CASE("model listing") {
  InferenceService svc(root());
  auto r = svc.handle("GET", "/models", "");
  CHECK(r.status == 200);
  auto j = json::parse(r.body);
  REQUIRE(j.size() == 1);
  CHECK(j[0]["model_id"] == "demo");
  CHECK(j[0]["K"] == 2);
  CHECK(j[0]["thumbnails"].size() == 2);
  CHECK(j[0]["scales"].get<int>() >= 2);
}

TEST_CASE("generate is byte-identical for identical requests") {
  InferenceService svc(root());
  const std::string body =
      R"({"mode":"sample","id_map":{"kind":"constant","k":0},"seed":3,"noise":"reconstruction"})";
  auto a = svc.handle("POST", "/models/demo/generate", body);
  auto b = svc.handle("POST", "/models/demo/generate", body);
  CHECK(a.status == 200);
  CHECK(a.body == b.body);
  CHECK(a.headers.count("X-Timing-Ms") == 1);
  auto j = json::parse(a.body);
  CHECK_FALSE(j.contains("timing_ms"));
  CHECK(j["request_echo"]["seed"] == 3);
  // reconstruction noise with a constant id reproduces the stored reconstruction
  auto bundle = load_bundle(root() / "demo");
  auto img = decode_image(base64_decode(j["image"].get<std::string>()));
  CHECK(torch::equal(img.tensor(), decode_image(encode_png(reconstruct(bundle, 0))).tensor()));

  auto timed = json::parse(svc.handle("POST", "/models/demo/generate",
                                      R"({"seed":3,"include_timing":true})").body);
  CHECK(timed.contains("timing_ms"));
}

TEST_CASE("generate modes") {
  InferenceService svc(root());
  for (const char* body : {
           R"({"mode":"sample","id_map":{"kind":"blend","weights":[0.3,0.7]},"size":[40,48]})",
           R"({"mode":"sample","id_map":{"kind":"ramp","a":0.3,"b":0.7}})",
           R"({"mode":"meld","anchors":[0,1],"width":64})",
           R"({"mode":"fuse","structure":0,"texture":1})",
           R"({"mode":"spatial","id_map":{"kind":"constant","k":1}})",
       }) {
    auto r = svc.handle("POST", "/models/demo/generate", body);
    CHECK_MESSAGE(r.status == 200, body << " -> " << r.body);
  }
  const std::string masks = R"({"mode":"spatial","id_map":{"kind":"mask","masks":[")" +
                            mask_png(32, 32, 1, 16) + R"(",")" + mask_png(32, 32, 0, 16) +
                            R"("]}})";
  auto r = svc.handle("POST", "/models/demo/generate", masks);
  // second mask is all zero on the right half, so the masks leave pixels uncovered
  CHECK(r.status == 400);
  CHECK(json::parse(r.body)["kind"] == "partition");
}

TEST_CASE("error statuses") {
  InferenceService svc(root());
  auto status = [&](const std::string& path, const std::string& body) {
    return svc.handle("POST", path, body).status;
  };
  CHECK(status("/models/nope/generate", "{}") == 404);
  CHECK(svc.handle("GET", "/nowhere", "").status == 404);
  CHECK(status("/models/demo/generate", "{not json") == 400);
  CHECK(status("/models/demo/generate", R"({"id_map":{"kind":"blend","weights":[0.7,0.7]}})") == 400);
  CHECK(status("/models/demo/generate", R"({"size":[8,8]})") == 400);
  CHECK(status("/models/demo/generate", R"({"mode":"spatial","id_map":{"kind":"blend","weights":[0.5,0.5]}})") ==
        422);
  auto err = json::parse(svc.handle("POST", "/models/demo/generate", R"({"mode":"dance"})").body);
  CHECK(err.contains("error"));
  CHECK(err.contains("kind"));
}

TEST_CASE("morph endpoint") {
  InferenceService svc(root());
  auto r = svc.handle("POST", "/models/demo/morph", R"({"weights_sequence":[0.2,0.4,0.6,0.8]})");
  REQUIRE(r.status == 200);
  CHECK(json::parse(r.body)["frames"].size() == 4);
  CHECK(svc.handle("POST", "/models/demo/morph", R"({"weights_sequence":[[0.9,0.9]]})").status == 400);
}

TEST_CASE("over a socket") {
  InferenceService svc(root(), 2);
  const int port = svc.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client cli("127.0.0.1", port);
  auto list = cli.Get("/models");
  REQUIRE(list);
  CHECK(list->status == 200);
  CHECK(list->get_header_value("Access-Control-Allow-Origin") == "*");

  const std::string body = R"({"id_map":{"kind":"constant","k":1},"seed":11})";
  // concurrent identical requests
  auto post = [&] {
    httplib::Client c("127.0.0.1", port);
    auto res = c.Post("/models/demo/generate", body, "application/json");
    return res ? res->body : std::string();
  };
  auto f1 = std::async(std::launch::async, post);
  auto f2 = std::async(std::launch::async, post);
  const auto b1 = f1.get();
  const auto b2 = f2.get();
  CHECK_FALSE(b1.empty());
  CHECK(b1 == b2);
  CHECK(b1 == svc.handle("POST", "/models/demo/generate", body).body);

  auto missing = cli.Post("/models/other/generate", "{}", "application/json");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  svc.stop();
}
