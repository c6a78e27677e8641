#include "blendgan/checkpoint.hpp"
#include "blendgan/errors.hpp"
#include "blendgan/inference.hpp"
#include "blendgan/training.hpp"
#include "fixtures.hpp"

#include "doctest.h"
#include "json.hpp"
#include <openssl/sha.h>
#include <torch/torch.h>

#include <filesystem>

using namespace blendgan;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const ModelBundle& bundle() {
  static ModelBundle b = train_all(fixtures::two_images(), fixtures::tiny_config(2));
  return b;
}

Bytes with_digest(Bytes body) {
  std::uint8_t md[SHA256_DIGEST_LENGTH];
  SHA256(body.data(), body.size(), md);
  body.insert(body.end(), md, md + SHA256_DIGEST_LENGTH);
  return body;
}

}  // namespace

TEST_CASE("sha256 of a known string") {
  const std::string abc = "abc";
  CHECK(sha256_hex(reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("checkpoint encode/decode") {
  const auto& b = bundle();
  auto bytes = encode_checkpoint(b, 1);
  auto dc = decode_checkpoint(bytes, "mem");
  CHECK(dc.level == 1);
  CHECK(dc.trained);
  CHECK(dc.iterations_done == 2);
  CHECK_FALSE(dc.tensors.empty());
  CHECK(encode_checkpoint(b, 1) == bytes);

  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(decode_checkpoint(flipped, "mem"), CorruptionError);
  CHECK_THROWS_AS(decode_checkpoint(Bytes(bytes.begin(), bytes.begin() + 40), "mem"), CorruptionError);

  Bytes body(bytes.begin(), bytes.end() - SHA256_DIGEST_LENGTH);
  body[4] = 9;  // version, little endian
  CHECK_THROWS_AS(decode_checkpoint(with_digest(body), "mem"), VersionError);
}

TEST_CASE("bundle round trip reproduces reconstructions exactly") {
  TempDir dir("blendgan_test_bundle");
  const auto& b = bundle();
  save_bundle(b, dir.path, "demo");
  CHECK(is_bundle_dir(dir.path));
  auto back = load_bundle(dir.path);
  CHECK(back.num_identities == 2);
  CHECK(back.plan.sizes == b.plan.sizes);
  for (int l = 0; l < b.num_levels(); ++l) {
    CHECK(back.noise.sigma[l] == b.noise.sigma[l]);
    CHECK(torch::equal(back.noise.zrec[l], b.noise.zrec[l]));
    auto pa = b.generators[l]->parameters();
    auto pb = back.generators[l]->parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(torch::equal(pa[i], pb[i]));
    auto ba = b.generators[l]->buffers();
    auto bb = back.generators[l]->buffers();
    for (std::size_t i = 0; i < ba.size(); ++i) CHECK(torch::equal(ba[i], bb[i]));
  }
  for (std::int64_t k = 0; k < 2; ++k) {
    CHECK(torch::equal(reconstruct(b, k).tensor(), reconstruct(back, k).tensor()));
  }
  auto id = constant_id(1, 2, b.plan.size(0));
  CHECK(torch::equal(sample(b, id, std::nullopt, 3).tensor(), sample(back, id, std::nullopt, 3).tensor()));
  // saving the reloaded bundle gives the same checkpoints
  for (int l = 0; l < b.num_levels(); ++l) CHECK(encode_checkpoint(back, l) == encode_checkpoint(b, l));
}

TEST_CASE("tampered or missing files are refused") {
  TempDir dir("blendgan_test_tamper");
  save_bundle(bundle(), dir.path);
  auto ck = dir.path / "scale_0.bgck";
  auto bytes = read_file(ck);

  auto bad = bytes;
  bad[bad.size() - 100] ^= 0x10;
  write_file(ck, bad);
  CHECK_THROWS_AS(load_bundle(dir.path), CorruptionError);

  write_file(ck, bytes);
  CHECK_NOTHROW(load_bundle(dir.path));

  auto img = dir.path / "images";
  auto first = *fs::directory_iterator(img);
  auto png = read_file(first.path());
  png[png.size() / 2] ^= 0x20;
  write_file(first.path(), png);
  CHECK_THROWS_AS(load_bundle(dir.path), CorruptionError);

  fs::remove(first.path());
  try {
    load_bundle(dir.path);
    CHECK_MESSAGE(false, "expected NotFound");
  } catch (const NotFound& e) {
    CHECK(std::string(e.what()).find(first.path().filename().string()) != std::string::npos);
  }
  CHECK_THROWS_AS(load_bundle(dir.path / "nowhere"), NotFound);
}

TEST_CASE("manifest version is checked") {
  TempDir dir("blendgan_test_version");
  save_bundle(bundle(), dir.path);
  auto path = dir.path / "manifest.json";
  auto raw = read_file(path);
  auto j = nlohmann::json::parse(std::string(raw.begin(), raw.end()));
  j["format_version"] = 99;
  auto text = j.dump();
  write_file(path, Bytes(text.begin(), text.end()));
  CHECK_THROWS_AS(load_bundle(dir.path), VersionError);
  write_file(path, Bytes{'{', 'x'});
  CHECK_THROWS_AS(load_bundle(dir.path), CorruptionError);
}

TEST_CASE("partially trained bundles resume") {
  TempDir dir("blendgan_test_resume");
  auto cfg = fixtures::tiny_config(2);
  // stored images are 8-bit
  auto images = fixtures::two_images();
  for (auto& im : images) im.image = decode_image(encode_png(im.image));
  auto full = train_all(images, cfg);

  auto part = make_bundle(images, cfg);
  train_scale(part.plan.coarsest(), part);
  save_bundle(part, dir.path);
  auto resumed = load_bundle(dir.path);
  train_bundle(resumed);
  for (int l = 0; l < full.num_levels(); ++l) {
    CHECK(encode_checkpoint(resumed, l) == encode_checkpoint(full, l));
  }
}
