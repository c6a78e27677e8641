#include "blendgan/checkpoint.hpp"

#include "blendgan/config.hpp"
#include "blendgan/errors.hpp"

#include "json.hpp"
#include <openssl/evp.h>
#include <torch/torch.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace blendgan {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'B', 'G', 'C', 'K'};
constexpr std::size_t kDigestSize = 32;

const char* dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw InvalidInput("unsupported tensor type in checkpoint");
  }
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  throw CorruptionError("unknown tensor type '" + s + "'");
}

template <typename T>
void put(Bytes& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const Bytes& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CorruptionError("truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::map<std::string, torch::Tensor> level_tensors(const ModelBundle& b, int level) {
  std::map<std::string, torch::Tensor> t;
  const auto& g = *b.generators.at(level);
  const auto& d = *b.discriminators.at(level);
  for (const auto& p : g.named_parameters(true)) t["g.p." + p.key()] = p.value();
  for (const auto& p : g.named_buffers(true)) t["g.b." + p.key()] = p.value();
  for (const auto& p : d.named_parameters(true)) t["d.p." + p.key()] = p.value();
  for (const auto& p : d.named_buffers(true)) t["d.b." + p.key()] = p.value();
  for (const auto& [k, v] : b.state.at(level).optimizer) t["opt." + k] = v;
  return t;
}

void write_atomic(const fs::path& path, const Bytes& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, bytes);
  fs::rename(tmp, path);
}

json plan_to_json(const ScalePlan& p) {
  json sizes = json::array(), crops = json::array();
  for (const auto& s : p.sizes) sizes.push_back({s.height, s.width});
  for (const auto& c : p.crops) crops.push_back(c ? json(*c) : json(nullptr));
  return {{"scale_factor", p.scale_factor}, {"sizes", sizes},       {"crops", crops},
          {"min_dim", p.min_dim},           {"max_dim", p.max_dim}, {"crop_window", p.crop_window}};
}

bool plan_matches(const ScalePlan& p, const json& j) {
  return plan_to_json(p) == j;
}

}  // namespace

std::string sha256_hex(const std::uint8_t* data, std::size_t size) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

Bytes encode_checkpoint(const ModelBundle& bundle, int level) {
  const auto tensors = level_tensors(bundle, level);
  json header;
  header["level"] = level;
  header["iterations_done"] = bundle.state.at(level).iterations_done;
  header["trained"] = bundle.state.at(level).trained;
  header["channels"] = bundle.generators.at(level)->channels();
  json entries = json::array();
  std::uint64_t offset = 0;
  std::vector<torch::Tensor> blobs;
  for (const auto& [name, t] : tensors) {
    auto c = t.detach().contiguous();
    const std::uint64_t nbytes = c.numel() * c.element_size();
    entries.push_back({{"name", name},
                       {"dtype", dtype_name(c.scalar_type())},
                       {"shape", c.sizes().vec()},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
    blobs.push_back(c);
  }
  header["tensors"] = entries;
  const std::string hs = header.dump();

  Bytes out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, hs.size());
  out.insert(out.end(), hs.begin(), hs.end());
  for (const auto& c : blobs) {
    const auto* p = static_cast<const std::uint8_t*>(c.data_ptr());
    out.insert(out.end(), p, p + c.numel() * c.element_size());
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(out.data(), out.size(), md, &len, EVP_sha256(), nullptr);
  out.insert(out.end(), md, md + len);
  return out;
}

DecodedCheckpoint decode_checkpoint(const Bytes& bytes, const std::string& origin) {
  try {
    if (bytes.size() < 16 + kDigestSize || std::memcmp(bytes.data(), kMagic, 4) != 0) {
      throw CorruptionError("not a checkpoint file");
    }
    const std::size_t body = bytes.size() - kDigestSize;
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), body, md, &len, EVP_sha256(), nullptr);
    if (len != kDigestSize || std::memcmp(md, bytes.data() + body, kDigestSize) != 0) {
      throw CorruptionError("content digest mismatch");
    }
    std::size_t pos = 4;
    const auto version = get<std::uint32_t>(bytes, pos);
    if (version != kCheckpointVersion) {
      throw VersionError(origin + ": checkpoint version " + std::to_string(version) +
                         " is not supported (expected " + std::to_string(kCheckpointVersion) +
                         "); re-export it with a matching release");
    }
    const auto hlen = get<std::uint64_t>(bytes, pos);
    if (pos + hlen > body) throw CorruptionError("header overruns the file");
    const auto header = json::parse(bytes.begin() + pos, bytes.begin() + pos + hlen);
    pos += hlen;
    DecodedCheckpoint out;
    out.level = header.at("level").get<int>();
    out.iterations_done = header.at("iterations_done").get<std::int64_t>();
    out.trained = header.at("trained").get<bool>();
    for (const auto& e : header.at("tensors")) {
      const auto dtype = dtype_from(e.at("dtype").get<std::string>());
      const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
      const auto off = e.at("offset").get<std::uint64_t>();
      const auto nbytes = e.at("nbytes").get<std::uint64_t>();
      if (pos + off + nbytes > body) throw CorruptionError("tensor data overruns the file");
      auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
      if (static_cast<std::uint64_t>(t.numel() * t.element_size()) != nbytes) {
        throw CorruptionError("tensor size disagrees with its shape");
      }
      std::memcpy(t.data_ptr(), bytes.data() + pos + off, nbytes);
      out.tensors[e.at("name").get<std::string>()] = t;
    }
    return out;
  } catch (const VersionError&) {
    throw;
  } catch (const CorruptionError& e) {
    throw CorruptionError(origin + ": " + e.what());
  } catch (const json::exception& e) {
    throw CorruptionError(origin + ": malformed header (" + e.what() + ")");
  }
}

bool is_bundle_dir(const fs::path& dir) { return fs::is_regular_file(dir / "manifest.json"); }

void save_bundle(const ModelBundle& bundle, const fs::path& dir, const std::string& project_id) {
  fs::create_directories(dir / "images");
  json manifest;
  manifest["format_version"] = kManifestVersion;
  manifest["project_id"] = project_id.empty() ? dir.filename().string() : project_id;
  manifest["num_identities"] = bundle.num_identities;
  json images = json::array();
  for (std::int64_t k = 0; k < bundle.num_identities; ++k) {
    const std::string rel = "images/image_" + std::to_string(k) + ".png";
    const auto png = encode_png(bundle.images[k].image);
    write_atomic(dir / rel, png);
    images.push_back({{"index", k}, {"path", rel}, {"source", bundle.images[k].source},
                      {"digest", sha256_hex(png)}});
  }
  manifest["images"] = images;
  manifest["config"] = config_to_json(bundle.config);
  manifest["plan"] = plan_to_json(bundle.plan);
  json sigma = json::array();
  for (double s : bundle.noise.sigma) sigma.push_back(std::isnan(s) ? json(nullptr) : json(s));
  manifest["noise"] = {{"seed", bundle.noise.seed}, {"c_rec", bundle.noise.c_rec}, {"sigma", sigma}};
  json scales = json::array();
  for (int level = 0; level < bundle.num_levels(); ++level) {
    const std::string rel = "scale_" + std::to_string(level) + ".bgck";
    const auto bytes = encode_checkpoint(bundle, level);
    write_atomic(dir / rel, bytes);
    scales.push_back({{"level", level},
                      {"path", rel},
                      {"digest", sha256_hex(bytes.data(), bytes.size() - kDigestSize)},
                      {"trained", bundle.state[level].trained},
                      {"iterations_done", bundle.state[level].iterations_done}});
  }
  manifest["scales"] = scales;
  const auto text = manifest.dump(2);
  write_atomic(dir / "manifest.json", Bytes(text.begin(), text.end()));
}

ModelBundle load_bundle(const fs::path& dir) {
  const auto mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw NotFound("no manifest at " + mpath.string());
  json manifest;
  try {
    const auto bytes = read_file(mpath);
    manifest = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw CorruptionError(mpath.string() + ": malformed manifest (" + e.what() + ")");
  }
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kManifestVersion) {
      throw VersionError(mpath.string() + ": manifest format version " + std::to_string(version) +
                         " is not supported (expected " + std::to_string(kManifestVersion) + ")");
    }
    const auto k = manifest.at("num_identities").get<std::int64_t>();
    std::vector<TrainingImage> images(static_cast<std::size_t>(k));
    std::vector<bool> seen(static_cast<std::size_t>(k), false);
    for (const auto& e : manifest.at("images")) {
      const auto idx = e.at("index").get<std::int64_t>();
      if (idx < 0 || idx >= k || seen[idx]) {
        throw CorruptionError(mpath.string() + ": identity indices must be 0..K-1 without gaps");
      }
      seen[idx] = true;
      const auto path = dir / e.at("path").get<std::string>();
      if (!fs::exists(path)) throw NotFound("training image missing: " + path.string());
      const auto png = read_file(path);
      if (e.contains("digest") && sha256_hex(png) != e.at("digest").get<std::string>()) {
        throw CorruptionError(path.string() + ": content digest mismatch");
      }
      images[idx] = {e.value("source", path.string()), decode_image(png)};
    }
    for (bool s : seen) {
      if (!s) throw CorruptionError(mpath.string() + ": identity indices must be 0..K-1 without gaps");
    }

    const auto config = config_from_json(manifest.at("config"));
    std::vector<DecodedCheckpoint> levels;
    for (const auto& e : manifest.at("scales")) {
      const auto path = dir / e.at("path").get<std::string>();
      if (!fs::exists(path)) throw NotFound("checkpoint missing: " + path.string());
      const auto bytes = read_file(path);
      auto dc = decode_checkpoint(bytes, path.string());
      if (sha256_hex(bytes.data(), bytes.size() - kDigestSize) != e.at("digest").get<std::string>()) {
        throw CorruptionError(path.string() + ": digest differs from the manifest");
      }
      if (dc.level != e.at("level").get<int>()) {
        throw CorruptionError(path.string() + ": scale index differs from the manifest");
      }
      levels.push_back(std::move(dc));
    }

    auto bundle = make_bundle(images, config);
    if (!plan_matches(bundle.plan, manifest.at("plan"))) {
      throw CorruptionError(mpath.string() + ": stored scale plan does not match the images");
    }
    if (static_cast<int>(levels.size()) != bundle.num_levels()) {
      throw CorruptionError(mpath.string() + ": expected one checkpoint per scale");
    }
    const auto& noise = manifest.at("noise");
    bundle.noise.seed = noise.at("seed").get<std::uint64_t>();
    bundle.noise.c_rec = noise.at("c_rec").get<double>();
    const auto& sig = noise.at("sigma");
    if (static_cast<int>(sig.size()) != bundle.num_levels()) {
      throw CorruptionError(mpath.string() + ": sigma list has the wrong length");
    }

    torch::NoGradGuard no_grad;
    for (const auto& dc : levels) {
      if (dc.level < 0 || dc.level >= bundle.num_levels()) {
        throw CorruptionError("checkpoint scale index outside the plan");
      }
      const auto expected = level_tensors(bundle, dc.level);
      for (const auto& [name, t] : expected) {
        if (name.rfind("opt.", 0) == 0) continue;
        auto it = dc.tensors.find(name);
        if (it == dc.tensors.end() || it->second.sizes() != t.sizes() ||
            it->second.scalar_type() != t.scalar_type()) {
          throw CorruptionError("scale " + std::to_string(dc.level) + ": tensor '" + name +
                                "' missing or mis-shaped");
        }
      }
    }
    for (const auto& dc : levels) {
      auto target = level_tensors(bundle, dc.level);
      auto& st = bundle.state[dc.level];
      for (const auto& [name, t] : dc.tensors) {
        if (name.rfind("opt.", 0) == 0) {
          st.optimizer[name.substr(4)] = t;
        } else {
          target.at(name).copy_(t);
        }
      }
      st.iterations_done = dc.iterations_done;
      st.trained = dc.trained;
    }
    for (int level = 0; level < bundle.num_levels(); ++level) {
      if (sig[level].is_null()) continue;
      const double s = sig[level].get<double>();
      bundle.noise.sigma[level] = s;
      bundle.noise.zrec[level] = draw_reconstruction_noise(
          bundle.noise.seed, level, bundle.plan.coarsest(), bundle.plan.size(level), s,
          bundle.noise.c_rec);
    }
    return bundle;
  } catch (const json::exception& e) {
    throw CorruptionError(mpath.string() + ": malformed manifest (" + e.what() + ")");
  }
}

}  // namespace blendgan
