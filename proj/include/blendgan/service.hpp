#pragma once

#include "blendgan/model.hpp"

#include "json.hpp"

#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace blendgan {

/// Read-only bundles below a root directory, loaded lazily and kept in an
/// LRU cache. The root may itself be a bundle (model id = its name).
class ModelStore {
 public:
  ModelStore(std::filesystem::path root, std::size_t capacity);

  std::vector<std::string> ids() const;
  /// Throws NotFound for unknown ids.
  std::shared_ptr<const ModelBundle> get(const std::string& id);
  std::size_t cached() const;

 private:
  std::filesystem::path dir_for(const std::string& id) const;

  std::filesystem::path root_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::list<std::pair<std::string, std::shared_ptr<const ModelBundle>>> lru_;
};

struct ServiceResponse {
  int status = 200;
  std::string body;
  std::map<std::string, std::string> headers;
};

/// JSON-over-HTTP inference. Request handling is independent of the socket
/// layer so it can be exercised directly.
class InferenceService {
 public:
  InferenceService(std::filesystem::path root, std::size_t cache_size = 4);
  ~InferenceService();

  ServiceResponse handle(const std::string& method, const std::string& path,
                         const std::string& body);

  /// Binds (port 0 picks a free port), serves on a background thread and
  /// returns the bound port.
  int start(const std::string& host, int port);
  /// Blocking variant.
  void run(const std::string& host, int port);
  void stop();

  ModelStore& store() { return store_; }

 private:
  ServiceResponse list_models();
  ServiceResponse generate(const std::string& id, const nlohmann::json& body);
  ServiceResponse morph(const std::string& id, const nlohmann::json& body);
  void install_routes();

  ModelStore store_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace blendgan
