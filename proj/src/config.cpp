#include "blendgan/config.hpp"

#include "blendgan/errors.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace blendgan {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  std::istringstream is(text);
  is >> v;
  if (!is || !(is >> std::ws).eof()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + text + "'");
}

struct Field {
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
std::string show(T v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

#define BG_NUM(name)                                                                    \
  {                                                                                     \
    #name, Field {                                                                      \
      [](TrainConfig& c, const std::string& k, const std::string& v) {                  \
        c.name = parse_number<decltype(c.name)>(k, v);                                  \
      },                                                                                \
          [](const TrainConfig& c) { return show(c.name); }                             \
    }                                                                                   \
  }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      BG_NUM(iterations),    BG_NUM(d_steps),     BG_NUM(g_steps),      BG_NUM(lr_g),
      BG_NUM(lr_d),          BG_NUM(beta1),       BG_NUM(beta2),        BG_NUM(lr_decay_at),
      BG_NUM(lr_decay),      BG_NUM(lambda_gp),   BG_NUM(alpha_rec),    BG_NUM(alpha_sem),
      BG_NUM(crop_window),   BG_NUM(sigma_base),  BG_NUM(c_rec),        BG_NUM(scale_factor),
      BG_NUM(min_dim),       BG_NUM(max_dim),     BG_NUM(channel_base), BG_NUM(channel_cap),
      BG_NUM(norm_momentum), BG_NUM(seed),        BG_NUM(threads),
      {"deterministic",
       {[](TrainConfig& c, const std::string& k, const std::string& v) {
          c.deterministic = parse_bool(k, v);
        },
        [](const TrainConfig& c) { return std::string(c.deterministic ? "true" : "false"); }}},
  };
  return f;
}

#undef BG_NUM

}  // namespace

std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    }
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(n) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(config, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  for (const auto& [k, v] : parse_key_values(in)) set_config_value(base, k, v);
  base.validate();
  return base;
}

std::string dump_config(const TrainConfig& config) {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + " = " + field.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.first);
  return keys;
}

nlohmann::json config_to_json(const TrainConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, field] : fields()) j[name] = field.get(config);
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [k, v] : j.items()) {
    set_config_value(c, k, v.is_string() ? v.get<std::string>() : v.dump());
  }
  c.validate();
  return c;
}

}  // namespace blendgan
