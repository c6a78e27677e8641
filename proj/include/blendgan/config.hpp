#pragma once

#include "blendgan/model.hpp"

#include "json.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace blendgan {

/// Flat `key = value` text; '#' starts a comment. Throws ConfigError on
/// malformed lines.
std::map<std::string, std::string> parse_key_values(std::istream& in);

/// Sets one TrainConfig field from text. Throws ConfigError for unknown keys
/// or unparsable values.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);

/// Applies every pair, then validates.
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

/// `key = value` lines for every field (round-trips through load_config).
std::string dump_config(const TrainConfig& config);

std::vector<std::string> config_keys();

nlohmann::json config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const nlohmann::json& j);

}  // namespace blendgan
