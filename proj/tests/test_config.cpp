#include "blendgan/config.hpp"
#include "blendgan/errors.hpp"

#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace blendgan;

TEST_CASE("key/value parsing") {
  std::istringstream in("# comment\niterations = 10\n\n  lr_g=0.001  # trailing\n");
  auto kv = parse_key_values(in);
  CHECK(kv.size() == 2);
  CHECK(kv.at("iterations") == "10");
  CHECK(kv.at("lr_g") == "0.001");
  std::istringstream bad("no equals sign\n");
  CHECK_THROWS_AS(parse_key_values(bad), ConfigError);
}

TEST_CASE("setting values") {
  TrainConfig c;
  set_config_value(c, "iterations", "12");
  set_config_value(c, "lambda_gp", "0.5");
  set_config_value(c, "deterministic", "false");
  set_config_value(c, "crop_window", "0");
  CHECK(c.iterations == 12);
  CHECK(c.lambda_gp == 0.5);
  CHECK_FALSE(c.deterministic);
  CHECK(c.effective_crop_window() == 0);
  CHECK_THROWS_AS(set_config_value(c, "iterations", "ten"), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "deterministic", "maybe"), ConfigError);
}

TEST_CASE("defaults") {
  TrainConfig c;
  CHECK(c.channel_base == 32);
  CHECK(c.channel_cap == 512);
  CHECK(c.scale_factor == 0.75);
  CHECK(c.effective_crop_window() == 128);
  c.max_dim = 512;
  CHECK(c.effective_crop_window() == 256);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("validation") {
  auto broken = [](auto edit) {
    TrainConfig c;
    edit(c);
    return c;
  };
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.alpha_rec = -1; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.scale_factor = 1.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.min_dim = 300; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.crop_window = -2; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.lr_g = 0; }).validate(), ConfigError);
}

TEST_CASE("dump/load and json round trips") {
  TrainConfig c;
  c.iterations = 7;
  c.sigma_base = 0.25;
  c.seed = 99;
  auto path = std::filesystem::temp_directory_path() / "blendgan_test_config.txt";
  {
    std::ofstream out(path);
    out << dump_config(c);
  }
  auto back = load_config(path);
  CHECK(dump_config(back) == dump_config(c));
  CHECK(dump_config(config_from_json(config_to_json(c))) == dump_config(c));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_config(path), ConfigError);

  auto keys = config_keys();
  CHECK(std::find(keys.begin(), keys.end(), "lambda_gp") != keys.end());
  CHECK(config_to_json(c).size() == keys.size());
}
