#include "colorcount/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>

#include "colorcount/checkpoint.hpp"

namespace colorcount::pipeline {

using nlohmann::json;

TrainConfig TrainConfig::defaults(int stage) {
  TrainConfig c;
  c.stage = stage;
  if (stage == 2) {
    c.learning_rate = 1e-5;
    c.batch_size = 1;
    c.epochs = 50;
  }
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("TrainConfig: " + what); };
  if (stage != 1 && stage != 2) fail("stage must be 1 or 2");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (epochs < 0) fail("epochs must be >= 0");
  if (!(subset_fraction > 0.0 && subset_fraction <= 1.0)) fail("subset_fraction must be in (0, 1]");
  weights.validate();
  if (!(adversarial >= 0.0)) fail("adversarial must be >= 0");
  if (image_size < 32 || image_size % 32 != 0) fail("image_size must be a positive multiple of 32");
  if (!(grid_spacing > 0.0)) fail("grid_spacing must be > 0");
  if (gamut_samples < 0) fail("gamut_samples must be >= 0");
  if (soft_k < 1) fail("soft_k must be >= 1");
  if (!(soft_sigma > 0.0)) fail("soft_sigma must be > 0");
  if (!(temperature > 0.0 && temperature <= 1.0)) fail("temperature must be in (0, 1]");
  if (!(rebalance_mix >= 0.0 && rebalance_mix <= 1.0)) fail("rebalance_mix must be in [0, 1]");
  if (groups < 2) fail("groups must be >= 2");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail("val_fraction must be in [0, 1)");
  if (!(kernel_beta > 0.0)) fail("kernel_beta must be > 0");
  if (kernel_k < 1) fail("kernel_k must be >= 1");
  if (igc_blocks < 0) fail("igc_blocks must be >= 0");
}

json TrainConfig::to_json() const {
  return {{"stage", stage},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"optimizer", nn::to_string(optimizer)},
          {"epochs", epochs},
          {"seed", seed},
          {"alpha", weights.alpha},
          {"beta", weights.beta},
          {"gamma", weights.gamma},
          {"lambda", weights.lambda},
          {"adversarial", adversarial},
          {"subset_fraction", subset_fraction},
          {"image_size", image_size},
          {"grid_spacing", grid_spacing},
          {"gamut_samples", gamut_samples},
          {"soft_k", soft_k},
          {"soft_sigma", soft_sigma},
          {"temperature", temperature},
          {"rebalance_mix", rebalance_mix},
          {"groups", groups},
          {"val_fraction", val_fraction},
          {"freeze_frontend", freeze_frontend},
          {"kernel_beta", kernel_beta},
          {"kernel_k", kernel_k},
          {"igc_blocks", igc_blocks}};
}

TrainConfig TrainConfig::from_json(const json& j, int default_stage) {
  if (!j.is_object()) throw std::invalid_argument("TrainConfig: config must be a flat key-value object");
  const int stage = j.contains("stage") ? j.at("stage").get<int>() : default_stage;
  TrainConfig c = defaults(stage);
  const std::map<std::string, std::function<void(const json&)>> setters = {
      {"stage", [&](const json& v) { c.stage = v.get<int>(); }},
      {"learning_rate", [&](const json& v) { c.learning_rate = v.get<double>(); }},
      {"batch_size", [&](const json& v) { c.batch_size = v.get<int>(); }},
      {"optimizer", [&](const json& v) { c.optimizer = nn::parse_optimizer(v.get<std::string>()); }},
      {"epochs", [&](const json& v) { c.epochs = v.get<int>(); }},
      {"seed", [&](const json& v) { c.seed = v.get<std::uint64_t>(); }},
      {"alpha", [&](const json& v) { c.weights.alpha = v.get<double>(); }},
      {"beta", [&](const json& v) { c.weights.beta = v.get<double>(); }},
      {"gamma", [&](const json& v) { c.weights.gamma = v.get<double>(); }},
      {"lambda", [&](const json& v) { c.weights.lambda = v.get<double>(); }},
      {"adversarial", [&](const json& v) { c.adversarial = v.get<double>(); }},
      {"subset_fraction", [&](const json& v) { c.subset_fraction = v.get<double>(); }},
      {"image_size", [&](const json& v) { c.image_size = v.get<int>(); }},
      {"grid_spacing", [&](const json& v) { c.grid_spacing = v.get<double>(); }},
      {"gamut_samples", [&](const json& v) { c.gamut_samples = v.get<int>(); }},
      {"soft_k", [&](const json& v) { c.soft_k = v.get<int>(); }},
      {"soft_sigma", [&](const json& v) { c.soft_sigma = v.get<double>(); }},
      {"temperature", [&](const json& v) { c.temperature = v.get<double>(); }},
      {"rebalance_mix", [&](const json& v) { c.rebalance_mix = v.get<double>(); }},
      {"groups", [&](const json& v) { c.groups = v.get<int>(); }},
      {"val_fraction", [&](const json& v) { c.val_fraction = v.get<double>(); }},
      {"freeze_frontend", [&](const json& v) { c.freeze_frontend = v.get<bool>(); }},
      {"kernel_beta", [&](const json& v) { c.kernel_beta = v.get<double>(); }},
      {"kernel_k", [&](const json& v) { c.kernel_k = v.get<int>(); }},
      {"igc_blocks", [&](const json& v) { c.igc_blocks = v.get<int>(); }},
  };
  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw std::invalid_argument("TrainConfig: unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw std::invalid_argument("TrainConfig: bad value for '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

std::uint64_t TrainConfig::hash() const { return fnv1a(to_json().dump()); }

TrainConfig load_config(const std::filesystem::path& path, int default_stage) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return TrainConfig::from_json(j, default_stage);
}

}  // namespace colorcount::pipeline
