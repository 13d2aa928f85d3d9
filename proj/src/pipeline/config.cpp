#include "vmbh/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vmbh/error.hpp"

namespace vmbh {

using nlohmann::json;

PipelineConfig PipelineConfig::toy() { return PipelineConfig{}; }

PipelineConfig PipelineConfig::full() {
  PipelineConfig c;
  c.profile = "full";
  c.image_height = 256;
  c.image_width = 256;
  c.backbone_channels = 2048;
  c.backbone_stages = 5;
  c.depth_bins = 64;
  c.rig_vertices = 778;
  c.samples = 32;
  c.epochs = 30;
  c.batch_size = 32;
  c.learning_rate = 1e-4;
  c.lr_milestones = {10, 15};
  return c;
}

ssm::ScanOrder PipelineConfig::ife_order(std::size_t block_index) const {
  return ife_scan_orders[block_index % ife_scan_orders.size()];
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid config: " + m); };
  if (profile != "toy" && profile != "full") fail("profile must be 'toy' or 'full'");
  if (image_height == 0 || image_width == 0) fail("image size must be positive");
  if (backbone_stages == 0 || backbone_stages > 8) fail("backbone_stages must be in 1..8");
  if (image_height % divisor() != 0 || image_width % divisor() != 0) {
    fail("image size must be divisible by " + std::to_string(divisor()));
  }
  if (profile == "full" && divisor() != 32) fail("full profile uses divisor 32 (backbone_stages = 5)");
  if (backbone_channels < 4 || backbone_channels % 4 != 0) fail("backbone_channels must be a positive multiple of 4");
  if (backbone_channels >> (backbone_stages - 1) == 0) fail("backbone_channels too small for the stage count");
  if (joints == 0) fail("joints must be positive");
  if (depth_bins < 2) fail("depth_bins must be at least 2");
  if (block.state_dim == 0 || block.expansion == 0 || block.conv_width == 0 || block.mlp_ratio == 0) {
    fail("VMBlock dimensions must be positive");
  }
  if (ife_scan_orders.empty()) fail("ife_scan_orders must not be empty");
  if (!(translation_scale_mm > 0.0)) fail("translation_scale_mm must be positive");
  if (rig_vertices < 120) fail("rig_vertices must be at least 120");
  if (samples == 0) fail("samples must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be finite and >= 0");
  if (!(lr_decay > 0.0)) fail("lr_decay must be positive");
  if (!(image_noise >= 0.0)) fail("image_noise must be >= 0");
  for (double w : loss_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail("loss weights must be finite and >= 0");
  }
}

namespace {

template <typename T>
T read(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

std::size_t read_size(const json& j, const std::string& key) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0)) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  return j.get<std::size_t>();
}

}  // namespace

PipelineConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  PipelineConfig c;
  if (j.contains("profile")) {
    auto p = read<std::string>(j["profile"], "profile");
    if (p == "full") {
      c = PipelineConfig::full();
    } else if (p != "toy") {
      throw ConfigError("config key 'profile' must be 'toy' or 'full'");
    }
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "profile") continue;
    if (key == "image_height") c.image_height = read_size(value, key);
    else if (key == "image_width") c.image_width = read_size(value, key);
    else if (key == "backbone_channels") c.backbone_channels = read_size(value, key);
    else if (key == "backbone_stages") c.backbone_stages = read_size(value, key);
    else if (key == "joints") c.joints = read_size(value, key);
    else if (key == "depth_bins") c.depth_bins = read_size(value, key);
    else if (key == "ife_depth") c.ife_depth = read_size(value, key);
    else if (key == "jvm_depth") c.jvm_depth = read_size(value, key);
    else if (key == "ife_scan_orders") {
      c.ife_scan_orders.clear();
      for (const auto& o : read<std::vector<std::string>>(value, key)) c.ife_scan_orders.push_back(ssm::scan_order_from_string(o));
    }
    else if (key == "state_dim") c.block.state_dim = read_size(value, key);
    else if (key == "expansion") c.block.expansion = read_size(value, key);
    else if (key == "conv_width") c.block.conv_width = read_size(value, key);
    else if (key == "mlp_ratio") c.block.mlp_ratio = read_size(value, key);
    else if (key == "hjfe_shared") c.hjfe_shared = read<bool>(value, key);
    else if (key == "translation_scale_mm") c.translation_scale_mm = read<double>(value, key);
    else if (key == "hand_model") c.hand_model = read<std::string>(value, key);
    else if (key == "rig_vertices") c.rig_vertices = read_size(value, key);
    else if (key == "seed") c.seed = read<std::uint64_t>(value, key);
    else if (key == "samples") c.samples = read_size(value, key);
    else if (key == "image_noise") c.image_noise = read<double>(value, key);
    else if (key == "epochs") c.epochs = read_size(value, key);
    else if (key == "batch_size") c.batch_size = read_size(value, key);
    else if (key == "learning_rate") c.learning_rate = read<double>(value, key);
    else if (key == "lr_milestones") c.lr_milestones = read<std::vector<std::size_t>>(value, key);
    else if (key == "lr_decay") c.lr_decay = read<double>(value, key);
    else if (key == "loss_weights") {
      auto w = read<std::vector<double>>(value, key);
      if (w.size() != 9) throw ConfigError("config key 'loss_weights' needs exactly 9 values");
      std::copy(w.begin(), w.end(), c.loss_weights.begin());
    }
    else throw ConfigError("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

std::string config_to_json(const PipelineConfig& c) {
  json j;
  j["profile"] = c.profile;
  j["image_height"] = c.image_height;
  j["image_width"] = c.image_width;
  j["backbone_channels"] = c.backbone_channels;
  j["backbone_stages"] = c.backbone_stages;
  j["joints"] = c.joints;
  j["depth_bins"] = c.depth_bins;
  j["ife_depth"] = c.ife_depth;
  j["jvm_depth"] = c.jvm_depth;
  std::vector<std::string> orders;
  for (auto o : c.ife_scan_orders) orders.push_back(ssm::to_string(o));
  j["ife_scan_orders"] = orders;
  j["state_dim"] = c.block.state_dim;
  j["expansion"] = c.block.expansion;
  j["conv_width"] = c.block.conv_width;
  j["mlp_ratio"] = c.block.mlp_ratio;
  j["hjfe_shared"] = c.hjfe_shared;
  j["translation_scale_mm"] = c.translation_scale_mm;
  j["hand_model"] = c.hand_model;
  j["rig_vertices"] = c.rig_vertices;
  j["seed"] = c.seed;
  j["samples"] = c.samples;
  j["image_noise"] = c.image_noise;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["lr_milestones"] = c.lr_milestones;
  j["lr_decay"] = c.lr_decay;
  j["loss_weights"] = c.loss_weights;
  return j.dump(2);
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

}  // namespace vmbh
