#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vmbh/ssm.hpp"

namespace vmbh {

// Every tunable of the network, the synthetic data and the trainer.
// Serialized as a flat JSON object; unknown keys are rejected.
struct PipelineConfig {
  std::string profile = "toy";

  std::size_t image_height = 64;
  std::size_t image_width = 64;
  std::size_t backbone_channels = 64;  // C; per-hand maps carry C/4
  std::size_t backbone_stages = 3;     // stride-2 stages, divisor 2^stages
  std::size_t joints = 21;             // estimated joints per hand
  std::size_t depth_bins = 16;

  std::size_t ife_depth = 2;  // VMBlocks in the interaction block
  std::size_t jvm_depth = 2;  // VMBlocks in the joint block
  std::vector<ssm::ScanOrder> ife_scan_orders{ssm::ScanOrder::RowMajor, ssm::ScanOrder::ColumnMajor};
  ssm::BlockOptions block;
  bool hjfe_shared = true;
  double translation_scale_mm = 100.0;

  std::string hand_model = "procedural";  // or a path to a rig JSON file
  std::size_t rig_vertices = 252;
  std::uint64_t seed = 0;

  // Synthetic data.
  std::size_t samples = 8;
  double image_noise = 0.0;

  // Training.
  std::size_t epochs = 500;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  std::vector<std::size_t> lr_milestones;
  double lr_decay = 0.1;
  std::array<double, 9> loss_weights{1, 1, 1, 1, 1, 1, 1, 1, 1};

  static PipelineConfig toy();
  static PipelineConfig full();

  std::size_t hand_channels() const { return backbone_channels / 4; }
  std::size_t divisor() const { return std::size_t{1} << backbone_stages; }
  std::size_t feature_height() const { return image_height / divisor(); }
  std::size_t feature_width() const { return image_width / divisor(); }
  ssm::ScanOrder ife_order(std::size_t block_index) const;

  // Throws ConfigError on the first invalid field.
  void validate() const;
};

PipelineConfig config_from_json(const std::string& text);
std::string config_to_json(const PipelineConfig& config);
PipelineConfig load_config(const std::string& path);

}  // namespace vmbh
