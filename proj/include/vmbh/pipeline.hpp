#pragma once

#include <string>
#include <vector>

#include "vmbh/config.hpp"
#include "vmbh/handmodel.hpp"
#include "vmbh/nn.hpp"
#include "vmbh/ssm.hpp"

namespace vmbh::pipeline {

// Which activation a feature map holds.
enum class MapRole { F, FL, FR, FConcat, FEnh, FEnhL, FEnhR, FInterL, FInterR, FEnhLStar, FEnhRStar };

struct FeatureMap {
  Tensor data;  // [c,h,w]
  MapRole role = MapRole::F;
};

struct Heatmap2p5D {
  Tensor spatial_logits;  // [J,h,w]
  Tensor depth_logits;    // [J,D]
};

// Soft-argmax joint locations in the heatmap frame: x in [0,w-1],
// y in [0,h-1], z in [0,D-1]. The sampling positions are `xy`.
struct JointCoords {
  Tensor xy;  // [J,2]
  Tensor z;   // [J]

  Tensor stacked() const;  // [J,3]
};

struct JointFeatures {
  Tensor data;  // [J,c]
  bool refined = false;
};

// Soft-argmax: softmax(logits [n,p]) times positions [p,k] -> [n,k].
Tensor soft_argmax(const Tensor& logits, const Tensor& positions);
// Pixel-center coordinates (x, y) of an h x w grid in row-major order, [h*w,2].
Tensor grid_positions(std::size_t height, std::size_t width);
// Bin indices 0..D-1 as [D,1].
Tensor bin_positions(std::size_t bins);

struct Backbone {
  std::vector<nn::Conv2dLayer> stages;
  std::vector<nn::ChannelNormLayer> stage_norms;
  nn::Conv2dLayer left;
  nn::ChannelNormLayer left_norm;
  nn::Conv2dLayer right;
  nn::ChannelNormLayer right_norm;
};

struct VmIfeBlock {
  nn::Conv2dLayer reduce;  // 2c -> 2c, 1x1
  std::vector<ssm::VmBlockLayer> blocks;
  std::vector<ssm::ScanOrder> orders;
  nn::NonLocalBlock ifem;  // shared by both cross directions
  nn::Conv2dLayer fuse;    // [F_enh, F_inter] 2c -> c, 1x1, shared by both hands
};

struct HjfeHead {
  nn::Conv2dLayer heatmap;  // c -> J
  nn::Conv2dLayer depth;    // c -> J*D
};

struct Dhpr {
  nn::Linear pose_left, pose_right;    // J*(c+3) -> 48
  nn::Linear shape_left, shape_right;  // c -> 10
  nn::Linear translation;              // 2c -> 3
};

struct HandOutputs {
  FeatureMap star;          // F_enh^{*} for this hand
  Heatmap2p5D heatmap;      // H-hat
  JointCoords coords;       // J (2.5D); P = coords.xy
  JointFeatures features;   // F_J
  JointFeatures refined;    // F'_J
  hand::HandParams params;  // theta, beta
  hand::HandOutput mesh;    // V and regressed 3-D joints (mm)
};

struct FullOutput {
  HandOutputs left;
  HandOutputs right;
  Tensor t_rel;  // [3] mm, right root relative to left root
};

class Model {
 public:
  Model(PipelineConfig config, hand::HandRig rig);
  explicit Model(const PipelineConfig& config);  // rig from config.hand_model

  const PipelineConfig& config() const { return config_; }
  const hand::HandRig& rig() const { return rig_; }

  FullOutput forward(const Tensor& image) const;

  std::pair<FeatureMap, FeatureMap> backbone(const Tensor& image) const;
  std::pair<FeatureMap, FeatureMap> vm_ifeblock(const FeatureMap& left, const FeatureMap& right) const;
  void hjfe(const FeatureMap& star, bool right_hand, Heatmap2p5D& heatmap, JointCoords& coords,
            JointFeatures& features) const;
  std::pair<JointFeatures, JointFeatures> jvmblock(const JointFeatures& left, const JointFeatures& right) const;
  // Returns (left params, right params, T_rel).
  std::tuple<hand::HandParams, hand::HandParams, Tensor> dhpr(const JointFeatures& refined_left,
                                                             const JointFeatures& refined_right,
                                                             const JointCoords& coords_left,
                                                             const JointCoords& coords_right,
                                                             const FeatureMap& star_left,
                                                             const FeatureMap& star_right) const;

  // Named trainable tensors in a fixed order.
  ParamList parameters() const;

  // Mutable access for tests and tooling.
  Backbone& backbone_layers() { return backbone_; }
  VmIfeBlock& ife_layers() { return ife_; }
  std::vector<HjfeHead>& hjfe_layers() { return hjfe_; }
  std::vector<ssm::VmBlockLayer>& jvm_layers() { return jvm_; }
  Dhpr& dhpr_layers() { return dhpr_; }

  // Identity-composition setup: reduce and fuse pass features through,
  // every VMBlock and the IFEM projection become exact identities.
  void make_ife_pass_through();

 private:
  const HjfeHead& hjfe_head(bool right_hand) const;

  PipelineConfig config_;
  hand::HandRig rig_;
  Backbone backbone_;
  VmIfeBlock ife_;
  std::vector<HjfeHead> hjfe_;
  std::vector<ssm::VmBlockLayer> jvm_;
  Dhpr dhpr_;
};

hand::HandRig rig_for(const PipelineConfig& config);

}  // namespace vmbh::pipeline
