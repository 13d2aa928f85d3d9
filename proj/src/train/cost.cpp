#include "vmbh/train.hpp"

namespace vmbh::train {

namespace {

using u64 = std::uint64_t;

u64 conv_params(u64 in, u64 out, u64 k, bool bias = true) { return in * out * k * k + (bias ? out : 0); }
u64 conv_flops(u64 in, u64 out, u64 k, u64 pixels) { return 2 * k * k * in * out * pixels; }
u64 linear_params(u64 in, u64 out) { return in * out + out; }
u64 matmul_flops(u64 m, u64 k, u64 n) { return 2 * m * k * n; }

ModelCost vmblock_cost(u64 width, u64 seq, const ssm::BlockOptions& o) {
  u64 E = width * o.expansion, N = o.state_dim, K = o.conv_width, R = width * o.mlp_ratio;
  ModelCost c;
  c.params = 2 * width + linear_params(width, 2 * E) + E * K + E + E * N + E + linear_params(E, E) +
             2 * linear_params(E, N) + linear_params(E, width) + 2 * width + linear_params(width, R) +
             linear_params(R, width);
  c.flops = matmul_flops(seq, width, 2 * E) + 2 * seq * E * K + matmul_flops(seq, E, E) + 2 * matmul_flops(seq, E, N) +
            ssm::scan_flops(seq, E, N) + matmul_flops(seq, E, width) + matmul_flops(seq, width, R) +
            matmul_flops(seq, R, width);
  return c;
}

void operator+=(ModelCost& a, const ModelCost& b) {
  a.params += b.params;
  a.flops += b.flops;
}

}  // namespace

ModelCost count_params_flops(const PipelineConfig& config, std::size_t vertices, bool pose_blend) {
  config.validate();
  const u64 C = config.backbone_channels, c = config.hand_channels(), J = config.joints, D = config.depth_bins;
  const u64 h = config.feature_height(), w = config.feature_width(), hw = h * w;
  const u64 V = vertices;
  ModelCost cost;

  u64 in = 3;
  for (std::size_t i = 0; i < config.backbone_stages; ++i) {
    u64 out = C >> (config.backbone_stages - 1 - i);
    u64 pixels = (config.image_height >> (i + 1)) * (config.image_width >> (i + 1));
    cost += {conv_params(in, out, 3, false) + 2 * out, conv_flops(in, out, 3, pixels)};
    in = out;
  }
  cost += {2 * (conv_params(C, c, 1, false) + 2 * c), 2 * conv_flops(C, c, 1, hw)};

  cost += {conv_params(2 * c, 2 * c, 1), conv_flops(2 * c, 2 * c, 1, hw)};
  for (std::size_t i = 0; i < config.ife_depth; ++i) cost += vmblock_cost(2 * c, hw, config.block);
  u64 ci = c / 2 > 0 ? c / 2 : 1;
  cost.params += 2 * conv_params(c, ci, 1) + conv_params(c, ci, 1, false) + conv_params(ci, c, 1);
  u64 nl_flops = 3 * conv_flops(c, ci, 1, hw) + matmul_flops(hw, ci, hw) + matmul_flops(ci, hw, hw) +
                 conv_flops(ci, c, 1, hw);
  cost.flops += 2 * nl_flops;
  cost += {conv_params(2 * c, c, 1), 2 * conv_flops(2 * c, c, 1, hw)};

  u64 heads = config.hjfe_shared ? 1 : 2;
  cost.params += heads * (conv_params(c, J, 1, false) + conv_params(c, J * D, 1));
  cost.flops += 2 * (conv_flops(c, J, 1, hw) + conv_flops(c, J * D, 1, hw) + matmul_flops(J, hw, 2) +
                     matmul_flops(J, D, 1) + 8 * J * c);

  for (std::size_t i = 0; i < config.jvm_depth; ++i) {
    auto b = vmblock_cost(c, J, config.block);
    cost += {b.params, 2 * b.flops};
  }

  u64 pose_in = J * (c + 3), P = hand::kPoseJoints * 3, S = hand::kShapeDims;
  cost.params += 2 * linear_params(pose_in, P) + 2 * linear_params(c, S) + linear_params(2 * c, 3);
  cost.flops += 2 * (matmul_flops(1, pose_in, P) + matmul_flops(1, c, S)) + matmul_flops(1, 2 * c, 3);

  // Skinning per hand: shape blend, kinematic chain, optional pose blend,
  // blended transforms and joint regression.
  u64 fk = matmul_flops(3, 3, 1) + (hand::kPoseJoints - 1) * (matmul_flops(3, 3, 3) + 2 * matmul_flops(3, 3, 1));
  u64 hand_flops = matmul_flops(3 * V, S, 1) + fk + matmul_flops(V, hand::kPoseJoints, 12) +
                   matmul_flops(hand::kEvalJoints, V, 3);
  if (pose_blend) hand_flops += matmul_flops(3 * V, hand::kPoseFeatures, 1);
  cost.flops += 2 * hand_flops;
  return cost;
}

}  // namespace vmbh::train
