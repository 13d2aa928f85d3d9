#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vmbh/ops.hpp"
#include "vmbh/tensor.hpp"

namespace vmbh::hand {

inline constexpr std::size_t kPoseJoints = 16;   // articulated joints, root = wrist
inline constexpr std::size_t kShapeDims = 10;    // shape coefficients
inline constexpr std::size_t kEvalJoints = 21;   // 16 joints + 5 fingertips
inline constexpr std::size_t kPoseFeatures = (kPoseJoints - 1) * 9;

// Kinematic hand model with the MANO parameter interface. Units are
// millimeters. A real MANO asset fits the same fields.
struct HandRig {
  Tensor template_vertices;  // [V,3]
  std::vector<std::array<std::uint32_t, 3>> faces;
  std::vector<int> parents;  // [16], parents[0] == -1, parents[k] < k
  Tensor rest_joints;        // [16,3]
  Tensor skin_weights;       // [V,16], rows on the simplex
  Tensor shape_dirs;         // [V,3,10]
  Tensor joint_regressor;    // [21,V], rows sum to 1
  Tensor pose_dirs;          // optional [V,3,135]; undefined means none

  std::size_t vertex_count() const { return template_vertices.shape()[0]; }

  // Throws FormatError naming the first violated invariant.
  void validate() const;
};

struct HandParams {
  Tensor theta;  // [16,3] axis-angle, radians
  Tensor beta;   // [10]
};

struct HandOutput {
  Tensor vertices;  // [V,3]
  Tensor joints;    // [21,3], regressor * vertices
};

struct Kinematics {
  std::vector<Tensor> world_rotation;     // [3,3] per joint
  std::vector<Tensor> world_translation;  // [3,1] per joint
  // Skinning transforms G_k * G_k(rest)^-1 as [16,3,4] rows [R | t].
  Tensor relative;

  Tensor joint_positions() const;        // [16,3]
  Tensor relative_transforms_4x4() const;  // [16,4,4]
};

Kinematics forward_kinematics(const HandRig& rig, const Tensor& theta);

// Shape blend, optional pose blend, linear blend skinning, joint regression.
HandOutput lbs(const HandRig& rig, const HandParams& params);

// Procedural five-finger rig: wrist plus three joints per finger, ring-shaped
// vertex groups along each bone, distance-based skinning. Deterministic per
// seed. Needs vertices >= 120.
HandRig make_default_rig(std::uint64_t seed, std::size_t vertices = 252);

std::string rig_to_json(const HandRig& rig);
HandRig rig_from_json(const std::string& text);
void save_rig(const HandRig& rig, const std::string& path);
HandRig load_rig(const std::string& path);

}  // namespace vmbh::hand
