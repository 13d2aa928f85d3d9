#include <cmath>

#include "vmbh/error.hpp"
#include "vmbh/handmodel.hpp"

namespace vmbh::hand {

void HandRig::validate() const {
  auto fail = [](const std::string& what) { throw FormatError("hand rig invariant violated: " + what); };
  if (!template_vertices.defined() || template_vertices.dim() != 2 || template_vertices.shape()[1] != 3) {
    fail("template vertices must be [V,3]");
  }
  std::size_t V = vertex_count();
  for (const auto& f : faces) {
    for (auto i : f) {
      if (i >= V) fail("face index " + std::to_string(i) + " out of range");
    }
  }
  if (parents.size() != kPoseJoints) fail("joint tree must have 16 nodes");
  if (parents[0] != -1) fail("joint 0 must be the root (parent -1)");
  for (std::size_t k = 1; k < kPoseJoints; ++k) {
    if (parents[k] < 0 || static_cast<std::size_t>(parents[k]) >= k) {
      fail("parent of joint " + std::to_string(k) + " must precede it (topological order)");
    }
  }
  if (!rest_joints.defined() || rest_joints.shape() != Shape{kPoseJoints, 3}) fail("rest joints must be [16,3]");
  if (!skin_weights.defined() || skin_weights.shape() != Shape{V, kPoseJoints}) {
    fail("skinning weights must be [V,16]");
  }
  auto w = skin_weights.data();
  for (std::size_t i = 0; i < V; ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < kPoseJoints; ++k) {
      double v = w[i * kPoseJoints + k];
      if (!(v >= 0.0)) fail("skinning weights must be nonnegative (vertex " + std::to_string(i) + ")");
      total += v;
    }
    if (std::fabs(total - 1.0) > 1e-9) fail("skinning weight row " + std::to_string(i) + " must sum to 1");
  }
  if (!shape_dirs.defined() || shape_dirs.shape() != Shape{V, 3, kShapeDims}) fail("shape blendshapes must be [V,3,10]");
  if (!joint_regressor.defined() || joint_regressor.shape() != Shape{kEvalJoints, V}) {
    fail("joint regressor must be [21,V]");
  }
  auto r = joint_regressor.data();
  for (std::size_t j = 0; j < kEvalJoints; ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < V; ++i) total += r[j * V + i];
    if (std::fabs(total - 1.0) > 1e-9) fail("joint regressor row " + std::to_string(j) + " must sum to 1");
  }
  if (pose_dirs.defined() && pose_dirs.shape() != Shape{V, 3, kPoseFeatures}) {
    fail("pose blendshapes must be [V,3,135]");
  }
  for (const Tensor* t : {&template_vertices, &rest_joints, &shape_dirs, &joint_regressor, &skin_weights}) {
    for (double v : t->data()) {
      if (!std::isfinite(v)) fail("all rig values must be finite");
    }
  }
}

Tensor Kinematics::joint_positions() const {
  std::vector<Tensor> rows;
  rows.reserve(world_translation.size());
  for (const auto& t : world_translation) rows.push_back(reshape(t, {1, 3}));
  return concat(rows, 0);
}

Tensor Kinematics::relative_transforms_4x4() const {
  std::size_t n = relative.shape()[0];
  auto bottom = Tensor::from({n, 1, 4}, [n] {
    std::vector<double> v(n * 4, 0.0);
    for (std::size_t k = 0; k < n; ++k) v[k * 4 + 3] = 1.0;
    return v;
  }());
  return concat({relative, bottom}, 1);
}

Kinematics forward_kinematics(const HandRig& rig, const Tensor& theta) {
  if (theta.shape() != Shape{kPoseJoints, 3}) {
    throw DimensionError("forward_kinematics: theta must be [16,3], got " + shape_str(theta.shape()));
  }
  Kinematics kin;
  kin.world_rotation.resize(kPoseJoints);
  kin.world_translation.resize(kPoseJoints);
  auto rest = rig.rest_joints.data();
  auto rest_col = [&](std::size_t k) { return Tensor::from({3, 1}, {rest[3 * k], rest[3 * k + 1], rest[3 * k + 2]}); };
  std::vector<Tensor> rows;
  rows.reserve(kPoseJoints);
  for (std::size_t k = 0; k < kPoseJoints; ++k) {
    auto local = rodrigues(reshape(slice(theta, 0, k, k + 1), {3}));
    if (k == 0) {
      kin.world_rotation[0] = local;
      kin.world_translation[0] = rest_col(0);
    } else {
      auto p = static_cast<std::size_t>(rig.parents[k]);
      auto offset = Tensor::from({3, 1}, {rest[3 * k] - rest[3 * p], rest[3 * k + 1] - rest[3 * p + 1],
                                          rest[3 * k + 2] - rest[3 * p + 2]});
      kin.world_rotation[k] = matmul(kin.world_rotation[p], local);
      kin.world_translation[k] = add(matmul(kin.world_rotation[p], offset), kin.world_translation[p]);
    }
    auto t_rel = sub(kin.world_translation[k], matmul(kin.world_rotation[k], rest_col(k)));
    rows.push_back(reshape(concat({kin.world_rotation[k], t_rel}, 1), {1, 3, 4}));
  }
  kin.relative = concat(rows, 0);
  return kin;
}

HandOutput lbs(const HandRig& rig, const HandParams& params) {
  if (params.beta.shape() != Shape{kShapeDims}) {
    throw DimensionError("lbs: beta must be [10], got " + shape_str(params.beta.shape()));
  }
  std::size_t V = rig.vertex_count();
  auto shape_offset = matmul(reshape(rig.shape_dirs, {V * 3, kShapeDims}), reshape(params.beta, {kShapeDims, 1}));
  auto shaped = add(rig.template_vertices, reshape(shape_offset, {V, 3}));

  auto kin = forward_kinematics(rig, params.theta);
  if (rig.pose_dirs.defined()) {
    std::vector<Tensor> feats;
    auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    for (std::size_t k = 1; k < kPoseJoints; ++k) {
      auto local = rodrigues(reshape(slice(params.theta, 0, k, k + 1), {3}));
      feats.push_back(reshape(sub(local, eye), {9, 1}));
    }
    auto pose_offset = matmul(reshape(rig.pose_dirs, {V * 3, kPoseFeatures}), concat(feats, 0));
    shaped = add(shaped, reshape(pose_offset, {V, 3}));
  }

  auto blended = reshape(matmul(rig.skin_weights, reshape(kin.relative, {kPoseJoints, 12})), {V, 3, 4});
  auto homog = reshape(concat({shaped, Tensor::ones({V, 1})}, 1), {V, 1, 4});
  auto vertices = sum(mul(blended, homog), {2});
  auto joints = matmul(rig.joint_regressor, vertices);
  return {vertices, joints};
}

}  // namespace vmbh::hand
