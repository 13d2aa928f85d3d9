#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

#include "oracles.hpp"
#include "vmbh/handmodel.hpp"
#include "vmbh/nn.hpp"
#include "vmbh/rng.hpp"
#include "vmbh/tensor.hpp"

namespace testing_support {

inline std::vector<double> vec(const vmbh::Tensor& t) { return t.to_vector(); }

inline std::vector<double> vec_or_empty(const vmbh::Tensor& t) {
  return t.defined() ? t.to_vector() : std::vector<double>{};
}

inline oracle::RigData rig_data(const vmbh::hand::HandRig& rig) {
  oracle::RigData r;
  r.vertices = rig.vertex_count();
  r.template_vertices = vec(rig.template_vertices);
  r.parents = rig.parents;
  r.rest_joints = vec(rig.rest_joints);
  r.skin_weights = vec(rig.skin_weights);
  r.shape_dirs = vec(rig.shape_dirs);
  r.regressor = vec(rig.joint_regressor);
  r.pose_dirs = vec_or_empty(rig.pose_dirs);
  return r;
}

inline oracle::NonLocalWeights non_local_weights(const vmbh::nn::NonLocalBlock& b) {
  oracle::NonLocalWeights w;
  w.channels = b.theta.in_channels();
  w.inner = b.inner_channels();
  w.theta_w = vec(b.theta.weight);
  w.theta_b = vec_or_empty(b.theta.bias);
  w.phi_w = vec(b.phi.weight);
  w.phi_b = vec_or_empty(b.phi.bias);
  w.g_w = vec(b.g.weight);
  w.g_b = vec_or_empty(b.g.bias);
  w.z_w = vec(b.z.weight);
  w.z_b = vec_or_empty(b.z.bias);
  return w;
}

// Fills every parameter of a layer with fresh normal values so zero-initialized
// projections do not hide terms from an oracle comparison.
inline void randomize(const vmbh::ParamList& params, vmbh::Rng& rng, double stddev = 0.5) {
  for (const auto& p : params) {
    vmbh::Tensor alias = p.tensor;  // handles share storage
    for (double& v : alias.mutable_data()) v = rng.normal(0.0, stddev);
  }
}

inline bool bitwise_equal(const vmbh::Tensor& a, const vmbh::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::memcmp(&x[i], &y[i], sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace testing_support
