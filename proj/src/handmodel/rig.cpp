#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vmbh/error.hpp"
#include "vmbh/handmodel.hpp"
#include "vmbh/rng.hpp"

namespace vmbh::hand {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  Vec3 ab = b - a;
  double t = std::clamp(dot(p - a, ab) / dot(ab, ab), 0.0, 1.0);
  return norm(p - (a + t * ab));
}

struct FingerSpec {
  Vec3 base;
  Vec3 dir;
  std::array<double, 3> lengths;
  double radius;
};

// Thumb, index, middle, ring, pinky. Palm in the xy plane, fingers along +y.
const std::array<FingerSpec, 5> kFingers = {{
    {{-22.0, 25.0, 0.0}, {-0.6, 0.8, 0.0}, {35.0, 30.0, 25.0}, 9.0},
    {{-17.0, 80.0, 0.0}, {-0.08, 1.0, 0.0}, {40.0, 25.0, 20.0}, 8.0},
    {{-3.0, 83.0, 0.0}, {0.0, 1.0, 0.0}, {45.0, 28.0, 22.0}, 8.0},
    {{11.0, 79.0, 0.0}, {0.08, 1.0, 0.0}, {42.0, 26.0, 20.0}, 7.5},
    {{24.0, 70.0, 0.0}, {0.18, 1.0, 0.0}, {33.0, 20.0, 18.0}, 7.0},
}};

struct Bone {
  std::size_t owner;  // joint whose transform drives the bone
  Vec3 start, end;
  double radius;
  std::size_t finger;
};

}  // namespace

HandRig make_default_rig(std::uint64_t seed, std::size_t vertices) {
  constexpr std::size_t kRing = 6;
  constexpr std::size_t kBones = 20;
  if (vertices < kRing * kBones) {
    throw ConfigError("hand rig needs at least " + std::to_string(kRing * kBones) + " vertices, got " +
                      std::to_string(vertices));
  }
  Rng rng(seed);

  std::vector<Vec3> joints(kPoseJoints, Vec3{0, 0, 0});
  std::vector<int> parents(kPoseJoints, 0);
  parents[0] = -1;
  std::array<Vec3, 5> tips{};
  std::vector<Bone> bones;
  for (std::size_t f = 0; f < 5; ++f) {
    const auto& spec = kFingers[f];
    Vec3 dir = (1.0 / norm(spec.dir)) * spec.dir;
    Vec3 p = spec.base;
    std::size_t j0 = 1 + 3 * f;
    bones.push_back({0, joints[0], p, spec.radius + 1.5, f});
    for (std::size_t s = 0; s < 3; ++s) {
      std::size_t j = j0 + s;
      joints[j] = p;
      parents[j] = s == 0 ? 0 : static_cast<int>(j - 1);
      double len = spec.lengths[s] * rng.uniform(0.95, 1.05);
      Vec3 next = p + len * dir;
      bones.push_back({j, p, next, spec.radius - 0.7 * static_cast<double>(s), f});
      p = next;
    }
    tips[f] = p;
  }

  // Ring groups distributed over the bones, leftovers become fingertip caps.
  std::size_t rings = vertices / kRing;
  std::size_t caps = vertices % kRing;
  std::vector<Vec3> verts;
  std::vector<std::size_t> vert_bone;
  std::vector<std::array<std::uint32_t, 3>> faces;
  verts.reserve(vertices);
  for (std::size_t b = 0; b < kBones; ++b) {
    const Bone& bone = bones[b];
    std::size_t n_rings = rings / kBones + (b < rings % kBones ? 1 : 0);
    Vec3 axis = bone.end - bone.start;
    Vec3 dir = (1.0 / norm(axis)) * axis;
    Vec3 u{0.0, 0.0, 1.0};
    Vec3 v = cross(dir, u);
    std::size_t first = verts.size();
    for (std::size_t r = 0; r < n_rings; ++r) {
      double t = (static_cast<double>(r) + 0.5) / static_cast<double>(n_rings);
      Vec3 center = bone.start + t * axis;
      double phase = static_cast<double>(r % 2) * std::numbers::pi / kRing;
      for (std::size_t k = 0; k < kRing; ++k) {
        double phi = 2.0 * std::numbers::pi * static_cast<double>(k) / kRing + phase;
        verts.push_back(center + bone.radius * (std::cos(phi) * u + std::sin(phi) * v));
        vert_bone.push_back(b);
      }
      if (r > 0) {
        auto a0 = static_cast<std::uint32_t>(first + (r - 1) * kRing);
        auto b0 = static_cast<std::uint32_t>(first + r * kRing);
        for (std::uint32_t k = 0; k < kRing; ++k) {
          std::uint32_t k1 = (k + 1) % kRing;
          faces.push_back({a0 + k, a0 + k1, b0 + k});
          faces.push_back({a0 + k1, b0 + k1, b0 + k});
        }
      }
    }
  }
  for (std::size_t c = 0; c < caps; ++c) {
    // Caps close the distal bone of finger c.
    std::size_t b = 4 * c + 3;
    std::size_t ring_start = 0;
    std::size_t ring_count = 0;
    for (std::size_t i = 0; i < verts.size(); ++i) {
      if (vert_bone[i] == b) {
        if (ring_count == 0) ring_start = i;
        ++ring_count;
      }
    }
    auto tip_index = static_cast<std::uint32_t>(verts.size());
    verts.push_back(tips[c]);
    vert_bone.push_back(b);
    auto last = static_cast<std::uint32_t>(ring_start + ring_count - kRing);
    for (std::uint32_t k = 0; k < kRing; ++k) {
      faces.push_back({last + k, last + static_cast<std::uint32_t>((k + 1) % kRing), tip_index});
    }
  }
  std::size_t V = verts.size();

  // Skinning: Gaussian falloff of the distance to each joint's bones.
  constexpr double kSigma = 10.0;
  std::vector<double> weights(V * kPoseJoints, 0.0);
  for (std::size_t i = 0; i < V; ++i) {
    std::array<double, kPoseJoints> dist{};
    dist.fill(1e300);
    for (const auto& bone : bones) {
      dist[bone.owner] = std::min(dist[bone.owner], segment_distance(verts[i], bone.start, bone.end));
    }
    double total = 0.0;
    for (std::size_t k = 0; k < kPoseJoints; ++k) {
      double w = std::exp(-0.5 * dist[k] * dist[k] / (kSigma * kSigma));
      if (w < 1e-4) w = 0.0;
      weights[i * kPoseJoints + k] = w;
      total += w;
    }
    if (total == 0.0) {
      weights[i * kPoseJoints + bones[vert_bone[i]].owner] = 1.0;
      total = 1.0;
    }
    for (std::size_t k = 0; k < kPoseJoints; ++k) weights[i * kPoseJoints + k] /= total;
  }

  // Shape directions: global scale, finger length, palm width, thickness,
  // then six smooth seeded fields blended through the skinning weights.
  std::vector<double> shape(V * 3 * kShapeDims, 0.0);
  auto set_dir = [&](std::size_t i, std::size_t s, const Vec3& d) {
    for (std::size_t a = 0; a < 3; ++a) shape[(i * 3 + a) * kShapeDims + s] = d[a];
  };
  std::vector<std::array<Vec3, kPoseJoints>> fields(6);
  for (auto& field : fields) {
    for (auto& vec : field) vec = {rng.normal(0.0, 1.5), rng.normal(0.0, 1.5), rng.normal(0.0, 1.0)};
  }
  for (std::size_t i = 0; i < V; ++i) {
    const Vec3& p = verts[i];
    const Bone& bone = bones[vert_bone[i]];
    const auto& spec = kFingers[bone.finger];
    Vec3 dir = (1.0 / norm(spec.dir)) * spec.dir;
    set_dir(i, 0, 0.04 * p);
    double along = std::max(0.0, dot(p - spec.base, dir));
    set_dir(i, 1, (0.05 * along) * dir);
    set_dir(i, 2, Vec3{0.05 * p[0], 0.0, 0.0});
    set_dir(i, 3, Vec3{0.0, 0.0, 0.1 * p[2]});
    for (std::size_t s = 0; s < fields.size(); ++s) {
      Vec3 d{0, 0, 0};
      for (std::size_t k = 0; k < kPoseJoints; ++k) d = d + weights[i * kPoseJoints + k] * fields[s][k];
      set_dir(i, 4 + s, d);
    }
  }

  // Regressor: mean of the six vertices nearest to each joint / fingertip.
  std::vector<Vec3> targets(joints.begin(), joints.end());
  targets.insert(targets.end(), tips.begin(), tips.end());
  std::vector<double> regressor(kEvalJoints * V, 0.0);
  std::vector<std::size_t> order(V);
  for (std::size_t j = 0; j < kEvalJoints; ++j) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return norm(verts[a] - targets[j]) < norm(verts[b] - targets[j]);
    });
    for (std::size_t q = 0; q < kRing; ++q) regressor[j * V + order[q]] = 1.0 / kRing;
  }

  HandRig rig;
  std::vector<double> tv;
  tv.reserve(V * 3);
  for (const auto& p : verts) tv.insert(tv.end(), p.begin(), p.end());
  rig.template_vertices = Tensor::from({V, 3}, std::move(tv));
  rig.faces = std::move(faces);
  rig.parents = std::move(parents);
  std::vector<double> rj;
  for (const auto& p : joints) rj.insert(rj.end(), p.begin(), p.end());
  rig.rest_joints = Tensor::from({kPoseJoints, 3}, std::move(rj));
  rig.skin_weights = Tensor::from({V, kPoseJoints}, std::move(weights));
  rig.shape_dirs = Tensor::from({V, 3, kShapeDims}, std::move(shape));
  rig.joint_regressor = Tensor::from({kEvalJoints, V}, std::move(regressor));
  rig.validate();
  return rig;
}

namespace {

using nlohmann::json;

json nested(const Tensor& t) {
  const auto& s = t.shape();
  auto d = t.data();
  if (s.size() == 2) {
    json out = json::array();
    for (std::size_t i = 0; i < s[0]; ++i) {
      out.push_back(std::vector<double>(d.begin() + static_cast<long>(i * s[1]),
                                        d.begin() + static_cast<long>((i + 1) * s[1])));
    }
    return out;
  }
  json out = json::array();
  for (std::size_t i = 0; i < s[0]; ++i) {
    json mid = json::array();
    for (std::size_t j = 0; j < s[1]; ++j) {
      auto off = static_cast<long>((i * s[1] + j) * s[2]);
      mid.push_back(std::vector<double>(d.begin() + off, d.begin() + off + static_cast<long>(s[2])));
    }
    out.push_back(std::move(mid));
  }
  return out;
}

// Parses a rectangular nested array of numbers into a tensor.
Tensor from_nested(const json& j, std::size_t rank, const std::string& key) {
  Shape shape;
  const json* cur = &j;
  for (std::size_t r = 0; r < rank; ++r) {
    if (!cur->is_array() || cur->empty()) throw FormatError("rig field '" + key + "' must be a non-empty nested array");
    shape.push_back(cur->size());
    cur = &(*cur)[0];
  }
  std::vector<double> data;
  data.reserve(numel_of(shape));
  auto walk = [&](auto&& self, const json& node, std::size_t depth) -> void {
    if (!node.is_array() || node.size() != shape[depth]) {
      throw FormatError("rig field '" + key + "' is not rectangular");
    }
    for (const auto& child : node) {
      if (depth + 1 == rank) {
        if (!child.is_number()) throw FormatError("rig field '" + key + "' must contain numbers");
        data.push_back(child.get<double>());
      } else {
        self(self, child, depth + 1);
      }
    }
  };
  walk(walk, j, 0);
  return Tensor::from(std::move(shape), std::move(data));
}

}  // namespace

std::string rig_to_json(const HandRig& rig) {
  json j;
  j["template"] = nested(rig.template_vertices);
  j["faces"] = rig.faces;
  j["parents"] = rig.parents;
  j["rest_joints"] = nested(rig.rest_joints);
  j["skin_weights"] = nested(rig.skin_weights);
  j["shape_dirs"] = nested(rig.shape_dirs);
  j["joint_regressor"] = nested(rig.joint_regressor);
  if (rig.pose_dirs.defined()) j["pose_dirs"] = nested(rig.pose_dirs);
  return j.dump();
}

HandRig rig_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("rig file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("rig file must contain a JSON object");
  static const std::vector<std::string> known = {"template",     "faces",      "parents",         "rest_joints",
                                                 "skin_weights", "shape_dirs", "joint_regressor", "pose_dirs"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw FormatError("rig file has unknown key '" + key + "'");
    }
  }
  for (std::size_t i = 0; i + 1 < known.size(); ++i) {
    if (!j.contains(known[i])) throw FormatError("rig file is missing '" + known[i] + "'");
  }
  HandRig rig;
  try {
    rig.template_vertices = from_nested(j["template"], 2, "template");
    rig.faces = j["faces"].get<std::vector<std::array<std::uint32_t, 3>>>();
    rig.parents = j["parents"].get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("rig file has malformed faces or parents: ") + e.what());
  }
  rig.rest_joints = from_nested(j["rest_joints"], 2, "rest_joints");
  rig.skin_weights = from_nested(j["skin_weights"], 2, "skin_weights");
  rig.shape_dirs = from_nested(j["shape_dirs"], 3, "shape_dirs");
  rig.joint_regressor = from_nested(j["joint_regressor"], 2, "joint_regressor");
  if (j.contains("pose_dirs")) rig.pose_dirs = from_nested(j["pose_dirs"], 3, "pose_dirs");
  rig.validate();
  return rig;
}

void save_rig(const HandRig& rig, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << rig_to_json(rig);
  if (!out) throw IoError("failed writing '" + path + "'");
}

HandRig load_rig(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open rig file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return rig_from_json(ss.str());
}

}  // namespace vmbh::hand
