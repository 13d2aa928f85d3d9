#include <algorithm>
#include <cmath>
#include <sstream>

#include "vmbh/error.hpp"
#include "vmbh/train.hpp"

namespace vmbh::train {

namespace {

// World window shown by the camera, in millimeters: both hands with their
// fingers pointing up (+y), the left one around -T/2, the right one around +T/2.
constexpr double kWindowCenterX = -15.0;
constexpr double kWindowCenterY = 85.0;
constexpr double kWindowSpan = 340.0;

}  // namespace

SynthOptions SynthOptions::from_config(const PipelineConfig& config) {
  SynthOptions o;
  o.height = config.image_height;
  o.width = config.image_width;
  o.noise = config.image_noise;
  return o;
}

Projection projection_for(std::size_t height, std::size_t width) {
  double ppm = static_cast<double>(std::min(height, width)) / kWindowSpan;
  return {0.5 * static_cast<double>(width - 1) - ppm * kWindowCenterX,
          0.5 * static_cast<double>(height - 1) + ppm * kWindowCenterY, ppm};
}

void splat_blobs(std::vector<double>& channel, std::size_t height, std::size_t width,
                 const std::vector<std::array<double, 2>>& centers, const std::vector<double>& amplitudes,
                 double sigma) {
  if (channel.size() != height * width || centers.size() != amplitudes.size()) {
    throw DimensionError("splat_blobs: channel or amplitude count does not match");
  }
  double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t k = 0; k < centers.size(); ++k) {
    auto [cx, cy] = centers[k];
    for (std::size_t y = 0; y < height; ++y) {
      double dy = static_cast<double>(y) - cy;
      for (std::size_t x = 0; x < width; ++x) {
        double dx = static_cast<double>(x) - cx;
        channel[y * width + x] += amplitudes[k] * std::exp(-(dx * dx + dy * dy) * inv);
      }
    }
  }
}

double depth_amplitude(double z) { return std::clamp(1.0 + z / 200.0, 0.25, 1.75); }

std::array<double, 3> hand_offset(const hand::HandRig& rig, const Tensor& t_rel, bool right_hand) {
  auto root = rig.rest_joints.data();
  auto t = t_rel.data();
  double sign = right_hand ? 0.5 : -0.5;
  return {sign * t[0] - root[0], sign * t[1] - root[1], sign * t[2] - root[2]};
}

std::vector<TrainingSample> synth_dataset(const hand::HandRig& rig, std::size_t n, std::uint64_t seed,
                                          const SynthOptions& options) {
  if (n == 0) throw ContractError("synth_dataset: need at least one sample");
  NoGradGuard no_grad;
  Rng rng(seed);
  const std::size_t H = options.height, W = options.width, HW = H * W;
  auto project = projection_for(H, W);
  std::vector<TrainingSample> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    TrainingSample d;
    d.theta_l = rng.normal_tensor({hand::kPoseJoints, 3}, options.theta_sigma);
    d.theta_r = rng.normal_tensor({hand::kPoseJoints, 3}, options.theta_sigma);
    d.beta_l = rng.normal_tensor({hand::kShapeDims}, 1.0);
    d.beta_r = rng.normal_tensor({hand::kShapeDims}, 1.0);
    std::vector<double> t(3);
    for (std::size_t a = 0; a < 3; ++a) {
      t[a] = options.trel_center[a] + rng.uniform(-options.trel_half_box, options.trel_half_box);
    }
    d.t_rel = Tensor::from({3}, std::move(t));
    auto left = hand::lbs(rig, {d.theta_l, d.beta_l});
    auto right = hand::lbs(rig, {d.theta_r, d.beta_r});
    d.joints_l = left.joints;
    d.joints_r = right.joints;
    d.vertices_l = left.vertices;
    d.vertices_r = right.vertices;

    std::vector<double> image(3 * HW, 0.0);
    std::array<double, 4> box[2];
    for (int h = 0; h < 2; ++h) {
      const Tensor& joints = h == 0 ? d.joints_l : d.joints_r;
      auto off = hand_offset(rig, d.t_rel, h == 1);
      auto jd = joints.data();
      std::size_t J = joints.shape()[0];
      std::vector<std::array<double, 2>> centers(J);
      std::vector<double> amps(J);
      box[h] = {1e300, 1e300, -1e300, -1e300};
      for (std::size_t j = 0; j < J; ++j) {
        centers[j] = project(jd[3 * j] + off[0], jd[3 * j + 1] + off[1]);
        amps[j] = depth_amplitude(jd[3 * j + 2] + off[2]);
        box[h][0] = std::min(box[h][0], centers[j][0]);
        box[h][1] = std::min(box[h][1], centers[j][1]);
        box[h][2] = std::max(box[h][2], centers[j][0]);
        box[h][3] = std::max(box[h][3], centers[j][1]);
      }
      std::vector<double> channel(HW, 0.0);
      splat_blobs(channel, H, W, centers, amps, options.blob_sigma);
      std::copy(channel.begin(), channel.end(), image.begin() + static_cast<std::ptrdiff_t>(h * HW));
    }
    for (std::size_t i = 0; i < HW; ++i) image[2 * HW + i] = image[i] + image[HW + i];
    if (options.noise > 0.0) {
      for (auto& v : image) v += options.noise * rng.normal();
    }
    d.image = Tensor::from({3, H, W}, std::move(image));
    d.two_hand = box[0][0] <= box[1][2] && box[1][0] <= box[0][2] && box[0][1] <= box[1][3] && box[1][1] <= box[0][3];
    out.push_back(std::move(d));
  }
  return out;
}

namespace {

void check_points(const Tensor& a, const Tensor& b, const char* what) {
  if (a.dim() != 2 || a.shape()[1] != 3 || a.shape() != b.shape() || a.shape()[0] == 0) {
    throw DimensionError(std::string(what) + ": point sets " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " must both be [n,3] with n > 0");
  }
}

double aligned_error(std::span<const double> p, std::span<const double> g, std::size_t n, const double* pr,
                     const double* gr) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dx = (p[3 * i] - pr[0]) - (g[3 * i] - gr[0]);
    double dy = (p[3 * i + 1] - pr[1]) - (g[3 * i + 1] - gr[1]);
    double dz = (p[3 * i + 2] - pr[2]) - (g[3 * i + 2] - gr[2]);
    total += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return total / static_cast<double>(n);
}

}  // namespace

double mpjpe(const Tensor& pred_joints, const Tensor& gt_joints, std::size_t root_index) {
  check_points(pred_joints, gt_joints, "mpjpe");
  std::size_t n = pred_joints.shape()[0];
  if (root_index >= n) throw DimensionError("mpjpe: root index " + std::to_string(root_index) + " out of range");
  auto p = pred_joints.data();
  auto g = gt_joints.data();
  return aligned_error(p, g, n, &p[3 * root_index], &g[3 * root_index]);
}

double mpvpe(const Tensor& pred_vertices, const Tensor& gt_vertices, const Tensor& pred_root, const Tensor& gt_root) {
  check_points(pred_vertices, gt_vertices, "mpvpe");
  if (pred_root.numel() != 3 || gt_root.numel() != 3) throw DimensionError("mpvpe: roots must hold 3 coordinates");
  return aligned_error(pred_vertices.data(), gt_vertices.data(), pred_vertices.shape()[0], pred_root.data().data(),
                       gt_root.data().data());
}

SplitMetrics evaluate(const pipeline::Model& model, const std::vector<TrainingSample>& data) {
  if (data.empty()) throw ContractError("evaluate: dataset is empty");
  NoGradGuard no_grad;
  auto weights = LossWeights::from_config(model.config());
  SplitMetrics m;
  double j_sum[2] = {0, 0}, v_sum[2] = {0, 0};
  for (const auto& d : data) {
    auto out = model.forward(d.image);
    m.loss += loss(out, d, weights).total.item();
    double j = 0.5 * (mpjpe(out.left.mesh.joints, d.joints_l) + mpjpe(out.right.mesh.joints, d.joints_r));
    auto root = [](const Tensor& joints) { return reshape(slice(joints, 0, 0, 1), {3}); };
    double v = 0.5 * (mpvpe(out.left.mesh.vertices, d.vertices_l, root(out.left.mesh.joints), root(d.joints_l)) +
                      mpvpe(out.right.mesh.vertices, d.vertices_r, root(out.right.mesh.joints), root(d.joints_r)));
    int s = d.two_hand ? 1 : 0;
    j_sum[s] += j;
    v_sum[s] += v;
    (d.two_hand ? m.count_two : m.count_single) += 1;
  }
  double n = static_cast<double>(data.size());
  m.loss /= n;
  auto avg = [](double total, std::size_t count) {
    return count == 0 ? std::nan("") : total / static_cast<double>(count);
  };
  m.mpjpe_single = avg(j_sum[0], m.count_single);
  m.mpjpe_two = avg(j_sum[1], m.count_two);
  m.mpjpe_all = (j_sum[0] + j_sum[1]) / n;
  m.mpvpe_single = avg(v_sum[0], m.count_single);
  m.mpvpe_two = avg(v_sum[1], m.count_two);
  m.mpvpe_all = (v_sum[0] + v_sum[1]) / n;
  return m;
}

std::string metrics_csv(const SplitMetrics& m, const std::string& split_name) {
  std::ostringstream os;
  os.precision(17);
  auto field = [&](double v) {
    os << ',';
    if (!std::isnan(v)) os << v;
  };
  os << "split,mpjpe_single,mpjpe_two,mpjpe_all,mpvpe_single,mpvpe_two,mpvpe_all\n" << split_name;
  field(m.mpjpe_single);
  field(m.mpjpe_two);
  field(m.mpjpe_all);
  field(m.mpvpe_single);
  field(m.mpvpe_two);
  field(m.mpvpe_all);
  os << '\n';
  return os.str();
}

}  // namespace vmbh::train
