#include <algorithm>

#include "vmbh/error.hpp"
#include "vmbh/pipeline.hpp"

namespace vmbh::pipeline {

Tensor JointCoords::stacked() const {
  std::size_t J = xy.shape()[0];
  return concat({xy, reshape(z, {J, 1})}, 1);
}

Tensor soft_argmax(const Tensor& logits, const Tensor& positions) {
  if (logits.dim() != 2 || positions.dim() != 2 || logits.shape()[1] != positions.shape()[0]) {
    throw DimensionError("soft_argmax: logits " + shape_str(logits.shape()) + " do not match positions " +
                         shape_str(positions.shape()));
  }
  return matmul(softmax(logits, 1), positions);
}

Tensor grid_positions(std::size_t height, std::size_t width) {
  std::vector<double> p;
  p.reserve(height * width * 2);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      p.push_back(static_cast<double>(x));
      p.push_back(static_cast<double>(y));
    }
  }
  return Tensor::from({height * width, 2}, std::move(p));
}

Tensor bin_positions(std::size_t bins) {
  std::vector<double> p(bins);
  for (std::size_t d = 0; d < bins; ++d) p[d] = static_cast<double>(d);
  return Tensor::from({bins, 1}, std::move(p));
}

hand::HandRig rig_for(const PipelineConfig& config) {
  if (config.hand_model == "procedural") return hand::make_default_rig(config.seed, config.rig_vertices);
  return hand::load_rig(config.hand_model);
}

Model::Model(const PipelineConfig& config) : Model(config, rig_for(config)) {}

Model::Model(PipelineConfig config, hand::HandRig rig) : config_(std::move(config)), rig_(std::move(rig)) {
  config_.validate();
  rig_.validate();
  Rng rng(config_.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t C = config_.backbone_channels;
  const std::size_t c = config_.hand_channels();
  const std::size_t J = config_.joints;
  const std::size_t D = config_.depth_bins;
  const std::size_t stages = config_.backbone_stages;

  std::size_t in = 3;
  for (std::size_t i = 0; i < stages; ++i) {
    std::size_t out = C >> (stages - 1 - i);
    // Convolutions followed by a channel norm carry no bias; the norm removes it.
    backbone_.stages.push_back(nn::Conv2dLayer::init(in, out, 3, 2, 1, rng, false));
    backbone_.stage_norms.push_back(nn::ChannelNormLayer::init(out));
    in = out;
  }
  backbone_.left = nn::Conv2dLayer::init(C, c, 1, 1, 0, rng, false);
  backbone_.left_norm = nn::ChannelNormLayer::init(c);
  backbone_.right = nn::Conv2dLayer::init(C, c, 1, 1, 0, rng, false);
  backbone_.right_norm = nn::ChannelNormLayer::init(c);

  ife_.reduce = nn::Conv2dLayer::init(2 * c, 2 * c, 1, 1, 0, rng);
  for (std::size_t i = 0; i < config_.ife_depth; ++i) {
    ife_.blocks.push_back(ssm::VmBlockLayer::init(2 * c, config_.block, rng));
    ife_.orders.push_back(config_.ife_order(i));
  }
  ife_.ifem = nn::NonLocalBlock::init(c, rng);
  ife_.fuse = nn::Conv2dLayer::init(2 * c, c, 1, 1, 0, rng);

  for (std::size_t h = 0; h < (config_.hjfe_shared ? 1u : 2u); ++h) {
    // The spatial softmax is invariant to a per-joint offset: no heatmap bias.
    hjfe_.push_back({nn::Conv2dLayer::init(c, J, 1, 1, 0, rng, false), nn::Conv2dLayer::init(c, J * D, 1, 1, 0, rng)});
  }
  for (std::size_t i = 0; i < config_.jvm_depth; ++i) {
    jvm_.push_back(ssm::VmBlockLayer::init(c, config_.block, rng));
  }
  std::size_t pose_in = J * (c + 3);
  dhpr_.pose_left = nn::Linear::init(pose_in, hand::kPoseJoints * 3, rng);
  dhpr_.pose_right = nn::Linear::init(pose_in, hand::kPoseJoints * 3, rng);
  dhpr_.shape_left = nn::Linear::init(c, hand::kShapeDims, rng);
  dhpr_.shape_right = nn::Linear::init(c, hand::kShapeDims, rng);
  dhpr_.translation = nn::Linear::init(2 * c, 3, rng);
}

std::pair<FeatureMap, FeatureMap> Model::backbone(const Tensor& image) const {
  if (image.shape() != Shape{3, config_.image_height, config_.image_width}) {
    throw DimensionError("backbone: expected image [3," + std::to_string(config_.image_height) + "," +
                         std::to_string(config_.image_width) + "], got " + shape_str(image.shape()));
  }
  Tensor f = image;
  for (std::size_t i = 0; i < backbone_.stages.size(); ++i) {
    f = relu(nn::channel_norm(backbone_.stage_norms[i], nn::conv2d(backbone_.stages[i], f)));
  }
  auto left = relu(nn::channel_norm(backbone_.left_norm, nn::conv2d(backbone_.left, f)));
  auto right = relu(nn::channel_norm(backbone_.right_norm, nn::conv2d(backbone_.right, f)));
  return {{left, MapRole::FL}, {right, MapRole::FR}};
}

std::pair<FeatureMap, FeatureMap> Model::vm_ifeblock(const FeatureMap& left, const FeatureMap& right) const {
  const std::size_t c = config_.hand_channels();
  if (left.data.dim() != 3 || left.data.shape() != right.data.shape() || left.data.shape()[0] != c) {
    throw DimensionError("vm_ifeblock: hand maps " + shape_str(left.data.shape()) + " and " +
                         shape_str(right.data.shape()) + " must both be [" + std::to_string(c) + ",h,w]");
  }
  std::size_t h = left.data.shape()[1], w = left.data.shape()[2];
  auto f = nn::conv2d(ife_.reduce, concat({left.data, right.data}, 0));
  for (std::size_t i = 0; i < ife_.blocks.size(); ++i) {
    auto seq = ssm::featuremap_to_sequence(f, ife_.orders[i]);
    f = ssm::sequence_to_featuremap(ssm::vmblock_forward(ife_.blocks[i], seq), h, w, ife_.orders[i]);
  }
  auto enh_left = slice(f, 0, 0, c);
  auto enh_right = slice(f, 0, c, 2 * c);
  auto inter_left = nn::non_local(ife_.ifem, enh_left, enh_right);
  auto inter_right = nn::non_local(ife_.ifem, enh_right, enh_left);
  auto star_left = nn::conv2d(ife_.fuse, concat({enh_left, inter_left}, 0));
  auto star_right = nn::conv2d(ife_.fuse, concat({enh_right, inter_right}, 0));
  return {{star_left, MapRole::FEnhLStar}, {star_right, MapRole::FEnhRStar}};
}

const HjfeHead& Model::hjfe_head(bool right_hand) const {
  return hjfe_[right_hand && hjfe_.size() > 1 ? 1 : 0];
}

void Model::hjfe(const FeatureMap& star, bool right_hand, Heatmap2p5D& heatmap, JointCoords& coords,
                 JointFeatures& features) const {
  const auto& head = hjfe_head(right_hand);
  const std::size_t J = config_.joints;
  const std::size_t D = config_.depth_bins;
  if (star.data.dim() != 3 || star.data.shape()[0] != config_.hand_channels()) {
    throw DimensionError("hjfe: map " + shape_str(star.data.shape()) + " does not have " +
                         std::to_string(config_.hand_channels()) + " channels");
  }
  std::size_t h = star.data.shape()[1], w = star.data.shape()[2];
  heatmap.spatial_logits = nn::conv2d(head.heatmap, star.data);
  heatmap.depth_logits = reshape(mean(nn::conv2d(head.depth, star.data), {1, 2}), {J, D});
  coords.xy = soft_argmax(reshape(heatmap.spatial_logits, {J, h * w}), grid_positions(h, w));
  coords.z = reshape(soft_argmax(heatmap.depth_logits, bin_positions(D)), {J});
  features.data = grid_sample(star.data, coords.xy);
  features.refined = false;
}

std::pair<JointFeatures, JointFeatures> Model::jvmblock(const JointFeatures& left,
                                                        const JointFeatures& right) const {
  if (left.data.dim() != 2 || left.data.shape() != right.data.shape()) {
    throw DimensionError("jvmblock: joint features " + shape_str(left.data.shape()) + " and " +
                         shape_str(right.data.shape()) + " differ");
  }
  Tensor l = left.data;
  Tensor r = right.data;
  for (const auto& block : jvm_) {
    l = ssm::vmblock_forward(block, l);
    r = ssm::vmblock_forward(block, r);
  }
  return {{l, true}, {r, true}};
}

std::tuple<hand::HandParams, hand::HandParams, Tensor> Model::dhpr(const JointFeatures& refined_left,
                                                                   const JointFeatures& refined_right,
                                                                   const JointCoords& coords_left,
                                                                   const JointCoords& coords_right,
                                                                   const FeatureMap& star_left,
                                                                   const FeatureMap& star_right) const {
  const std::size_t J = config_.joints;
  const std::size_t c = config_.hand_channels();
  auto fw = static_cast<double>(std::max<std::size_t>(1, config_.feature_width() - 1));
  auto fh = static_cast<double>(std::max<std::size_t>(1, config_.feature_height() - 1));
  auto fd = static_cast<double>(config_.depth_bins - 1);
  auto coord_scale = Tensor::from({3}, {1.0 / fw, 1.0 / fh, 1.0 / fd});
  if (refined_left.data.shape() != Shape{J, c} || refined_right.data.shape() != Shape{J, c}) {
    throw DimensionError("dhpr: refined joint features must be [" + std::to_string(J) + "," + std::to_string(c) +
                         "]");
  }
  auto head = [&](const JointFeatures& feat, const JointCoords& coords, const nn::Linear& pose,
                  const nn::Linear& shape) {
    auto joint_in = concat({feat.data, mul(coords.stacked(), coord_scale)}, 1);
    hand::HandParams p;
    p.theta = reshape(nn::linear(pose, reshape(joint_in, {J * (c + 3)})), {hand::kPoseJoints, 3});
    p.beta = nn::linear(shape, mean(feat.data, {0}));
    return p;
  };
  auto left = head(refined_left, coords_left, dhpr_.pose_left, dhpr_.shape_left);
  auto right = head(refined_right, coords_right, dhpr_.pose_right, dhpr_.shape_right);
  auto pooled = concat({mean(star_left.data, {1, 2}), mean(star_right.data, {1, 2})}, 0);
  auto t_rel = scale(nn::linear(dhpr_.translation, pooled), config_.translation_scale_mm);
  return {left, right, t_rel};
}

FullOutput Model::forward(const Tensor& image) const {
  FullOutput out;
  auto [fl, fr] = backbone(image);
  auto [sl, sr] = vm_ifeblock(fl, fr);
  out.left.star = sl;
  out.right.star = sr;
  hjfe(sl, false, out.left.heatmap, out.left.coords, out.left.features);
  hjfe(sr, true, out.right.heatmap, out.right.coords, out.right.features);
  std::tie(out.left.refined, out.right.refined) = jvmblock(out.left.features, out.right.features);
  std::tie(out.left.params, out.right.params, out.t_rel) =
      dhpr(out.left.refined, out.right.refined, out.left.coords, out.right.coords, sl, sr);
  out.left.mesh = hand::lbs(rig_, out.left.params);
  out.right.mesh = hand::lbs(rig_, out.right.params);
  return out;
}

ParamList Model::parameters() const {
  ParamList p;
  for (std::size_t i = 0; i < backbone_.stages.size(); ++i) {
    backbone_.stages[i].collect(p, "backbone.stage" + std::to_string(i) + ".conv");
    backbone_.stage_norms[i].collect(p, "backbone.stage" + std::to_string(i) + ".norm");
  }
  backbone_.left.collect(p, "backbone.left.conv");
  backbone_.left_norm.collect(p, "backbone.left.norm");
  backbone_.right.collect(p, "backbone.right.conv");
  backbone_.right_norm.collect(p, "backbone.right.norm");
  ife_.reduce.collect(p, "ife.reduce");
  for (std::size_t i = 0; i < ife_.blocks.size(); ++i) ife_.blocks[i].collect(p, "ife.block" + std::to_string(i));
  ife_.ifem.collect(p, "ife.ifem");
  ife_.fuse.collect(p, "ife.fuse");
  for (std::size_t h = 0; h < hjfe_.size(); ++h) {
    std::string prefix = hjfe_.size() == 1 ? "hjfe" : (h == 0 ? "hjfe.left" : "hjfe.right");
    hjfe_[h].heatmap.collect(p, prefix + ".heatmap");
    hjfe_[h].depth.collect(p, prefix + ".depth");
  }
  for (std::size_t i = 0; i < jvm_.size(); ++i) jvm_[i].collect(p, "jvm.block" + std::to_string(i));
  dhpr_.pose_left.collect(p, "dhpr.pose_left");
  dhpr_.pose_right.collect(p, "dhpr.pose_right");
  dhpr_.shape_left.collect(p, "dhpr.shape_left");
  dhpr_.shape_right.collect(p, "dhpr.shape_right");
  dhpr_.translation.collect(p, "dhpr.translation");
  return p;
}

void Model::make_ife_pass_through() {
  const std::size_t c = config_.hand_channels();
  std::vector<double> eye(4 * c * c, 0.0);
  for (std::size_t i = 0; i < 2 * c; ++i) eye[i * 2 * c + i] = 1.0;
  ife_.reduce.weight = Tensor::from({2 * c, 2 * c, 1, 1}, std::move(eye), true);
  ife_.reduce.bias = Tensor::zeros({2 * c}, true);
  for (auto& b : ife_.blocks) b.zero_output_projections();
  ife_.ifem.z = nn::Conv2dLayer::zeros(ife_.ifem.inner_channels(), c, 1);
  std::vector<double> take_first(2 * c * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) take_first[i * 2 * c + i] = 1.0;
  ife_.fuse.weight = Tensor::from({c, 2 * c, 1, 1}, std::move(take_first), true);
  ife_.fuse.bias = Tensor::zeros({c}, true);
}

}  // namespace vmbh::pipeline
