#include <algorithm>
#include <numeric>

#include "vmbh/handmodel.hpp"
#include "vmbh/nn.hpp"
#include "vmbh/pipeline.hpp"
#include "vmbh/rng.hpp"
#include "vmbh/ssm.hpp"
#include "vmbh/train.hpp"
#include "vmbh/verify.hpp"

namespace vmbh::verify {

namespace {

constexpr double kOpTolerance = 1e-6;
constexpr double kNetworkTolerance = 1e-5;

Tensor leaf(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  return rng.uniform_tensor(std::move(shape), lo, hi, true);
}

// Uniform magnitudes in [lo, hi] with random signs; keeps kinks and poles
// out of reach of the finite-difference step.
Tensor signed_leaf(Rng& rng, Shape shape, double lo, double hi) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Distinct values spread over [-2,2] so the maximum is unique.
Tensor distinct_leaf(Rng& rng, Shape shape) {
  std::size_t n = numel_of(shape);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = -2.0 + 4.0 * (static_cast<double>(perm[i]) + 0.5) / static_cast<double>(n);
  return Tensor::from(std::move(shape), std::move(v), true);
}

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

GradcheckResult check(const GraphFn& fn, const std::vector<Tensor>& inputs, std::uint64_t seed,
                      double tolerance = kOpTolerance, std::size_t max_coords = 0) {
  GradcheckOptions o;
  o.joint = false;
  o.tolerance = tolerance;
  o.max_coords = max_coords;
  o.seed = seed;
  return gradcheck("", fn, inputs, o);
}

// Modules built from checked primitives are scored on their joint gradient
// vector: roundoff of the deeper graph would otherwise dominate inputs whose
// gradients are tiny.
GradcheckResult check_module(const GraphFn& fn, const std::vector<Tensor>& inputs, std::uint64_t seed,
                             double tolerance = kOpTolerance, std::size_t max_coords = 0) {
  GradcheckOptions o;
  o.joint = true;
  o.tolerance = tolerance;
  o.max_coords = max_coords;
  o.seed = seed;
  return gradcheck("", fn, inputs, o);
}

using Inputs = const std::vector<Tensor>&;

GradcheckResult unary_case(std::uint64_t seed, Tensor (*op)(const Tensor&), double lo, double hi, bool signed_range) {
  Rng rng(seed);
  auto x = signed_range ? signed_leaf(rng, {3, 4}, lo, hi) : leaf(rng, {3, 4}, lo, hi);
  return check([op](Inputs in) { return op(in[0]); }, {x}, seed);
}

std::vector<GradcheckCase> build_cases() {
  std::vector<GradcheckCase> cases;
  auto add_case = [&](std::string name, std::function<GradcheckResult(const PipelineConfig&, std::uint64_t)> fn) {
    cases.push_back({std::move(name), std::move(fn)});
  };

  add_case("add_broadcast", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return add(in[0], in[1]); }, {leaf(rng, {2, 3}), leaf(rng, {3})}, seed);
  });
  add_case("sub", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return sub(in[0], in[1]); }, {leaf(rng, {2, 3}), leaf(rng, {2, 1})}, seed);
  });
  add_case("mul_broadcast", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return mul(in[0], in[1]); }, {leaf(rng, {3, 1}), leaf(rng, {1, 4})}, seed);
  });
  add_case("div", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return div(in[0], in[1]); }, {leaf(rng, {2, 3}), signed_leaf(rng, {3}, 0.5, 2.0)},
                 seed);
  });
  add_case("scale", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return add_scalar(scale(neg(in[0]), 1.7), 0.3); }, {leaf(rng, {5})}, seed);
  });
  add_case("relu", [](const PipelineConfig&, std::uint64_t seed) { return unary_case(seed, relu, 0.1, 2.0, true); });
  add_case("silu", [](const PipelineConfig&, std::uint64_t seed) { return unary_case(seed, silu, -2.0, 2.0, false); });
  add_case("sigmoid",
           [](const PipelineConfig&, std::uint64_t seed) { return unary_case(seed, sigmoid, -2.0, 2.0, false); });
  add_case("exp", [](const PipelineConfig&, std::uint64_t seed) { return unary_case(seed, exp, -2.0, 2.0, false); });
  add_case("log", [](const PipelineConfig&, std::uint64_t seed) { return unary_case(seed, log, 0.5, 2.0, false); });
  add_case("softplus",
           [](const PipelineConfig&, std::uint64_t seed) { return unary_case(seed, softplus, -2.0, 2.0, false); });
  add_case("abs", [](const PipelineConfig&, std::uint64_t seed) { return unary_case(seed, abs, 0.1, 2.0, true); });
  add_case("sqrt", [](const PipelineConfig&, std::uint64_t seed) { return unary_case(seed, sqrt, 0.5, 2.0, false); });
  add_case("square",
           [](const PipelineConfig&, std::uint64_t seed) { return unary_case(seed, square, -2.0, 2.0, false); });
  add_case("sum", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return add(sum(in[0], {1}), sum(in[0])); }, {leaf(rng, {3, 4})}, seed);
  });
  add_case("mean", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return mean(in[0], {0, 2}, true); }, {leaf(rng, {2, 3, 4})}, seed);
  });
  add_case("max", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return max(in[0], {1}); }, {distinct_leaf(rng, {3, 5})}, seed);
  });
  add_case("reshape_permute", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return reshape(permute(in[0], {2, 0, 1}), {4, 6}); }, {leaf(rng, {2, 3, 4})}, seed);
  });
  add_case("concat_slice", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return slice(concat({in[0], in[1]}, 1), 1, 1, 5); },
                 {leaf(rng, {2, 3}), leaf(rng, {2, 4})}, seed);
  });
  add_case("transpose", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return mul(transpose(in[0]), in[1]); }, {leaf(rng, {3, 2}), leaf(rng, {2, 3})}, seed);
  });
  add_case("matmul", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return matmul(in[0], in[1]); }, {leaf(rng, {3, 4}), leaf(rng, {4, 2})}, seed);
  });
  add_case("softmax", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return add(softmax(in[0], 1), softmax(in[0], 0)); }, {leaf(rng, {3, 5})}, seed);
  });
  add_case("normalize_last", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return normalize_last(in[0], 1e-5); }, {leaf(rng, {3, 6})}, seed);
  });
  add_case("conv2d", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return conv2d(in[0], in[1], in[2], 2, 1); },
                 {leaf(rng, {2, 5, 5}), leaf(rng, {3, 2, 3, 3}), leaf(rng, {3})}, seed);
  });
  add_case("depthwise_conv1d", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return depthwise_conv1d(in[0], in[1], in[2]); },
                 {leaf(rng, {6, 3}), leaf(rng, {3, 4}), leaf(rng, {3})}, seed);
  });
  add_case("grid_sample", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> pts;
    for (int i = 0; i < 5; ++i) {
      pts.push_back(static_cast<double>(rng.index(4)) + rng.uniform(0.1, 0.9));
      pts.push_back(static_cast<double>(rng.index(3)) + rng.uniform(0.1, 0.9));
    }
    return check([](Inputs in) { return grid_sample(in[0], in[1]); },
                 {leaf(rng, {2, 4, 5}), Tensor::from({5, 2}, std::move(pts), true)}, seed);
  });
  add_case("rodrigues", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return rodrigues(in[0]); }, {leaf(rng, {3})}, seed);
  });
  add_case("rodrigues_small_angle", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    return check([](Inputs in) { return rodrigues(in[0]); }, {leaf(rng, {3}, -2e-3, 2e-3)}, seed);
  });
  add_case("linear", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    auto layer = nn::Linear::init(4, 3, rng);
    ParamList p;
    layer.collect(p, "fc");
    auto inputs = tensors_of(p);
    inputs.push_back(leaf(rng, {2, 4}));
    return check([layer](Inputs in) { return nn::linear(layer, in.back()); }, inputs, seed);
  });
  add_case("layernorm", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    auto layer = nn::LayerNormLayer::init(5);
    layer.gamma = leaf(rng, {5});
    layer.beta = leaf(rng, {5});
    return check([layer](Inputs in) { return nn::layernorm(layer, in[2]); }, {layer.gamma, layer.beta, leaf(rng, {3, 5})},
                 seed);
  });
  add_case("channel_norm", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    auto layer = nn::ChannelNormLayer::init(2);
    layer.gamma = leaf(rng, {2});
    layer.beta = leaf(rng, {2});
    return check([layer](Inputs in) { return nn::channel_norm(layer, in[2]); },
                 {layer.gamma, layer.beta, leaf(rng, {2, 3, 3})}, seed);
  });
  add_case("mlp", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    auto layer = nn::MlpLayer::init(4, 2, rng);
    ParamList p;
    layer.collect(p, "mlp");
    auto inputs = tensors_of(p);
    inputs.push_back(leaf(rng, {3, 4}));
    return check_module([layer](Inputs in) { return nn::mlp(layer, in.back()); }, inputs, seed);
  });
  add_case("non_local", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    auto block = nn::NonLocalBlock::init(4, rng);
    block.z = nn::Conv2dLayer::init(2, 4, 1, 1, 0, rng);  // nonzero so every weight carries gradient
    ParamList p;
    block.collect(p, "ifem");
    auto inputs = tensors_of(p);
    inputs.push_back(leaf(rng, {4, 2, 3}));
    inputs.push_back(leaf(rng, {4, 2, 3}));
    return check_module([block](Inputs in) { return nn::non_local(block, in[in.size() - 2], in.back()); }, inputs, seed);
  });
  add_case("soft_argmax", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    auto positions = pipeline::grid_positions(2, 3);
    return check([positions](Inputs in) { return pipeline::soft_argmax(in[0], positions); }, {leaf(rng, {3, 6})},
                 seed);
  });
  add_case("selective_scan", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> inputs{leaf(rng, {6, 4}),       leaf(rng, {6, 4}, 0.1, 0.5), leaf(rng, {4, 3}, -2.0, -0.5),
                               leaf(rng, {6, 3}),       leaf(rng, {6, 3}),           leaf(rng, {4})};
    return check([](Inputs in) { return ssm::selective_scan(in[0], in[1], in[2], in[3], in[4], in[5]); }, inputs, seed);
  });
  add_case("vmblock", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    ssm::BlockOptions o;
    o.state_dim = 4;
    auto layer = ssm::VmBlockLayer::init(8, o, rng);
    ParamList p;
    layer.collect(p, "block");
    auto inputs = tensors_of(p);
    inputs.push_back(leaf(rng, {4, 8}));
    return check_module([layer](Inputs in) { return ssm::vmblock_forward(layer, in.back()); }, inputs, seed);
  });
  add_case("forward_kinematics", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    auto rig = hand::make_default_rig(seed, 120);
    return check(
        [rig](Inputs in) {
          auto kin = hand::forward_kinematics(rig, in[0]);
          return concat({reshape(kin.joint_positions(), {48}), reshape(kin.relative, {192})}, 0);
        },
        {leaf(rng, {16, 3}, -1.0, 1.0)}, seed);
  });
  add_case("lbs", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    auto rig = hand::make_default_rig(seed, 120);
    return check_module(
        [rig](Inputs in) {
          auto out = hand::lbs(rig, {in[0], in[1]});
          return concat({reshape(out.vertices, {360}), reshape(out.joints, {63})}, 0);
        },
        {leaf(rng, {16, 3}, -1.0, 1.0), leaf(rng, {10})}, seed);
  });
  add_case("loss", [](const PipelineConfig&, std::uint64_t seed) {
    Rng rng(seed);
    pipeline::FullOutput pred;
    train::TrainingSample gt;
    auto pair = [&](Tensor& p, Tensor& g, Shape shape) {
      p = leaf(rng, shape);
      // Targets sit at least 0.1 away from the prediction in every coordinate.
      auto offset = signed_leaf(rng, shape, 0.1, 1.0);
      g = add(p, offset).detach();
    };
    pair(pred.left.params.theta, gt.theta_l, {16, 3});
    pair(pred.right.params.theta, gt.theta_r, {16, 3});
    pair(pred.left.params.beta, gt.beta_l, {10});
    pair(pred.right.params.beta, gt.beta_r, {10});
    pair(pred.left.mesh.joints, gt.joints_l, {21, 3});
    pair(pred.right.mesh.joints, gt.joints_r, {21, 3});
    pair(pred.left.mesh.vertices, gt.vertices_l, {12, 3});
    pair(pred.right.mesh.vertices, gt.vertices_r, {12, 3});
    pair(pred.t_rel, gt.t_rel, {3});
    train::LossWeights w;
    for (auto& l : w.lambda) l = rng.uniform(0.5, 2.0);
    std::vector<Tensor> inputs{pred.left.params.theta, pred.right.params.theta, pred.left.params.beta,
                               pred.right.params.beta, pred.left.mesh.joints,   pred.right.mesh.joints,
                               pred.left.mesh.vertices, pred.right.mesh.vertices, pred.t_rel};
    return check(
        [gt, w](Inputs in) {
          pipeline::FullOutput p;
          p.left.params = {in[0], in[2]};
          p.right.params = {in[1], in[3]};
          p.left.mesh = {in[6], in[4]};
          p.right.mesh = {in[7], in[5]};
          p.t_rel = in[8];
          return train::loss(p, gt, w).total;
        },
        inputs, seed);
  });
  add_case("network", [](const PipelineConfig& config, std::uint64_t seed) {
    auto cfg = config;
    cfg.seed = seed;
    auto model = std::make_shared<pipeline::Model>(cfg);
    auto sample = train::synth_dataset(model->rig(), 1, seed + 1, train::SynthOptions::from_config(cfg))[0];
    // Targets sit next to the current prediction so the loss is O(1), which
    // keeps finite-difference roundoff well below the gradients of interest.
    {
      NoGradGuard no_grad;
      Rng rng(seed + 2);
      auto out = model->forward(sample.image);
      auto near = [&](const Tensor& p) { return add(p, signed_leaf(rng, p.shape(), 0.1, 1.0)).detach(); };
      sample.theta_l = near(out.left.params.theta);
      sample.theta_r = near(out.right.params.theta);
      sample.beta_l = near(out.left.params.beta);
      sample.beta_r = near(out.right.params.beta);
      sample.joints_l = near(out.left.mesh.joints);
      sample.joints_r = near(out.right.mesh.joints);
      sample.vertices_l = near(out.left.mesh.vertices);
      sample.vertices_r = near(out.right.mesh.vertices);
      sample.t_rel = near(out.t_rel);
    }
    auto inputs = tensors_of(model->parameters());
    auto image = sample.image.clone().set_requires_grad(true);
    inputs.push_back(image);
    auto weights = train::LossWeights::from_config(cfg);
    return check_module(
        [model, sample, weights](Inputs in) { return train::loss(model->forward(in.back()), sample, weights).total; },
        inputs, seed, kNetworkTolerance, 3);
  });
  return cases;
}

}  // namespace

const std::vector<GradcheckCase>& gradcheck_cases() {
  static const std::vector<GradcheckCase> cases = build_cases();
  return cases;
}

}  // namespace vmbh::verify
