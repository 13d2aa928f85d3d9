#include <cmath>

#include "vmbh/error.hpp"
#include "vmbh/nn.hpp"

namespace vmbh {

std::size_t count_scalars(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

namespace nn {

namespace {

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rng.uniform_tensor(std::move(shape), -bound, bound, true);
}

}  // namespace

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  Linear l;
  l.weight = fan_in_uniform({in, out}, in, rng);
  l.bias = fan_in_uniform({out}, in, rng);
  return l;
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Tensor linear(const Linear& layer, const Tensor& x) {
  if (x.dim() == 1) {
    if (x.shape()[0] != layer.in_features()) {
      throw DimensionError("linear: input width " + std::to_string(x.shape()[0]) + " != " +
                           std::to_string(layer.in_features()));
    }
    auto y = matmul(reshape(x, {1, x.shape()[0]}), layer.weight);
    return reshape(add(y, layer.bias), {layer.out_features()});
  }
  if (x.dim() != 2 || x.shape()[1] != layer.in_features()) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(layer.weight.shape()));
  }
  return add(matmul(x, layer.weight), layer.bias);
}

Conv2dLayer Conv2dLayer::init(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride,
                              std::size_t padding, Rng& rng, bool with_bias) {
  Conv2dLayer c;
  std::size_t fan_in = in_c * kernel * kernel;
  c.weight = fan_in_uniform({out_c, in_c, kernel, kernel}, fan_in, rng);
  if (with_bias) c.bias = fan_in_uniform({out_c}, fan_in, rng);
  c.stride = stride;
  c.padding = padding;
  return c;
}

Conv2dLayer Conv2dLayer::zeros(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  Conv2dLayer c;
  c.weight = Tensor::zeros({out_c, in_c, kernel, kernel}, true);
  c.bias = Tensor::zeros({out_c}, true);
  c.stride = stride;
  c.padding = padding;
  return c;
}

void Conv2dLayer::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Tensor conv2d(const Conv2dLayer& layer, const Tensor& x) {
  return vmbh::conv2d(x, layer.weight, layer.bias, layer.stride, layer.padding);
}

Tensor conv1x1_as_matmul(const Conv2dLayer& layer, const Tensor& x) {
  if (layer.weight.shape()[2] != 1 || layer.weight.shape()[3] != 1 || layer.stride != 1 || layer.padding != 0) {
    throw ContractError("conv1x1_as_matmul: layer is not a plain 1x1 convolution");
  }
  if (x.dim() != 3 || x.shape()[0] != layer.in_channels()) {
    throw DimensionError("conv1x1_as_matmul: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(layer.weight.shape()));
  }
  std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  auto w2 = reshape(layer.weight, {layer.out_channels(), c});
  auto y = matmul(w2, reshape(x, {c, h * w}));
  if (layer.bias.defined()) y = add(y, reshape(layer.bias, {layer.out_channels(), 1}));
  return reshape(y, {layer.out_channels(), h, w});
}

LayerNormLayer LayerNormLayer::init(std::size_t features, double eps) {
  return {Tensor::ones({features}, true), Tensor::zeros({features}, true), eps};
}

void LayerNormLayer::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

Tensor layernorm(const LayerNormLayer& layer, const Tensor& x) {
  if (x.dim() == 0 || x.shape().back() != layer.gamma.numel()) {
    throw DimensionError("layernorm: trailing dim of " + shape_str(x.shape()) + " != " +
                         std::to_string(layer.gamma.numel()));
  }
  return add(mul(normalize_last(x, layer.eps), layer.gamma), layer.beta);
}

ChannelNormLayer ChannelNormLayer::init(std::size_t channels, double eps) {
  return {Tensor::ones({channels}, true), Tensor::zeros({channels}, true), eps};
}

void ChannelNormLayer::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

Tensor channel_norm(const ChannelNormLayer& layer, const Tensor& x) {
  if (x.dim() != 3 || x.shape()[0] != layer.gamma.numel()) {
    throw DimensionError("channel_norm: input " + shape_str(x.shape()) + " does not have " +
                         std::to_string(layer.gamma.numel()) + " channels");
  }
  std::size_t c = x.shape()[0];
  auto flat = normalize_last(reshape(x, {c, x.shape()[1] * x.shape()[2]}), layer.eps);
  flat = add(mul(flat, reshape(layer.gamma, {c, 1})), reshape(layer.beta, {c, 1}));
  return reshape(flat, x.shape());
}

MlpLayer MlpLayer::init(std::size_t width, std::size_t ratio, Rng& rng) {
  return {Linear::init(width, width * ratio, rng), Linear::init(width * ratio, width, rng)};
}

void MlpLayer::collect(ParamList& out, const std::string& prefix) const {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

Tensor mlp(const MlpLayer& layer, const Tensor& x) {
  if (layer.fc1.in_features() != layer.fc2.out_features()) {
    throw DimensionError("mlp: input and output widths differ");
  }
  return linear(layer.fc2, relu(linear(layer.fc1, x)));
}

NonLocalBlock NonLocalBlock::init(std::size_t channels, Rng& rng) {
  std::size_t inner = std::max<std::size_t>(1, channels / 2);
  NonLocalBlock b;
  b.theta = Conv2dLayer::init(channels, inner, 1, 1, 0, rng);
  // A key bias shifts every logit of a query row equally, which the
  // softmax cancels, so the key projection carries none.
  b.phi = Conv2dLayer::init(channels, inner, 1, 1, 0, rng, false);
  b.g = Conv2dLayer::init(channels, inner, 1, 1, 0, rng);
  b.z = Conv2dLayer::zeros(inner, channels, 1);
  return b;
}

void NonLocalBlock::collect(ParamList& out, const std::string& prefix) const {
  theta.collect(out, prefix + ".theta");
  phi.collect(out, prefix + ".phi");
  g.collect(out, prefix + ".g");
  z.collect(out, prefix + ".z");
}

namespace {

void check_pair(const NonLocalBlock& block, const Tensor& x, const Tensor& context) {
  if (x.dim() != 3 || x.shape() != context.shape()) {
    throw DimensionError("non_local: query map " + shape_str(x.shape()) + " and context map " +
                         shape_str(context.shape()) + " must share a [c,h,w] shape");
  }
  if (x.shape()[0] != block.theta.in_channels()) {
    throw DimensionError("non_local: map has " + std::to_string(x.shape()[0]) + " channels, block expects " +
                         std::to_string(block.theta.in_channels()));
  }
}

}  // namespace

Tensor non_local_attention(const NonLocalBlock& block, const Tensor& x, const Tensor& context) {
  check_pair(block, x, context);
  std::size_t n = x.shape()[1] * x.shape()[2];
  std::size_t ci = block.inner_channels();
  auto q = reshape(conv2d(block.theta, x), {ci, n});
  auto k = reshape(conv2d(block.phi, context), {ci, n});
  return softmax(matmul(transpose(q), k), 1);
}

Tensor non_local(const NonLocalBlock& block, const Tensor& x, const Tensor& context) {
  auto attn = non_local_attention(block, x, context);
  std::size_t h = x.shape()[1], w = x.shape()[2];
  std::size_t ci = block.inner_channels();
  auto v = reshape(conv2d(block.g, context), {ci, h * w});
  auto y = reshape(matmul(v, transpose(attn)), {ci, h, w});
  return add(conv2d(block.z, y), x);
}

}  // namespace nn
}  // namespace vmbh
