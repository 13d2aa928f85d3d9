#pragma once

#include <string>
#include <vector>

#include "vmbh/ops.hpp"
#include "vmbh/rng.hpp"
#include "vmbh/tensor.hpp"

namespace vmbh {

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

std::size_t count_scalars(const ParamList& params);

namespace nn {

// y = x W + b with W [in,out]. Accepts x [n,in] or [in].
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  static Linear zeros(std::size_t in, std::size_t out);
  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }
  void collect(ParamList& out, const std::string& prefix) const;
};
Tensor linear(const Linear& layer, const Tensor& x);

struct Conv2dLayer {
  Tensor weight;  // [out_c, in_c, k, k]
  Tensor bias;    // [out_c], undefined for a bias-free layer
  std::size_t stride = 1;
  std::size_t padding = 0;

  static Conv2dLayer init(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride,
                          std::size_t padding, Rng& rng, bool with_bias = true);
  static Conv2dLayer zeros(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride = 1,
                           std::size_t padding = 0);
  std::size_t in_channels() const { return weight.shape()[1]; }
  std::size_t out_channels() const { return weight.shape()[0]; }
  void collect(ParamList& out, const std::string& prefix) const;
};
Tensor conv2d(const Conv2dLayer& layer, const Tensor& x);

// 1x1 convolution evaluated as a per-pixel matmul; same result as conv2d
// for kernel size 1, computed along an independent code path.
Tensor conv1x1_as_matmul(const Conv2dLayer& layer, const Tensor& x);

// Normalizes the trailing feature axis.
struct LayerNormLayer {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  static LayerNormLayer init(std::size_t features, double eps = 1e-5);
  void collect(ParamList& out, const std::string& prefix) const;
};
Tensor layernorm(const LayerNormLayer& layer, const Tensor& x);

// Per-channel normalization of a [c,h,w] map over its spatial positions,
// i.e. batch normalization with batch statistics of a single image.
struct ChannelNormLayer {
  Tensor gamma;  // [c]
  Tensor beta;   // [c]
  double eps = 1e-5;

  static ChannelNormLayer init(std::size_t channels, double eps = 1e-5);
  void collect(ParamList& out, const std::string& prefix) const;
};
Tensor channel_norm(const ChannelNormLayer& layer, const Tensor& x);

// linear -> ReLU -> linear, feature width preserved.
struct MlpLayer {
  Linear fc1;
  Linear fc2;

  static MlpLayer init(std::size_t width, std::size_t ratio, Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};
Tensor mlp(const MlpLayer& layer, const Tensor& x);

// Embedded-Gaussian non-local attention in cross form: queries from x,
// keys and values from context, residual around a 1x1 output projection.
struct NonLocalBlock {
  Conv2dLayer theta;
  Conv2dLayer phi;
  Conv2dLayer g;
  Conv2dLayer z;  // zero-initialized so the block starts as identity

  static NonLocalBlock init(std::size_t channels, Rng& rng);
  std::size_t inner_channels() const { return theta.out_channels(); }
  void collect(ParamList& out, const std::string& prefix) const;
};
Tensor non_local(const NonLocalBlock& block, const Tensor& x, const Tensor& context);
// Row-stochastic attention matrix [h*w (queries), h*w (keys)].
Tensor non_local_attention(const NonLocalBlock& block, const Tensor& x, const Tensor& context);

}  // namespace nn
}  // namespace vmbh
