#include <cmath>

#include "vmbh/error.hpp"
#include "vmbh/ssm.hpp"

namespace vmbh::ssm {

std::string to_string(ScanOrder order) { return order == ScanOrder::RowMajor ? "row_major" : "column_major"; }

ScanOrder scan_order_from_string(const std::string& name) {
  if (name == "row_major") return ScanOrder::RowMajor;
  if (name == "column_major") return ScanOrder::ColumnMajor;
  throw ConfigError("unknown scan order '" + name + "' (expected row_major or column_major)");
}

SsmParams SsmParams::init(std::size_t inner, std::size_t state, Rng& rng) {
  SsmParams p;
  // -A spans 1..state in every channel.
  std::vector<double> a_log(inner * state);
  for (std::size_t e = 0; e < inner; ++e) {
    for (std::size_t s = 0; s < state; ++s) a_log[e * state + s] = std::log(static_cast<double>(s + 1));
  }
  p.a_log = Tensor::from({inner, state}, std::move(a_log), true);
  p.d_skip = Tensor::ones({inner}, true);
  double wb = 0.1 / std::sqrt(static_cast<double>(inner));
  p.delta_proj.weight = rng.uniform_tensor({inner, inner}, -wb, wb, true);
  // softplus(bias) lands in [0.01, 0.1].
  double lo = std::log(std::expm1(0.01));
  double hi = std::log(std::expm1(0.1));
  p.delta_proj.bias = rng.uniform_tensor({inner}, lo, hi, true);
  p.b_proj = nn::Linear::init(inner, state, rng);
  p.c_proj = nn::Linear::init(inner, state, rng);
  return p;
}

Tensor SsmParams::state_matrix() const { return neg(exp(a_log)); }

void SsmParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".a_log", a_log});
  out.push_back({prefix + ".d_skip", d_skip});
  delta_proj.collect(out, prefix + ".delta_proj");
  b_proj.collect(out, prefix + ".b_proj");
  c_proj.collect(out, prefix + ".c_proj");
}

VmBlockLayer VmBlockLayer::init(std::size_t width, const BlockOptions& options, Rng& rng) {
  if (width == 0 || options.state_dim == 0 || options.expansion == 0 || options.conv_width == 0 ||
      options.mlp_ratio == 0) {
    throw ConfigError("VMBlock dimensions must be positive");
  }
  std::size_t inner = width * options.expansion;
  VmBlockLayer l;
  l.norm1 = nn::LayerNormLayer::init(width);
  l.in_proj = nn::Linear::init(width, 2 * inner, rng);
  double cb = 1.0 / std::sqrt(static_cast<double>(options.conv_width));
  l.conv_weight = rng.uniform_tensor({inner, options.conv_width}, -cb, cb, true);
  l.conv_bias = rng.uniform_tensor({inner}, -cb, cb, true);
  l.ssm = SsmParams::init(inner, options.state_dim, rng);
  l.out_proj = nn::Linear::init(inner, width, rng);
  l.norm2 = nn::LayerNormLayer::init(width);
  l.mlp = nn::MlpLayer::init(width, options.mlp_ratio, rng);
  return l;
}

void VmBlockLayer::zero_output_projections() {
  out_proj = nn::Linear::zeros(out_proj.in_features(), out_proj.out_features());
  mlp.fc2 = nn::Linear::zeros(mlp.fc2.in_features(), mlp.fc2.out_features());
}

void VmBlockLayer::collect(ParamList& out, const std::string& prefix) const {
  norm1.collect(out, prefix + ".norm1");
  in_proj.collect(out, prefix + ".in_proj");
  out.push_back({prefix + ".conv.weight", conv_weight});
  out.push_back({prefix + ".conv.bias", conv_bias});
  ssm.collect(out, prefix + ".ssm");
  out_proj.collect(out, prefix + ".out_proj");
  norm2.collect(out, prefix + ".norm2");
  mlp.collect(out, prefix + ".mlp");
}

Tensor vmblock_forward(const VmBlockLayer& layer, const Tensor& x) {
  if (x.dim() != 2 || x.shape()[1] != layer.width()) {
    throw DimensionError("vmblock: input " + shape_str(x.shape()) + " does not match block width " +
                         std::to_string(layer.width()));
  }
  std::size_t inner = layer.inner();
  auto u = nn::layernorm(layer.norm1, x);
  auto xz = nn::linear(layer.in_proj, u);
  auto main = slice(xz, 1, 0, inner);
  auto gate = slice(xz, 1, inner, 2 * inner);
  auto xc = silu(depthwise_conv1d(main, layer.conv_weight, layer.conv_bias));
  auto delta = softplus(nn::linear(layer.ssm.delta_proj, xc));
  auto B = nn::linear(layer.ssm.b_proj, xc);
  auto C = nn::linear(layer.ssm.c_proj, xc);
  auto y = selective_scan(xc, delta, layer.ssm.state_matrix(), B, C, layer.ssm.d_skip);
  auto mixed = add(x, nn::linear(layer.out_proj, mul(y, silu(gate))));
  return add(mixed, nn::mlp(layer.mlp, nn::layernorm(layer.norm2, mixed)));
}

Tensor featuremap_to_sequence(const Tensor& f, ScanOrder order) {
  if (f.dim() != 3) throw DimensionError("featuremap_to_sequence: expected [c,h,w], got " + shape_str(f.shape()));
  std::size_t c = f.shape()[0], h = f.shape()[1], w = f.shape()[2];
  if (order == ScanOrder::RowMajor) return transpose(reshape(f, {c, h * w}));
  return transpose(reshape(permute(f, {0, 2, 1}), {c, h * w}));
}

Tensor sequence_to_featuremap(const Tensor& seq, std::size_t height, std::size_t width, ScanOrder order) {
  if (seq.dim() != 2 || seq.shape()[0] != height * width) {
    throw DimensionError("sequence_to_featuremap: sequence " + shape_str(seq.shape()) + " cannot fill a " +
                         std::to_string(height) + "x" + std::to_string(width) + " map");
  }
  std::size_t c = seq.shape()[1];
  auto chw = transpose(seq);
  if (order == ScanOrder::RowMajor) return reshape(chw, {c, height, width});
  return permute(reshape(chw, {c, width, height}), {0, 2, 1});
}

}  // namespace vmbh::ssm
