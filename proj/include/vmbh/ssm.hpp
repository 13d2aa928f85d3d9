#pragma once

#include <cstdint>
#include <string>

#include "vmbh/nn.hpp"
#include "vmbh/tensor.hpp"

namespace vmbh::ssm {

// Order in which the positions of a [c,h,w] map become sequence steps.
enum class ScanOrder { RowMajor, ColumnMajor };

std::string to_string(ScanOrder order);
ScanOrder scan_order_from_string(const std::string& name);

// Diagonal selective state-space recurrence, per channel d and state s:
//   h_t = exp(delta_t,d * A_d,s) h_{t-1} + delta_t,d * B_t,s * x_t,d
//   y_t,d = sum_s C_t,s h_t,s + D_d x_t,d,            h_0 = 0.
// x, delta [seq,channels]; A [channels,state]; B, C [seq,state]; D [channels].
// Throws ContractError if any delta is not strictly positive.
Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& A, const Tensor& B, const Tensor& C,
                      const Tensor& D);

// Same outputs as selective_scan, computed by materializing the lower
// triangular [seq,seq] operator of each channel. Values only, no graph.
// Quadratic in seq; used as the baseline by the scan benchmark.
Tensor dense_scan(const Tensor& x, const Tensor& delta, const Tensor& A, const Tensor& B, const Tensor& C,
                  const Tensor& D);

// Analytic FLOP counts matching what the two kernels report to flops::add.
std::uint64_t scan_flops(std::size_t seq, std::size_t channels, std::size_t state);
std::uint64_t dense_scan_flops(std::size_t seq, std::size_t channels, std::size_t state);

struct BlockOptions {
  std::size_t state_dim = 8;
  std::size_t expansion = 2;
  std::size_t conv_width = 4;
  std::size_t mlp_ratio = 2;
};

// Input-dependent SSM parameters of one block. A = -exp(a_log).
struct SsmParams {
  Tensor a_log;          // [inner, state]
  Tensor d_skip;         // [inner]
  nn::Linear delta_proj; // inner -> inner, softplus applied after
  nn::Linear b_proj;     // inner -> state
  nn::Linear c_proj;     // inner -> state

  static SsmParams init(std::size_t inner, std::size_t state, Rng& rng);
  Tensor state_matrix() const;
  void collect(ParamList& out, const std::string& prefix) const;
};

// Pre-norm Mamba-style block followed by a pre-norm MLP sub-block:
//   x' = x + out_proj(silu(z) * scan(silu(conv(expand(LN(x))))))
//   y  = x' + MLP(LN(x'))
struct VmBlockLayer {
  nn::LayerNormLayer norm1;
  nn::Linear in_proj;  // width -> 2*inner (main branch, gate branch)
  Tensor conv_weight;  // [inner, conv_width]
  Tensor conv_bias;    // [inner]
  SsmParams ssm;
  nn::Linear out_proj;  // inner -> width
  nn::LayerNormLayer norm2;
  nn::MlpLayer mlp;

  static VmBlockLayer init(std::size_t width, const BlockOptions& options, Rng& rng);
  std::size_t width() const { return in_proj.in_features(); }
  std::size_t inner() const { return out_proj.in_features(); }
  // Zeroes out_proj and the MLP's last layer; the block becomes the identity.
  void zero_output_projections();
  void collect(ParamList& out, const std::string& prefix) const;
};

Tensor vmblock_forward(const VmBlockLayer& layer, const Tensor& x);

// [c,h,w] -> [h*w, c] and back. Bijective for every order.
Tensor featuremap_to_sequence(const Tensor& f, ScanOrder order);
Tensor sequence_to_featuremap(const Tensor& seq, std::size_t height, std::size_t width, ScanOrder order);

}  // namespace vmbh::ssm
