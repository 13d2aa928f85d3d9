#include <cmath>

#include "vmbh/error.hpp"
#include "vmbh/flops.hpp"
#include "vmbh/ssm.hpp"

namespace vmbh::ssm {

using detail::Node;
using detail::TensorImpl;

namespace {

struct ScanDims {
  std::size_t seq, channels, state;
};

ScanDims check_scan_shapes(const Tensor& x, const Tensor& delta, const Tensor& A, const Tensor& B, const Tensor& C,
                           const Tensor& D) {
  if (x.dim() != 2 || A.dim() != 2) {
    throw DimensionError("selective_scan: x must be [seq,channels] and A [channels,state], got " +
                         shape_str(x.shape()) + " and " + shape_str(A.shape()));
  }
  ScanDims d{x.shape()[0], x.shape()[1], A.shape()[1]};
  if (delta.shape() != x.shape() || A.shape()[0] != d.channels || B.shape() != Shape{d.seq, d.state} ||
      C.shape() != Shape{d.seq, d.state} || D.shape() != Shape{d.channels}) {
    throw DimensionError("selective_scan: inconsistent shapes x" + shape_str(x.shape()) + " delta" +
                         shape_str(delta.shape()) + " A" + shape_str(A.shape()) + " B" + shape_str(B.shape()) +
                         " C" + shape_str(C.shape()) + " D" + shape_str(D.shape()));
  }
  for (double v : delta.data()) {
    if (!(v > 0.0)) throw ContractError("selective_scan: step size delta must be strictly positive");
  }
  return d;
}

}  // namespace

std::uint64_t scan_flops(std::size_t seq, std::size_t channels, std::size_t state) {
  // Per (step, channel, state): exp, decay multiply, input term (2), add,
  // readout multiply-add (2). Per (step, channel): skip multiply-add.
  return static_cast<std::uint64_t>(seq) * channels * (7 * state + 2);
}

std::uint64_t dense_scan_flops(std::size_t seq, std::size_t channels, std::size_t state) {
  // Each lower-triangular entry: per state an exp, two multiplies and an add
  // to build, then one multiply-add to apply.
  std::uint64_t tri = static_cast<std::uint64_t>(seq) * (seq + 1) / 2;
  return channels * tri * (4 * state + 2) + static_cast<std::uint64_t>(seq) * channels * 2;
}

Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& A, const Tensor& B, const Tensor& C,
                      const Tensor& D) {
  auto [L, E, N] = check_scan_shapes(x, delta, A, B, C, D);
  auto X = x.data();
  auto Dt = delta.data();
  auto Am = A.data();
  auto Bm = B.data();
  auto Cm = C.data();
  auto Dv = D.data();
  // States of every step are kept for the backward sweep.
  std::vector<double> states(L * E * N, 0.0);
  std::vector<double> y(L * E, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t e = 0; e < E; ++e) {
      double dt = Dt[t * E + e];
      double xv = X[t * E + e];
      double acc = Dv[e] * xv;
      double* h = states.data() + (t * E + e) * N;
      const double* hp = t ? states.data() + ((t - 1) * E + e) * N : nullptr;
      for (std::size_t s = 0; s < N; ++s) {
        double decay = std::exp(dt * Am[e * N + s]);
        h[s] = (hp ? decay * hp[s] : 0.0) + dt * Bm[t * N + s] * xv;
        acc += Cm[t * N + s] * h[s];
      }
      y[t * E + e] = acc;
    }
  }
  flops::add(scan_flops(L, E, N));
  return detail::make_result(
      {L, E}, std::move(y), "selective_scan", {x, delta, A, B, C, D},
      [L = L, E = E, N = N, states = std::move(states)](const Node& node, const TensorImpl& res) {
        const auto& G = res.grad;
        const auto& X = node.inputs[0]->data;
        const auto& Dt = node.inputs[1]->data;
        const auto& Am = node.inputs[2]->data;
        const auto& Bm = node.inputs[3]->data;
        const auto& Cm = node.inputs[4]->data;
        const auto& Dv = node.inputs[5]->data;
        double* gx = node.grad_of(0);
        double* gdt = node.grad_of(1);
        double* gA = node.grad_of(2);
        double* gB = node.grad_of(3);
        double* gC = node.grad_of(4);
        double* gD = node.grad_of(5);
        // carry[e,s] = dLoss/dh_{t}[e,s] flowing in from step t+1.
        std::vector<double> carry(E * N, 0.0);
        for (std::size_t t = L; t-- > 0;) {
          for (std::size_t e = 0; e < E; ++e) {
            double gy = G[t * E + e];
            double dt = Dt[t * E + e];
            double xv = X[t * E + e];
            if (gD) gD[e] += gy * xv;
            double gxv = gy * Dv[e];
            double gdtv = 0.0;
            const double* h = states.data() + (t * E + e) * N;
            const double* hp = t ? states.data() + ((t - 1) * E + e) * N : nullptr;
            for (std::size_t s = 0; s < N; ++s) {
              double& c = carry[e * N + s];
              double gh = Cm[t * N + s] * gy + c;
              if (gC) gC[t * N + s] += gy * h[s];
              double a = Am[e * N + s];
              double decay = std::exp(dt * a);
              double bv = Bm[t * N + s];
              gxv += gh * dt * bv;
              if (gB) gB[t * N + s] += gh * dt * xv;
              double hprev = hp ? hp[s] : 0.0;
              gdtv += gh * (bv * xv + decay * a * hprev);
              if (gA) gA[e * N + s] += gh * decay * dt * hprev;
              c = gh * decay;
            }
            if (gx) gx[t * E + e] += gxv;
            if (gdt) gdt[t * E + e] += gdtv;
          }
        }
      });
}

Tensor dense_scan(const Tensor& x, const Tensor& delta, const Tensor& A, const Tensor& B, const Tensor& C,
                  const Tensor& D) {
  auto [L, E, N] = check_scan_shapes(x, delta, A, B, C, D);
  auto X = x.data();
  auto Dt = delta.data();
  auto Am = A.data();
  auto Bm = B.data();
  auto Cm = C.data();
  auto Dv = D.data();
  std::vector<double> y(L * E, 0.0);
  std::vector<double> op(L * L);
  std::vector<double> cum(L + 1);
  for (std::size_t e = 0; e < E; ++e) {
    // cum[t] = sum of delta over steps < t, so the decay from s to t is
    // exp(A * (cum[t+1] - cum[s+1])).
    cum[0] = 0.0;
    for (std::size_t t = 0; t < L; ++t) cum[t + 1] = cum[t] + Dt[t * E + e];
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t s = 0; s <= t; ++s) {
        double span = cum[t + 1] - cum[s + 1];
        double v = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          v += Cm[t * N + n] * std::exp(Am[e * N + n] * span) * Bm[s * N + n];
        }
        op[t * L + s] = v * Dt[s * E + e];
      }
      op[t * L + t] += Dv[e];
    }
    for (std::size_t t = 0; t < L; ++t) {
      double acc = 0.0;
      for (std::size_t s = 0; s <= t; ++s) acc += op[t * L + s] * X[s * E + e];
      y[t * E + e] = acc;
    }
  }
  flops::add(dense_scan_flops(L, E, N));
  return Tensor::from({L, E}, std::move(y));
}

}  // namespace vmbh::ssm
