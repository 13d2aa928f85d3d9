#include <algorithm>
#include <array>
#include <cmath>

#include "vmbh/error.hpp"
#include "vmbh/flops.hpp"
#include "vmbh/ops.hpp"

namespace vmbh {

using detail::Node;
using detail::TensorImpl;

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  std::size_t m = a.shape()[0];
  std::size_t k = a.shape()[1];
  std::size_t n = b.shape()[1];
  auto A = a.data();
  auto B = b.data();
  std::vector<double> C(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double aip = A[i * k + p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  flops::add(2 * m * n * k);
  return detail::make_result({m, n}, std::move(C), "matmul", {a, b},
                             [m, k, n](const Node& node, const TensorImpl& res) {
                               const auto& G = res.grad;
                               const auto& A = node.inputs[0]->data;
                               const auto& B = node.inputs[1]->data;
                               if (double* gA = node.grad_of(0)) {
                                 for (std::size_t i = 0; i < m; ++i) {
                                   for (std::size_t p = 0; p < k; ++p) {
                                     double acc = 0.0;
                                     for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
                                     gA[i * k + p] += acc;
                                   }
                                 }
                               }
                               if (double* gB = node.grad_of(1)) {
                                 for (std::size_t i = 0; i < m; ++i) {
                                   for (std::size_t p = 0; p < k; ++p) {
                                     double aip = A[i * k + p];
                                     for (std::size_t j = 0; j < n; ++j) gB[p * n + j] += aip * G[i * n + j];
                                   }
                                 }
                               }
                             });
}

Tensor softmax(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  int r = static_cast<int>(s.size());
  if (axis < -r || axis >= r) throw ContractError("softmax: axis " + std::to_string(axis) + " invalid");
  std::size_t ax = static_cast<std::size_t>(axis < 0 ? axis + r : axis);
  std::size_t len = s[ax];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  std::size_t outer = x.numel() / (len * inner);
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t q = 0; q < inner; ++q) {
      std::size_t base = o * len * inner + q;
      double mx = in[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, in[base + i * inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        double e = std::exp(in[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= total;
    }
  }
  return detail::make_result(s, std::move(out), "softmax", {x},
                             [outer, len, inner](const Node& node, const TensorImpl& res) {
                               double* gx = node.grad_of(0);
                               if (!gx) return;
                               const auto& y = res.data;
                               const auto& g = res.grad;
                               for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t q = 0; q < inner; ++q) {
                                   std::size_t base = o * len * inner + q;
                                   double dot = 0.0;
                                   for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
                                   for (std::size_t i = 0; i < len; ++i) {
                                     std::size_t k = base + i * inner;
                                     gx[k] += y[k] * (g[k] - dot);
                                   }
                                 }
                               }
                             });
}

Tensor normalize_last(const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ContractError("normalize_last: eps must be positive");
  if (x.dim() == 0) throw DimensionError("normalize_last: scalar input");
  std::size_t f = x.shape().back();
  std::size_t rows = x.numel() / f;
  auto in = x.data();
  std::vector<double> out(in.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * f;
    double mu = 0.0;
    for (std::size_t i = 0; i < f; ++i) mu += row[i];
    mu /= static_cast<double>(f);
    double var = 0.0;
    for (std::size_t i = 0; i < f; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(f);
    double rs = 1.0 / std::sqrt(var + eps);
    inv_std[r] = rs;
    for (std::size_t i = 0; i < f; ++i) out[r * f + i] = (row[i] - mu) * rs;
  }
  return detail::make_result(x.shape(), std::move(out), "normalize_last", {x},
                             [rows, f, inv_std = std::move(inv_std)](const Node& node, const TensorImpl& res) {
                               double* gx = node.grad_of(0);
                               if (!gx) return;
                               const auto& y = res.data;
                               const auto& g = res.grad;
                               double fn = static_cast<double>(f);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 double gm = 0.0;
                                 double gy = 0.0;
                                 for (std::size_t i = 0; i < f; ++i) {
                                   gm += g[r * f + i];
                                   gy += g[r * f + i] * y[r * f + i];
                                 }
                                 gm /= fn;
                                 gy /= fn;
                                 for (std::size_t i = 0; i < f; ++i) {
                                   std::size_t k = r * f + i;
                                   gx[k] += inv_std[r] * (g[k] - gm - y[k] * gy);
                                 }
                               }
                             });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.dim() != 3 || weight.dim() != 4) {
    throw DimensionError("conv2d: expected x [c,h,w] and weight [o,c,kh,kw], got " + shape_str(x.shape()) +
                         " and " + shape_str(weight.shape()));
  }
  std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  std::size_t O = weight.shape()[0], KH = weight.shape()[2], KW = weight.shape()[3];
  if (weight.shape()[1] != C) {
    throw DimensionError("conv2d: input has " + std::to_string(C) + " channels but weight " +
                         shape_str(weight.shape()) + " expects " + std::to_string(weight.shape()[1]));
  }
  if (bias.defined() && bias.shape() != Shape{O}) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(O) +
                         " output channels");
  }
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  if (H + 2 * padding < KH || W + 2 * padding < KW) {
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  }
  std::size_t HO = (H + 2 * padding - KH) / stride + 1;
  std::size_t WO = (W + 2 * padding - KW) / stride + 1;
  auto X = x.data();
  auto Wt = weight.data();
  std::vector<double> out(O * HO * WO, 0.0);
  for (std::size_t o = 0; o < O; ++o) {
    double* yo = out.data() + o * HO * WO;
    if (bias.defined()) std::fill_n(yo, HO * WO, bias.data()[o]);
    for (std::size_t c = 0; c < C; ++c) {
      const double* xc = X.data() + c * H * W;
      for (std::size_t u = 0; u < KH; ++u) {
        for (std::size_t v = 0; v < KW; ++v) {
          double wv = Wt[((o * C + c) * KH + u) * KW + v];
          for (std::size_t i = 0; i < HO; ++i) {
            long yi = static_cast<long>(i * stride + u) - static_cast<long>(padding);
            if (yi < 0 || yi >= static_cast<long>(H)) continue;
            const double* xrow = xc + static_cast<std::size_t>(yi) * W;
            double* orow = yo + i * WO;
            for (std::size_t j = 0; j < WO; ++j) {
              long xj = static_cast<long>(j * stride + v) - static_cast<long>(padding);
              if (xj < 0 || xj >= static_cast<long>(W)) continue;
              orow[j] += wv * xrow[xj];
            }
          }
        }
      }
    }
  }
  flops::add(2 * KH * KW * C * O * HO * WO);
  return detail::make_result(
      {O, HO, WO}, std::move(out), "conv2d", {x, weight, bias},
      [=](const Node& node, const TensorImpl& res) {
        const auto& G = res.grad;
        const auto& X = node.inputs[0]->data;
        const auto& Wt = node.inputs[1]->data;
        double* gx = node.grad_of(0);
        double* gw = node.grad_of(1);
        double* gb = node.grad_of(2);
        for (std::size_t o = 0; o < O; ++o) {
          const double* go = G.data() + o * HO * WO;
          if (gb) {
            double acc = 0.0;
            for (std::size_t k = 0; k < HO * WO; ++k) acc += go[k];
            gb[o] += acc;
          }
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t u = 0; u < KH; ++u) {
              for (std::size_t v = 0; v < KW; ++v) {
                std::size_t widx = ((o * C + c) * KH + u) * KW + v;
                double wv = Wt[widx];
                double acc = 0.0;
                for (std::size_t i = 0; i < HO; ++i) {
                  long yi = static_cast<long>(i * stride + u) - static_cast<long>(padding);
                  if (yi < 0 || yi >= static_cast<long>(H)) continue;
                  std::size_t xoff = c * H * W + static_cast<std::size_t>(yi) * W;
                  for (std::size_t j = 0; j < WO; ++j) {
                    long xj = static_cast<long>(j * stride + v) - static_cast<long>(padding);
                    if (xj < 0 || xj >= static_cast<long>(W)) continue;
                    double g = go[i * WO + j];
                    acc += g * X[xoff + static_cast<std::size_t>(xj)];
                    if (gx) gx[xoff + static_cast<std::size_t>(xj)] += g * wv;
                  }
                }
                if (gw) gw[widx] += acc;
              }
            }
          }
        }
      });
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.dim() != 2 || weight.dim() != 2 || weight.shape()[0] != x.shape()[1]) {
    throw DimensionError("depthwise_conv1d: x " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  std::size_t L = x.shape()[0], C = x.shape()[1], K = weight.shape()[1];
  if (bias.defined() && bias.shape() != Shape{C}) {
    throw DimensionError("depthwise_conv1d: bias " + shape_str(bias.shape()) + " does not match channels");
  }
  auto X = x.data();
  auto Wt = weight.data();
  std::vector<double> out(L * C, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      double acc = bias.defined() ? bias.data()[c] : 0.0;
      for (std::size_t j = 0; j < K; ++j) {
        long src = static_cast<long>(t + j) - static_cast<long>(K - 1);
        if (src < 0) continue;
        acc += Wt[c * K + j] * X[static_cast<std::size_t>(src) * C + c];
      }
      out[t * C + c] = acc;
    }
  }
  flops::add(2 * L * C * K);
  return detail::make_result({L, C}, std::move(out), "depthwise_conv1d", {x, weight, bias},
                             [L, C, K](const Node& node, const TensorImpl& res) {
                               const auto& G = res.grad;
                               const auto& X = node.inputs[0]->data;
                               const auto& Wt = node.inputs[1]->data;
                               double* gx = node.grad_of(0);
                               double* gw = node.grad_of(1);
                               double* gb = node.grad_of(2);
                               for (std::size_t t = 0; t < L; ++t) {
                                 for (std::size_t c = 0; c < C; ++c) {
                                   double g = G[t * C + c];
                                   if (gb) gb[c] += g;
                                   for (std::size_t j = 0; j < K; ++j) {
                                     long src = static_cast<long>(t + j) - static_cast<long>(K - 1);
                                     if (src < 0) continue;
                                     std::size_t xi = static_cast<std::size_t>(src) * C + c;
                                     if (gw) gw[c * K + j] += g * X[xi];
                                     if (gx) gx[xi] += g * Wt[c * K + j];
                                   }
                                 }
                               }
                             });
}

namespace {

struct AxisInterp {
  std::size_t lo, hi;
  double frac;
  bool inside;  // derivative wrt the coordinate is nonzero
};

AxisInterp interp_axis(double coord, std::size_t size) {
  double top = static_cast<double>(size - 1);
  if (size == 1) return {0, 0, 0.0, false};
  bool inside = coord >= 0.0 && coord <= top;
  double c = std::clamp(coord, 0.0, top);
  auto lo = std::min(static_cast<std::size_t>(std::floor(c)), size - 2);
  return {lo, lo + 1, c - static_cast<double>(lo), inside};
}

}  // namespace

Tensor grid_sample(const Tensor& f, const Tensor& points) {
  if (f.dim() != 3) throw DimensionError("grid_sample: feature map must be [c,h,w], got " + shape_str(f.shape()));
  if (points.dim() != 2 || points.shape()[1] != 2) {
    throw DimensionError("grid_sample: points must be [n,2], got " + shape_str(points.shape()));
  }
  std::size_t C = f.shape()[0], H = f.shape()[1], W = f.shape()[2];
  std::size_t N = points.shape()[0];
  auto F = f.data();
  auto P = points.data();
  std::vector<double> out(N * C);
  for (std::size_t n = 0; n < N; ++n) {
    auto ix = interp_axis(P[2 * n], W);
    auto iy = interp_axis(P[2 * n + 1], H);
    double w00 = (1 - ix.frac) * (1 - iy.frac), w01 = ix.frac * (1 - iy.frac);
    double w10 = (1 - ix.frac) * iy.frac, w11 = ix.frac * iy.frac;
    for (std::size_t c = 0; c < C; ++c) {
      const double* fc = F.data() + c * H * W;
      out[n * C + c] = w00 * fc[iy.lo * W + ix.lo] + w01 * fc[iy.lo * W + ix.hi] + w10 * fc[iy.hi * W + ix.lo] +
                       w11 * fc[iy.hi * W + ix.hi];
    }
  }
  flops::add(8 * N * C);
  return detail::make_result(
      {N, C}, std::move(out), "grid_sample", {f, points}, [C, H, W, N](const Node& node, const TensorImpl& res) {
        const auto& G = res.grad;
        const auto& F = node.inputs[0]->data;
        const auto& P = node.inputs[1]->data;
        double* gf = node.grad_of(0);
        double* gp = node.grad_of(1);
        for (std::size_t n = 0; n < N; ++n) {
          auto ix = interp_axis(P[2 * n], W);
          auto iy = interp_axis(P[2 * n + 1], H);
          double w00 = (1 - ix.frac) * (1 - iy.frac), w01 = ix.frac * (1 - iy.frac);
          double w10 = (1 - ix.frac) * iy.frac, w11 = ix.frac * iy.frac;
          double dx = 0.0, dy = 0.0;
          for (std::size_t c = 0; c < C; ++c) {
            double g = G[n * C + c];
            std::size_t base = c * H * W;
            double f00 = F[base + iy.lo * W + ix.lo], f01 = F[base + iy.lo * W + ix.hi];
            double f10 = F[base + iy.hi * W + ix.lo], f11 = F[base + iy.hi * W + ix.hi];
            if (gf) {
              gf[base + iy.lo * W + ix.lo] += g * w00;
              gf[base + iy.lo * W + ix.hi] += g * w01;
              gf[base + iy.hi * W + ix.lo] += g * w10;
              gf[base + iy.hi * W + ix.hi] += g * w11;
            }
            dx += g * ((1 - iy.frac) * (f01 - f00) + iy.frac * (f11 - f10));
            dy += g * ((1 - ix.frac) * (f10 - f00) + ix.frac * (f11 - f01));
          }
          if (gp) {
            if (ix.inside) gp[2 * n] += dx;
            if (iy.inside) gp[2 * n + 1] += dy;
          }
        }
      });
}

namespace {

using Mat3 = std::array<double, 9>;

Mat3 skew(double x, double y, double z) { return {0, -z, y, z, 0, -x, -y, x, 0}; }

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

// Coefficients of R = I + A(t) K + B(t) K^2 with K = skew(aa) (unnormalized)
// and t = |aa|, plus A'(t)/t and B'(t)/t for the derivative.
struct RodriguesCoeffs {
  double a, b, da_over_t, db_over_t;
};

RodriguesCoeffs rodrigues_coeffs(double t) {
  RodriguesCoeffs k{};
  double t2 = t * t;
  if (t < 1e-8) {
    k.a = 1.0 - t2 / 6.0;
    k.b = 0.5 - t2 / 24.0;
  } else {
    double s = std::sin(t);
    double sh = std::sin(0.5 * t);
    k.a = s / t;
    k.b = 2.0 * sh * sh / t2;
  }
  if (t < 1e-2) {
    k.da_over_t = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0;
    k.db_over_t = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0;
  } else {
    double s = std::sin(t), c = std::cos(t), sh = std::sin(0.5 * t);
    k.da_over_t = (t * c - s) / (t2 * t);
    k.db_over_t = (t * s - 4.0 * sh * sh) / (t2 * t2);
  }
  return k;
}

}  // namespace

Tensor rodrigues(const Tensor& axis_angle) {
  if (axis_angle.shape() != Shape{3}) {
    throw DimensionError("rodrigues: expected axis-angle [3], got " + shape_str(axis_angle.shape()));
  }
  auto v = axis_angle.data();
  double t = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  auto k = rodrigues_coeffs(t);
  Mat3 K = skew(v[0], v[1], v[2]);
  Mat3 K2 = mat_mul(K, K);
  std::vector<double> R(9);
  for (int i = 0; i < 9; ++i) R[i] = (i % 4 == 0 ? 1.0 : 0.0) + k.a * K[i] + k.b * K2[i];
  return detail::make_result({3, 3}, std::move(R), "rodrigues", {axis_angle},
                             [](const Node& node, const TensorImpl& res) {
                               double* gv = node.grad_of(0);
                               if (!gv) return;
                               const auto& v = node.inputs[0]->data;
                               double t = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
                               auto k = rodrigues_coeffs(t);
                               Mat3 K = skew(v[0], v[1], v[2]);
                               Mat3 K2 = mat_mul(K, K);
                               for (int d = 0; d < 3; ++d) {
                                 Mat3 E = skew(d == 0, d == 1, d == 2);
                                 Mat3 EK = mat_mul(E, K);
                                 Mat3 KE = mat_mul(K, E);
                                 double acc = 0.0;
                                 for (int i = 0; i < 9; ++i) {
                                   double dR = k.da_over_t * v[d] * K[i] + k.a * E[i] + k.db_over_t * v[d] * K2[i] +
                                               k.b * (EK[i] + KE[i]);
                                   acc += res.grad[i] * dR;
                                 }
                                 gv[d] += acc;
                               }
                             });
}

}  // namespace vmbh
