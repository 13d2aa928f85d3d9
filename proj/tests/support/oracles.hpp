#pragma once

// Reference implementations written directly from the defining formulas with
// plain loops over std::vector. They share no code with the library kernels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat3 = std::array<double, 9>;
using Mat4 = std::array<double, 16>;

inline double max_abs_diff(const Vec& a, const Vec& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// [m,k] x [k,n]
inline Vec matmul(const Vec& a, const Vec& b, std::size_t m, std::size_t k, std::size_t n) {
  Vec c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * n + j];
      c[i * n + j] = s;
    }
  return c;
}

// Zero-padded cross-correlation, x [ci,h,w], w [co,ci,k,k], bias [co] or empty.
inline Vec conv2d(const Vec& x, std::size_t ci, std::size_t h, std::size_t w, const Vec& weight, std::size_t co,
                  std::size_t k, const Vec& bias, std::size_t stride, std::size_t pad, std::size_t& ho,
                  std::size_t& wo) {
  ho = (h + 2 * pad - k) / stride + 1;
  wo = (w + 2 * pad - k) / stride + 1;
  Vec y(co * ho * wo, 0.0);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t r = 0; r < ho; ++r)
      for (std::size_t c = 0; c < wo; ++c) {
        double s = bias.empty() ? 0.0 : bias[o];
        for (std::size_t i = 0; i < ci; ++i)
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v) {
              long rr = static_cast<long>(r * stride + u) - static_cast<long>(pad);
              long cc = static_cast<long>(c * stride + v) - static_cast<long>(pad);
              if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
              s += weight[((o * ci + i) * k + u) * k + v] * x[(i * h + rr) * w + cc];
            }
        y[(o * ho + r) * wo + c] = s;
      }
  return y;
}

// Bilinear sampling as a sum of separable tent kernels over every pixel.
// Coordinates are clamped to the border first.
inline Vec bilinear(const Vec& f, std::size_t c, std::size_t h, std::size_t w, const Vec& points) {
  const std::size_t n = points.size() / 2;
  Vec out(n * c, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    double x = std::clamp(points[2 * p], 0.0, static_cast<double>(w - 1));
    double y = std::clamp(points[2 * p + 1], 0.0, static_cast<double>(h - 1));
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t r = 0; r < h; ++r) {
        double ky = std::max(0.0, 1.0 - std::fabs(y - static_cast<double>(r)));
        if (ky == 0.0) continue;
        for (std::size_t q = 0; q < w; ++q) {
          double kx = std::max(0.0, 1.0 - std::fabs(x - static_cast<double>(q)));
          s += kx * ky * f[(ch * h + r) * w + q];
        }
      }
      out[p * c + ch] = s;
    }
  }
  return out;
}

// Rotation matrix of an axis-angle vector via the unit quaternion.
inline Mat3 quaternion_rotation(double ax, double ay, double az) {
  double angle = std::sqrt(ax * ax + ay * ay + az * az);
  double qw = 1.0, qx = 0.0, qy = 0.0, qz = 0.0;
  if (angle > 0.0) {
    double s = std::sin(angle / 2) / angle;
    qw = std::cos(angle / 2);
    qx = ax * s;
    qy = ay * s;
    qz = az * s;
  }
  return {1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw),     2 * (qx * qz + qy * qw),
          2 * (qx * qy + qz * qw),     1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw),
          2 * (qx * qz - qy * qw),     2 * (qy * qz + qx * qw),     1 - 2 * (qx * qx + qy * qy)};
}

inline Mat4 mul4(const Mat4& a, const Mat4& b) {
  Mat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) c[i * 4 + j] += a[i * 4 + k] * b[k * 4 + j];
  return c;
}

inline Mat4 homogeneous(const Mat3& r, double tx, double ty, double tz) {
  return {r[0], r[1], r[2], tx, r[3], r[4], r[5], ty, r[6], r[7], r[8], tz, 0, 0, 0, 1};
}

// World transforms G_k = G_parent * [R_k | j_k - j_parent] of a kinematic tree.
inline std::vector<Mat4> fk_chain(const std::vector<int>& parents, const Vec& rest, const Vec& theta) {
  std::vector<Mat4> g(parents.size());
  for (std::size_t k = 0; k < parents.size(); ++k) {
    Mat3 r = quaternion_rotation(theta[3 * k], theta[3 * k + 1], theta[3 * k + 2]);
    if (parents[k] < 0) {
      g[k] = homogeneous(r, rest[3 * k], rest[3 * k + 1], rest[3 * k + 2]);
    } else {
      auto p = static_cast<std::size_t>(parents[k]);
      g[k] = mul4(g[p], homogeneous(r, rest[3 * k] - rest[3 * p], rest[3 * k + 1] - rest[3 * p + 1],
                                    rest[3 * k + 2] - rest[3 * p + 2]));
    }
  }
  return g;
}

struct RigData {
  std::size_t vertices = 0;
  Vec template_vertices;  // [V,3]
  std::vector<int> parents;
  Vec rest_joints;  // [16,3]
  Vec skin_weights; // [V,16]
  Vec shape_dirs;   // [V,3,10]
  Vec regressor;    // [21,V]
  Vec pose_dirs;    // [V,3,135] or empty
};

struct LbsResult {
  Vec vertices;
  Vec joints;
};

// Per-vertex skinning: v_i = sum_k w_ik G_k G_k(rest)^-1 (t_i + S_i beta + P_i pose).
inline LbsResult lbs(const RigData& rig, const Vec& theta, const Vec& beta) {
  const std::size_t V = rig.vertices, K = rig.parents.size();
  auto g = fk_chain(rig.parents, rig.rest_joints, theta);
  Vec pose_feat;
  if (!rig.pose_dirs.empty()) {
    for (std::size_t k = 1; k < K; ++k) {
      Mat3 r = quaternion_rotation(theta[3 * k], theta[3 * k + 1], theta[3 * k + 2]);
      for (int e = 0; e < 9; ++e) pose_feat.push_back(r[e] - (e % 4 == 0 ? 1.0 : 0.0));
    }
  }
  LbsResult out;
  out.vertices.assign(V * 3, 0.0);
  for (std::size_t i = 0; i < V; ++i) {
    double p[3];
    for (int a = 0; a < 3; ++a) {
      double s = rig.template_vertices[i * 3 + a];
      for (std::size_t b = 0; b < beta.size(); ++b) s += rig.shape_dirs[(i * 3 + a) * beta.size() + b] * beta[b];
      for (std::size_t f = 0; f < pose_feat.size(); ++f) s += rig.pose_dirs[(i * 3 + a) * pose_feat.size() + f] * pose_feat[f];
      p[a] = s;
    }
    for (std::size_t k = 0; k < K; ++k) {
      double w = rig.skin_weights[i * K + k];
      if (w == 0.0) continue;
      // G_k(rest)^-1 is a pure translation by -rest_joint_k.
      double q[3] = {p[0] - rig.rest_joints[3 * k], p[1] - rig.rest_joints[3 * k + 1], p[2] - rig.rest_joints[3 * k + 2]};
      for (int a = 0; a < 3; ++a) {
        const double* row = &g[k][a * 4];
        out.vertices[i * 3 + a] += w * (row[0] * q[0] + row[1] * q[1] + row[2] * q[2] + row[3]);
      }
    }
  }
  const std::size_t J = rig.regressor.size() / V;
  out.joints.assign(J * 3, 0.0);
  for (std::size_t j = 0; j < J; ++j)
    for (std::size_t i = 0; i < V; ++i)
      for (int a = 0; a < 3; ++a) out.joints[j * 3 + a] += rig.regressor[j * V + i] * out.vertices[i * 3 + a];
  return out;
}

// Selective scan unrolled step by step with an explicit state vector.
// x, delta [L,E]; A [E,N]; B, C [L,N]; D [E].
inline Vec selective_scan(const Vec& x, const Vec& delta, const Vec& A, const Vec& B, const Vec& C, const Vec& D,
                          std::size_t L, std::size_t E, std::size_t N) {
  Vec y(L * E, 0.0);
  for (std::size_t d = 0; d < E; ++d) {
    Vec h(N, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
      double dt = delta[t * E + d];
      double acc = 0.0;
      for (std::size_t s = 0; s < N; ++s) {
        h[s] = std::exp(dt * A[d * N + s]) * h[s] + dt * B[t * N + s] * x[t * E + d];
        acc += C[t * N + s] * h[s];
      }
      y[t * E + d] = acc + D[d] * x[t * E + d];
    }
  }
  return y;
}

// Same recurrence written as the explicit lower-triangular operator:
// y_t = sum_{u<=t} C_t . (prod_{r=u+1..t} exp(delta_r A)) delta_u B_u x_u + D x_t.
inline Vec dense_operator_scan(const Vec& x, const Vec& delta, const Vec& A, const Vec& B, const Vec& C, const Vec& D,
                               std::size_t L, std::size_t E, std::size_t N) {
  Vec y(L * E, 0.0);
  for (std::size_t d = 0; d < E; ++d)
    for (std::size_t t = 0; t < L; ++t) {
      double acc = D[d] * x[t * E + d];
      for (std::size_t u = 0; u <= t; ++u) {
        for (std::size_t s = 0; s < N; ++s) {
          double decay = 0.0;
          for (std::size_t r = u + 1; r <= t; ++r) decay += delta[r * E + d] * A[d * N + s];
          acc += C[t * N + s] * std::exp(decay) * delta[u * E + d] * B[u * N + s] * x[u * E + d];
        }
      }
      y[t * E + d] = acc;
    }
  return y;
}

// Cross non-local block by explicit double loop over query and key positions.
// theta/phi/g weights [ci,c] (1x1 convs), biases [ci] or empty; z [c,ci].
struct NonLocalWeights {
  Vec theta_w, theta_b, phi_w, phi_b, g_w, g_b, z_w, z_b;
  std::size_t channels = 0, inner = 0;
};

inline Vec non_local(const NonLocalWeights& nl, const Vec& x, const Vec& ctx, std::size_t h, std::size_t w) {
  const std::size_t n = h * w, c = nl.channels, ci = nl.inner;
  auto project = [&](const Vec& wt, const Vec& b, const Vec& src, std::size_t pos, std::size_t o) {
    double s = b.empty() ? 0.0 : b[o];
    for (std::size_t i = 0; i < c; ++i) s += wt[o * c + i] * src[i * n + pos];
    return s;
  };
  Vec out(c * n, 0.0);
  for (std::size_t q = 0; q < n; ++q) {
    Vec logits(n);
    double top = -INFINITY;
    for (std::size_t k = 0; k < n; ++k) {
      double s = 0.0;
      for (std::size_t o = 0; o < ci; ++o) s += project(nl.theta_w, nl.theta_b, x, q, o) * project(nl.phi_w, nl.phi_b, ctx, k, o);
      logits[k] = s;
      top = std::max(top, s);
    }
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - top));
    Vec y(ci, 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t o = 0; o < ci; ++o) y[o] += logits[k] / z * project(nl.g_w, nl.g_b, ctx, k, o);
    for (std::size_t oc = 0; oc < c; ++oc) {
      double s = nl.z_b.empty() ? 0.0 : nl.z_b[oc];
      for (std::size_t o = 0; o < ci; ++o) s += nl.z_w[oc * ci + o] * y[o];
      out[oc * n + q] = s + x[oc * n + q];
    }
  }
  return out;
}

// Root-aligned mean Euclidean distance of two [n,3] point sets.
inline double aligned_mean_distance(const Vec& a, const Vec& b, const double* root_a, const double* root_b) {
  const std::size_t n = a.size() / 3;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
      double d = (a[3 * i + k] - root_a[k]) - (b[3 * i + k] - root_b[k]);
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total / static_cast<double>(n);
}

inline double mean_abs_error(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

// Bias-corrected Adam on a flat parameter vector.
struct Adam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Vec m, v;
  int t = 0;

  void step(Vec& p, const Vec& g) {
    if (m.empty()) m.assign(p.size(), 0.0), v.assign(p.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      double mh = m[i] / (1 - std::pow(b1, t));
      double vh = v[i] / (1 - std::pow(b2, t));
      p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

}  // namespace oracle
