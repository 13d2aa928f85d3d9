#include <cmath>

#include "vmbh/error.hpp"
#include "vmbh/ops.hpp"

namespace vmbh {

using detail::Node;
using detail::TensorImpl;

Shape broadcast_shape(const Shape& a, const Shape& b) {
  std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

// For every output element, the linear index into an operand broadcast to `out`.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  std::size_t rank = out.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    std::size_t axis = i + (rank - in.size());
    stride[axis] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  std::size_t n = numel_of(out);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t lin = 0;
  for (std::size_t k = 0; k < n; ++k) {
    idx[k] = lin;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      lin += stride[ax];
      if (counter[ax] < out[ax]) break;
      lin -= stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return idx;
}

enum class BinOp { Add, Sub, Mul, Div };

const char* bin_name(BinOp op) {
  switch (op) {
    case BinOp::Add: return "add";
    case BinOp::Sub: return "sub";
    case BinOp::Mul: return "mul";
    case BinOp::Div: return "div";
  }
  return "?";
}

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto da = a.data();
  auto db = b.data();
  if (sa == sb) {
    std::size_t n = da.size();
    std::vector<double> out(n);
    switch (op) {
      case BinOp::Add: for (std::size_t i = 0; i < n; ++i) out[i] = da[i] + db[i]; break;
      case BinOp::Sub: for (std::size_t i = 0; i < n; ++i) out[i] = da[i] - db[i]; break;
      case BinOp::Mul: for (std::size_t i = 0; i < n; ++i) out[i] = da[i] * db[i]; break;
      case BinOp::Div: for (std::size_t i = 0; i < n; ++i) out[i] = da[i] / db[i]; break;
    }
    return detail::make_result(sa, std::move(out), bin_name(op), {a, b},
                               [op, n](const Node& node, const TensorImpl& res) {
                                 const auto& g = res.grad;
                                 const auto& xa = node.inputs[0]->data;
                                 const auto& xb = node.inputs[1]->data;
                                 double* ga = node.grad_of(0);
                                 double* gb = node.grad_of(1);
                                 for (std::size_t i = 0; i < n; ++i) {
                                   switch (op) {
                                     case BinOp::Add:
                                       if (ga) ga[i] += g[i];
                                       if (gb) gb[i] += g[i];
                                       break;
                                     case BinOp::Sub:
                                       if (ga) ga[i] += g[i];
                                       if (gb) gb[i] -= g[i];
                                       break;
                                     case BinOp::Mul:
                                       if (ga) ga[i] += g[i] * xb[i];
                                       if (gb) gb[i] += g[i] * xa[i];
                                       break;
                                     case BinOp::Div:
                                       if (ga) ga[i] += g[i] / xb[i];
                                       if (gb) gb[i] -= g[i] * xa[i] / (xb[i] * xb[i]);
                                       break;
                                   }
                                 }
                               });
  }

  Shape out_shape = broadcast_shape(sa, sb);
  auto ia = broadcast_index(sa, out_shape);
  auto ib = broadcast_index(sb, out_shape);
  std::size_t n = ia.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = da[ia[i]];
    double y = db[ib[i]];
    switch (op) {
      case BinOp::Add: out[i] = x + y; break;
      case BinOp::Sub: out[i] = x - y; break;
      case BinOp::Mul: out[i] = x * y; break;
      case BinOp::Div: out[i] = x / y; break;
    }
  }
  return detail::make_result(
      out_shape, std::move(out), bin_name(op), {a, b},
      [op, ia = std::move(ia), ib = std::move(ib)](const Node& node, const TensorImpl& res) {
        const auto& g = res.grad;
        const auto& xa = node.inputs[0]->data;
        const auto& xb = node.inputs[1]->data;
        double* ga = node.grad_of(0);
        double* gb = node.grad_of(1);
        for (std::size_t i = 0; i < g.size(); ++i) {
          double x = xa[ia[i]];
          double y = xb[ib[i]];
          switch (op) {
            case BinOp::Add:
              if (ga) ga[ia[i]] += g[i];
              if (gb) gb[ib[i]] += g[i];
              break;
            case BinOp::Sub:
              if (ga) ga[ia[i]] += g[i];
              if (gb) gb[ib[i]] -= g[i];
              break;
            case BinOp::Mul:
              if (ga) ga[ia[i]] += g[i] * y;
              if (gb) gb[ib[i]] += g[i] * x;
              break;
            case BinOp::Div:
              if (ga) ga[ia[i]] += g[i] / y;
              if (gb) gb[ib[i]] -= g[i] * x / (y * y);
              break;
          }
        }
      });
}

// Unary op whose local derivative is a function of (input, output).
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return detail::make_result(x.shape(), std::move(out), name, {x},
                             [deriv](const Node& node, const TensorImpl& res) {
                               double* gx = node.grad_of(0);
                               if (!gx) return;
                               const auto& xin = node.inputs[0]->data;
                               for (std::size_t i = 0; i < xin.size(); ++i) {
                                 gx[i] += res.grad[i] * deriv(xin[i], res.data[i]);
                               }
                             });
}

double sigmoid_value(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Div); }

Tensor neg(const Tensor& x) {
  return unary(x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(x, "scale", [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, "add_scalar", [value](double v) { return v + value; },
               [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& x) {
  return unary(x, "silu", [](double v) { return v * sigmoid_value(v); },
               [](double v, double) {
                 double s = sigmoid_value(v);
                 return s * (1.0 + v * (1.0 - s));
               });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor softplus(const Tensor& x) {
  return unary(x, "softplus",
               [](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
               [](double v, double) { return sigmoid_value(v); });
}

Tensor abs(const Tensor& x) {
  return unary(x, "abs", [](double v) { return std::fabs(v); },
               [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& x) {
  return unary(x, "sqrt", [](double v) { return std::sqrt(v); },
               [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

}  // namespace vmbh
