#include <algorithm>
#include <numeric>

#include "vmbh/error.hpp"
#include "vmbh/ops.hpp"

namespace vmbh {

using detail::Node;
using detail::TensorImpl;

namespace {

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw ContractError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " +
                        std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

enum class ReduceOp { Sum, Mean, Max };

Tensor reduce(const Tensor& x, std::vector<int> axes, bool keepdim, ReduceOp op) {
  const char* name = op == ReduceOp::Sum ? "sum" : (op == ReduceOp::Mean ? "mean" : "max");
  const Shape& in = x.shape();
  std::size_t rank = in.size();
  std::vector<bool> reduced(rank, axes.empty());
  for (int a : axes) {
    auto ax = normalize_axis(a, rank, name);
    if (reduced[ax]) throw ContractError(std::string(name) + ": axis listed twice");
    reduced[ax] = true;
  }
  Shape out_shape;
  Shape kept_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    if (reduced[i]) {
      count *= in[i];
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(in[i]);
    }
    kept_shape.push_back(reduced[i] ? 1 : in[i]);
  }
  if (count == 0) throw ContractError(std::string(name) + ": empty reduction");

  // Map each input element onto its output slot.
  auto out_strides = strides_of(kept_shape);
  std::size_t n = x.numel();
  std::vector<std::size_t> target(n);
  {
    std::vector<std::size_t> counter(rank, 0);
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t t = 0;
      for (std::size_t ax = 0; ax < rank; ++ax) {
        if (!reduced[ax]) t += counter[ax] * out_strides[ax];
      }
      target[k] = t;
      for (std::size_t ax = rank; ax-- > 0;) {
        if (++counter[ax] < in[ax]) break;
        counter[ax] = 0;
      }
    }
  }
  std::size_t out_n = numel_of(kept_shape);
  auto xs = x.data();
  std::vector<double> out(out_n, 0.0);
  if (op == ReduceOp::Max) {
    std::vector<std::size_t> argmax(out_n, n);
    for (std::size_t k = 0; k < n; ++k) {
      auto t = target[k];
      if (argmax[t] == n || xs[k] > out[t]) {
        out[t] = xs[k];
        argmax[t] = k;
      }
    }
    return detail::make_result(out_shape, std::move(out), name, {x},
                               [argmax = std::move(argmax)](const Node& node, const TensorImpl& res) {
                                 double* gx = node.grad_of(0);
                                 if (!gx) return;
                                 for (std::size_t t = 0; t < argmax.size(); ++t) gx[argmax[t]] += res.grad[t];
                               });
  }
  for (std::size_t k = 0; k < n; ++k) out[target[k]] += xs[k];
  double factor = op == ReduceOp::Mean ? 1.0 / static_cast<double>(count) : 1.0;
  if (op == ReduceOp::Mean) {
    for (auto& v : out) v *= factor;
  }
  return detail::make_result(out_shape, std::move(out), name, {x},
                             [factor, target = std::move(target)](const Node& node, const TensorImpl& res) {
                               double* gx = node.grad_of(0);
                               if (!gx) return;
                               for (std::size_t k = 0; k < target.size(); ++k) gx[k] += res.grad[target[k]] * factor;
                             });
}

}  // namespace

Tensor sum(const Tensor& x, std::vector<int> axes, bool keepdim) {
  return reduce(x, std::move(axes), keepdim, ReduceOp::Sum);
}
Tensor mean(const Tensor& x, std::vector<int> axes, bool keepdim) {
  return reduce(x, std::move(axes), keepdim, ReduceOp::Mean);
}
Tensor max(const Tensor& x, std::vector<int> axes, bool keepdim) {
  return reduce(x, std::move(axes), keepdim, ReduceOp::Max);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto d = x.data();
  return detail::make_result(std::move(shape), std::vector<double>(d.begin(), d.end()), "reshape", {x},
                             [](const Node& node, const TensorImpl& res) {
                               double* gx = node.grad_of(0);
                               if (!gx) return;
                               for (std::size_t i = 0; i < res.grad.size(); ++i) gx[i] += res.grad[i];
                             });
}

Tensor transpose(const Tensor& x) {
  if (x.dim() != 2) throw DimensionError("transpose: expected 2-D tensor, got " + shape_str(x.shape()));
  return permute(x, {1, 0});
}

Tensor permute(const Tensor& x, std::vector<std::size_t> order) {
  const Shape& in = x.shape();
  std::size_t rank = in.size();
  if (order.size() != rank) throw ContractError("permute: order rank does not match " + shape_str(in));
  {
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < rank; ++i) {
      if (sorted[i] != i) throw ContractError("permute: order is not a permutation");
    }
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in[order[i]];
  auto in_strides = strides_of(in);
  std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> counter(rank, 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t s = 0;
    for (std::size_t ax = 0; ax < rank; ++ax) s += counter[ax] * in_strides[order[ax]];
    src[k] = s;
    for (std::size_t ax = rank; ax-- > 0;) {
      if (++counter[ax] < out_shape[ax]) break;
      counter[ax] = 0;
    }
  }
  auto d = x.data();
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = d[src[k]];
  return detail::make_result(std::move(out_shape), std::move(out), "permute", {x},
                             [src = std::move(src)](const Node& node, const TensorImpl& res) {
                               double* gx = node.grad_of(0);
                               if (!gx) return;
                               for (std::size_t k = 0; k < src.size(); ++k) gx[src[k]] += res.grad[k];
                             });
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  std::size_t ax = normalize_axis(axis, first.size(), "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != ax && s[i] != first[i]) ok = false;
    }
    if (!ok) throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first));
    out_shape[ax] += s[ax];
  }
  std::size_t outer = std::accumulate(first.begin(), first.begin() + static_cast<long>(ax), std::size_t{1},
                                      std::multiplies<>());
  std::size_t inner = std::accumulate(first.begin() + static_cast<long>(ax) + 1, first.end(), std::size_t{1},
                                      std::multiplies<>());
  std::size_t row = out_shape[ax] * inner;
  std::vector<double> out(numel_of(out_shape));
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::size_t w = p.shape()[ax] * inner;
    auto d = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(d.begin() + static_cast<long>(o * w), w, out.begin() + static_cast<long>(o * row + offset));
    }
    widths.push_back(w);
    offset += w;
  }
  return detail::make_result(std::move(out_shape), std::move(out), "concat", parts,
                             [outer, row, widths = std::move(widths)](const Node& node, const TensorImpl& res) {
                               std::size_t off = 0;
                               for (std::size_t p = 0; p < widths.size(); ++p) {
                                 double* gp = node.grad_of(p);
                                 std::size_t w = widths[p];
                                 if (gp) {
                                   for (std::size_t o = 0; o < outer; ++o) {
                                     for (std::size_t i = 0; i < w; ++i) gp[o * w + i] += res.grad[o * row + off + i];
                                   }
                                 }
                                 off += w;
                               }
                             });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const Shape& in = x.shape();
  std::size_t ax = normalize_axis(axis, in.size(), "slice");
  if (begin >= end || end > in[ax]) {
    throw ContractError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                        ") invalid for axis of size " + std::to_string(in[ax]));
  }
  Shape out_shape = in;
  out_shape[ax] = end - begin;
  std::size_t outer = std::accumulate(in.begin(), in.begin() + static_cast<long>(ax), std::size_t{1},
                                      std::multiplies<>());
  std::size_t inner = std::accumulate(in.begin() + static_cast<long>(ax) + 1, in.end(), std::size_t{1},
                                      std::multiplies<>());
  std::size_t row = in[ax] * inner;
  std::size_t w = (end - begin) * inner;
  std::size_t off = begin * inner;
  auto d = x.data();
  std::vector<double> out(outer * w);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(d.begin() + static_cast<long>(o * row + off), w, out.begin() + static_cast<long>(o * w));
  }
  return detail::make_result(std::move(out_shape), std::move(out), "slice", {x},
                             [outer, row, w, off](const Node& node, const TensorImpl& res) {
                               double* gx = node.grad_of(0);
                               if (!gx) return;
                               for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t i = 0; i < w; ++i) gx[o * row + off + i] += res.grad[o * w + i];
                               }
                             });
}

}  // namespace vmbh
