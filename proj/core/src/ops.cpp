#include "dsanet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "dsanet/errors.hpp"

namespace dsanet::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool wants(const std::shared_ptr<Node>& n) { return n && n->requires_grad; }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void check_axes(const Shape& shape, const Axes& axes, const char* op) {
  if (axes.empty()) throw ArgumentError(std::string(op) + ": empty axis set");
  for (auto a : axes) {
    if (a >= shape.size()) {
      throw ShapeError(std::string(op) + ": axis " + std::to_string(a) + " out of range for " + shape_str(shape));
    }
  }
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> st(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

}  // namespace

Shape reduced_shape(const Shape& shape, const Axes& axes, bool keepdim) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const bool r = std::find(axes.begin(), axes.end(), i) != axes.end();
    if (!r) {
      out.push_back(shape[i]);
    } else if (keepdim) {
      out.push_back(1);
    }
  }
  return out;
}

std::vector<std::size_t> reduction_map(const Shape& shape, const Axes& axes) {
  const std::size_t rank = shape.size();
  Shape kept = reduced_shape(shape, axes, true);
  auto out_strides = strides_of(kept);
  std::vector<bool> reduced(rank, false);
  for (auto a : axes) reduced[a] = true;

  const std::size_t n = shape_numel(shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t out = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = out;
    // increment the multi-index, keeping `out` in sync
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      if (!reduced[ax]) out += out_strides[ax];
      if (idx[ax] < shape[ax]) break;
      if (!reduced[ax]) out -= out_strides[ax] * shape[ax];
      idx[ax] = 0;
    }
  }
  return map;
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return make_result(std::move(out), "add", {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (wants(in)) in->accumulate(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return make_result(std::move(out), "sub", {a, b}, [](Node& self) {
    if (wants(self.inputs[0])) self.inputs[0]->accumulate(self.grad);
    if (wants(self.inputs[1])) {
      Tensor g = self.grad;
      for (auto& v : g.data()) v = -v;
      self.inputs[1]->accumulate(g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return make_result(std::move(out), "mul", {a, b}, [](Node& self) {
    const auto& A = self.inputs[0];
    const auto& B = self.inputs[1];
    auto g = self.grad.data();
    if (wants(A)) {
      Tensor ga = self.grad;
      auto d = ga.data();
      auto bv = B->value.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * bv[i];
      A->accumulate(ga);
    }
    if (wants(B)) {
      Tensor gb = self.grad;
      auto d = gb.data();
      auto av = A->value.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * av[i];
      B->accumulate(gb);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return make_result(std::move(out), "scale", {a}, [s](Node& self) {
    Tensor g = self.grad;
    for (auto& v : g.data()) v *= s;
    self.inputs[0]->accumulate(g);
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), "relu", {x}, [](Node& self) {
    Tensor g = self.grad;
    auto d = g.data();
    auto y = self.value.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (y[i] <= 0.0) d[i] = 0.0;
    }
    self.inputs[0]->accumulate(g);
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_result(std::move(out), "reshape", {x}, [](Node& self) {
    self.inputs[0]->accumulate(self.grad.reshaped(self.inputs[0]->value.shape()));
  });
}

Var expand(const Var& x, const Shape& shape) {
  const Shape& in = x.shape();
  if (in.size() != shape.size()) throw ShapeError("expand: rank mismatch " + shape_str(in) + " -> " + shape_str(shape));
  Axes axes;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == shape[i]) continue;
    if (in[i] != 1) throw ShapeError("expand: cannot broadcast " + shape_str(in) + " to " + shape_str(shape));
    axes.push_back(i);
  }
  if (axes.empty()) return x;
  auto map = reduction_map(shape, axes);
  Tensor out(shape);
  auto o = out.data();
  auto src = x.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = src[map[i]];
  return make_result(std::move(out), "expand", {x}, [map = std::move(map)](Node& self) {
    Tensor g(self.inputs[0]->value.shape(), 0.0);
    auto d = g.data();
    auto go = self.grad.data();
    for (std::size_t i = 0; i < go.size(); ++i) d[map[i]] += go[i];
    self.inputs[0]->accumulate(g);
  });
}

namespace {

// View of a tensor as [outer, axis, inner] around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& in = x.shape();
  if (axis >= in.size()) throw ShapeError("slice: axis out of range for " + shape_str(in));
  if (begin >= end || end > in[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                     std::to_string(axis) + " of " + shape_str(in));
  }
  Shape os = in;
  os[axis] = end - begin;
  const auto sp = split_at(in, axis);
  const std::size_t w = end - begin;
  Tensor out(os);
  const double* src = x.value().ptr();
  double* dst = out.ptr();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(src + (o * sp.len + begin) * sp.inner, w * sp.inner, dst + o * w * sp.inner);
  }
  return make_result(std::move(out), "slice", {x}, [sp, begin, w](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const double* go = self.grad.ptr();
    double* gi = g.ptr();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* row = gi + (o * sp.len + begin) * sp.inner;
      const double* src_row = go + o * w * sp.inner;
      for (std::size_t i = 0; i < w * sp.inner; ++i) row[i] += src_row[i];
    }
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ArgumentError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
  Shape os = s0;
  os[axis] = 0;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) {
        throw ShapeError("concat: " + shape_str(s) + " vs " + shape_str(s0) + " off axis " + std::to_string(axis));
      }
    }
    os[axis] += s[axis];
    lens.push_back(s[axis]);
  }
  const auto sp = split_at(os, axis);
  Tensor out(os);
  double* dst = out.ptr();
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double* src = parts[k].value().ptr();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(src + o * lens[k] * sp.inner, lens[k] * sp.inner, dst + (o * sp.len + off) * sp.inner);
    }
    off += lens[k];
  }
  return make_result(std::move(out), "concat", parts, [sp, lens](Node& self) {
    std::size_t off = 0;
    const double* go = self.grad.ptr();
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      auto& in = self.inputs[k];
      if (wants(in)) {
        double* gi = in->grad_buffer().ptr();
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = go + (o * sp.len + off) * sp.inner;
          double* row = gi + o * lens[k] * sp.inner;
          for (std::size_t i = 0; i < lens[k] * sp.inner; ++i) row[i] += src[i];
        }
      }
      off += lens[k];
    }
  });
}

Var pad(const Var& x, std::size_t axis, std::size_t before, std::size_t after) {
  const Shape& in = x.shape();
  if (axis >= in.size()) throw ShapeError("pad: axis out of range for " + shape_str(in));
  if (before == 0 && after == 0) return x;
  Shape os = in;
  os[axis] += before + after;
  const auto sp = split_at(in, axis);
  const std::size_t olen = os[axis];
  Tensor out(os, 0.0);
  const double* src = x.value().ptr();
  double* dst = out.ptr();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(src + o * sp.len * sp.inner, sp.len * sp.inner, dst + (o * olen + before) * sp.inner);
  }
  return make_result(std::move(out), "pad", {x}, [sp, olen, before](Node& self) {
    double* gi = self.inputs[0]->grad_buffer().ptr();
    const double* go = self.grad.ptr();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const double* src = go + (o * olen + before) * sp.inner;
      double* row = gi + o * sp.len * sp.inner;
      for (std::size_t i = 0; i < sp.len * sp.inner; ++i) row[i] += src[i];
    }
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> index) {
  const Shape& in = x.shape();
  if (in.empty()) throw ShapeError("gather_rows on scalar");
  const std::size_t row = x.numel() / in[0];
  Shape os = in;
  os[0] = index.size();
  Tensor out(os);
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= in[0]) throw ArgumentError("gather_rows: index out of range");
    std::copy_n(x.value().ptr() + idx[i] * row, row, out.ptr() + i * row);
  }
  return make_result(std::move(out), "gather_rows", {x}, [idx = std::move(idx), row](Node& self) {
    double* gi = self.inputs[0]->grad_buffer().ptr();
    const double* go = self.grad.ptr();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < row; ++j) gi[idx[i] * row + j] += go[i * row + j];
    }
  });
}

Var reduce(const Var& x, ReduceKind kind, const Axes& axes, bool keepdim) {
  check_axes(x.shape(), axes, "reduce");
  const Shape keep_shape = reduced_shape(x.shape(), axes, true);
  Shape out_shape = reduced_shape(x.shape(), axes, keepdim);
  auto map = reduction_map(x.shape(), axes);
  const std::size_t nout = shape_numel(keep_shape);
  const std::size_t group = x.numel() / nout;
  auto src = x.value().data();

  std::vector<double> out(nout, kind == ReduceKind::Max ? -std::numeric_limits<double>::infinity() : 0.0);
  std::vector<std::size_t> argmax;
  if (kind == ReduceKind::Max) {
    argmax.assign(nout, 0);
    std::vector<bool> seen(nout, false);
    for (std::size_t i = 0; i < src.size(); ++i) {
      const auto o = map[i];
      // strict comparison keeps the lowest flat index among ties
      if (!seen[o] || src[i] > out[o]) {
        out[o] = src[i];
        argmax[o] = i;
        seen[o] = true;
      }
    }
  } else {
    for (std::size_t i = 0; i < src.size(); ++i) out[map[i]] += src[i];
    if (kind == ReduceKind::Mean) {
      for (auto& v : out) v /= static_cast<double>(group);
    }
  }
  Tensor result(out_shape, std::move(out));
  const char* name = kind == ReduceKind::Max ? "reduce_max" : (kind == ReduceKind::Mean ? "reduce_mean" : "reduce_sum");
  return make_result(std::move(result), name, {x},
                     [kind, map = std::move(map), argmax = std::move(argmax), group](Node& self) {
                       Tensor& g = self.inputs[0]->grad_buffer();
                       auto gi = g.data();
                       auto go = self.grad.data();
                       if (kind == ReduceKind::Max) {
                         for (std::size_t o = 0; o < argmax.size(); ++o) gi[argmax[o]] += go[o];
                       } else {
                         const double f = kind == ReduceKind::Mean ? 1.0 / static_cast<double>(group) : 1.0;
                         for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[map[i]] * f;
                       }
                     });
}

Var sum(const Var& x) {
  Axes all(x.shape().size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  if (all.empty()) return x;
  return reduce(x, ReduceKind::Sum, all, false);
}

Var mean(const Var& x) {
  Axes all(x.shape().size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  if (all.empty()) return x;
  return reduce(x, ReduceKind::Mean, all, false);
}

Var softmax(const Var& x, const Axes& axes) {
  check_axes(x.shape(), axes, "softmax");
  auto map = reduction_map(x.shape(), axes);
  const std::size_t nout = shape_numel(reduced_shape(x.shape(), axes, true));
  auto src = x.value().data();
  std::vector<double> mx(nout, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < src.size(); ++i) mx[map[i]] = std::max(mx[map[i]], src[i]);
  Tensor out(x.shape());
  auto y = out.data();
  std::vector<double> den(nout, 0.0);
  for (std::size_t i = 0; i < src.size(); ++i) {
    y[i] = std::exp(src[i] - mx[map[i]]);
    den[map[i]] += y[i];
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= den[map[i]];
  return make_result(std::move(out), "softmax", {x}, [map = std::move(map), nout](Node& self) {
    auto y = self.value.data();
    auto go = self.grad.data();
    std::vector<double> dot(nout, 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) dot[map[i]] += go[i] * y[i];
    Tensor g(self.value.shape());
    auto gi = g.data();
    for (std::size_t i = 0; i < y.size(); ++i) gi[i] = y[i] * (go[i] - dot[map[i]]);
    self.inputs[0]->accumulate(g);
  });
}

namespace {

struct ConvGeom {
  std::size_t n, cin, h, w, cout, k, stride, pad, ho, wo;
  std::size_t patch() const { return cin * k * k; }
  std::size_t pixels() const { return ho * wo; }
};

// cols: [cin*k*k, n*ho*wo]
void im2col(const ConvGeom& g, const double* x, double* cols) {
  const std::size_t total = g.n * g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((c * g.k + ky) * g.k + kx) * total;
        for (std::size_t n = 0; n < g.n; ++n) {
          const double* img = x + (n * g.cin + c) * g.h * g.w;
          double* dst = row + n * g.pixels();
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
              dst[oy * g.wo + ox] = inside ? img[static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im(const ConvGeom& g, const double* cols, double* dx) {
  const std::size_t total = g.n * g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((c * g.k + ky) * g.k + kx) * total;
        for (std::size_t n = 0; n < g.n; ++n) {
          double* img = dx + (n * g.cin + c) * g.h * g.w;
          const double* src = row + n * g.pixels();
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
              img[static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)] += src[oy * g.wo + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride, std::size_t padding) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_str(xs));
  if (ws.size() != 4 || ws[2] != ws[3]) throw ShapeError("conv2d: kernel must be [Cout,Cin,k,k], got " + shape_str(ws));
  if (ws[1] != xs[1]) {
    throw ShapeError("conv2d: input channels " + std::to_string(xs[1]) + " != kernel channels " +
                     std::to_string(ws[1]) + " (axes: input 1, kernel 1)");
  }
  if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
  if (ws[2] % 2 == 0) throw ArgumentError("conv2d: kernel size must be odd");
  if (bias.defined() && (bias.shape().size() != 1 || bias.shape()[0] != ws[0])) {
    throw ShapeError("conv2d: bias must be [Cout], got " + shape_str(bias.shape()));
  }
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, padding, 0, 0};
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) throw ShapeError("conv2d: kernel larger than padded input");
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;

  const std::size_t total = g.n * g.pixels();
  std::vector<double> cols(g.patch() * total);
  im2col(g, x.value().ptr(), cols.data());
  RowMat prod(g.cout, total);
  prod.noalias() = CMapMat(weight.value().ptr(), g.cout, g.patch()) * CMapMat(cols.data(), g.patch(), total);

  Tensor out(Shape{g.n, g.cout, g.ho, g.wo});
  double* o = out.ptr();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const double b = bias.defined() ? bias.value()[co] : 0.0;
      const double* src = prod.data() + co * total + n * g.pixels();
      double* dst = o + (n * g.cout + co) * g.pixels();
      for (std::size_t p = 0; p < g.pixels(); ++p) dst[p] = src[p] + b;
    }
  }

  return make_result(std::move(out), "conv2d", {x, weight, bias}, [g](Node& self) {
    const auto& X = self.inputs[0];
    const auto& Wt = self.inputs[1];
    const auto& Bs = self.inputs[2];
    const std::size_t total = g.n * g.pixels();
    // dY as [cout, n*pixels]
    RowMat dy(g.cout, total);
    const double* go = self.grad.ptr();
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t co = 0; co < g.cout; ++co) {
        std::copy_n(go + (n * g.cout + co) * g.pixels(), g.pixels(), dy.data() + co * total + n * g.pixels());
      }
    }
    if (wants(Bs)) {
      Tensor gb(Shape{g.cout});
      for (std::size_t co = 0; co < g.cout; ++co) gb[co] = dy.row(static_cast<Eigen::Index>(co)).sum();
      Bs->accumulate(gb);
    }
    if (wants(Wt)) {
      std::vector<double> cols(g.patch() * total);
      im2col(g, X->value.ptr(), cols.data());
      Tensor gw(Wt->value.shape());
      MapMat(gw.ptr(), g.cout, g.patch()).noalias() = dy * CMapMat(cols.data(), g.patch(), total).transpose();
      Wt->accumulate(gw);
    }
    if (wants(X)) {
      RowMat dcols(g.patch(), total);
      dcols.noalias() = CMapMat(Wt->value.ptr(), g.cout, g.patch()).transpose() * dy;
      Tensor& gx = X->grad_buffer();
      col2im(g, dcols.data(), gx.ptr());
    }
  });
}

Var linear(const Var& x, const Var& weight) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) {
    throw ShapeError("linear: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
  }
  const auto b = static_cast<Eigen::Index>(xs[0]);
  const auto c = static_cast<Eigen::Index>(xs[1]);
  const auto k = static_cast<Eigen::Index>(ws[0]);
  Tensor out(Shape{xs[0], ws[0]});
  MapMat(out.ptr(), b, k).noalias() = CMapMat(x.value().ptr(), b, c) * CMapMat(weight.value().ptr(), k, c).transpose();
  return make_result(std::move(out), "linear", {x, weight}, [b, c, k](Node& self) {
    const auto& X = self.inputs[0];
    const auto& Wt = self.inputs[1];
    CMapMat dy(self.grad.ptr(), b, k);
    if (wants(X)) {
      Tensor gx(X->value.shape());
      MapMat(gx.ptr(), b, c).noalias() = dy * CMapMat(Wt->value.ptr(), k, c);
      X->accumulate(gx);
    }
    if (wants(Wt)) {
      Tensor gw(Wt->value.shape());
      MapMat(gw.ptr(), k, c).noalias() = dy.transpose() * CMapMat(X->value.ptr(), b, c);
      Wt->accumulate(gw);
    }
  });
}

Var channel_norm(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& var,
                 double eps) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("channel_norm: input must be [N,C,H,W], got " + shape_str(xs));
  const std::size_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  if (gamma.numel() != c || beta.numel() != c || mean.numel() != c || var.numel() != c) {
    throw ShapeError("channel_norm: per-channel parameters must have " + std::to_string(c) + " entries");
  }
  std::vector<double> inv(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv[ch] = 1.0 / std::sqrt(var[ch] + eps);
  Tensor out(xs);
  const double* src = x.value().ptr();
  double* dst = out.ptr();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double a = gamma.value()[ch] * inv[ch];
      const double b = beta.value()[ch] - a * mean[ch];
      const std::size_t off = (i * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) dst[off + p] = a * src[off + p] + b;
    }
  }
  return make_result(std::move(out), "channel_norm", {x, gamma, beta},
                     [n, c, hw, inv = std::move(inv), mean](Node& self) {
                       const auto& X = self.inputs[0];
                       const auto& G = self.inputs[1];
                       const auto& B = self.inputs[2];
                       const double* go = self.grad.ptr();
                       const double* xv = X->value.ptr();
                       if (wants(X)) {
                         double* gx = X->grad_buffer().ptr();
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             const double a = G->value[ch] * inv[ch];
                             const std::size_t off = (i * c + ch) * hw;
                             for (std::size_t p = 0; p < hw; ++p) gx[off + p] += a * go[off + p];
                           }
                         }
                       }
                       if (wants(G) || wants(B)) {
                         Tensor gg(Shape{c}, 0.0), gb(Shape{c}, 0.0);
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             const std::size_t off = (i * c + ch) * hw;
                             for (std::size_t p = 0; p < hw; ++p) {
                               gg[ch] += go[off + p] * (xv[off + p] - mean[ch]) * inv[ch];
                               gb[ch] += go[off + p];
                             }
                           }
                         }
                         if (wants(G)) G->accumulate(gg);
                         if (wants(B)) B->accumulate(gb);
                       }
                     });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps, Tensor* mean_out, Tensor* var_out) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("batch_norm: input must be [N,C,H,W], got " + shape_str(xs));
  const std::size_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("batch_norm: per-channel parameters must have " + std::to_string(c) + " entries");
  }
  const double m = static_cast<double>(n * hw);
  const double* src = x.value().ptr();
  Tensor mean(Shape{c}, 0.0), var(Shape{c}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = src + (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) mean[ch] += p[k];
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) mean[ch] /= m;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = src + (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) var[ch] += (p[k] - mean[ch]) * (p[k] - mean[ch]);
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) var[ch] /= m;

  std::vector<double> inv(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv[ch] = 1.0 / std::sqrt(var[ch] + eps);
  Tensor xhat(xs), out(xs);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (i * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        xhat[off + p] = (src[off + p] - mean[ch]) * inv[ch];
        out[off + p] = gamma.value()[ch] * xhat[off + p] + beta.value()[ch];
      }
    }
  }
  if (mean_out) *mean_out = mean;
  if (var_out) *var_out = var;
  return make_result(std::move(out), "batch_norm", {x, gamma, beta},
                     [n, c, hw, m, inv = std::move(inv), xhat = std::move(xhat)](Node& self) {
                       const auto& X = self.inputs[0];
                       const auto& G = self.inputs[1];
                       const auto& B = self.inputs[2];
                       const double* go = self.grad.ptr();
                       std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           const std::size_t off = (i * c + ch) * hw;
                           for (std::size_t p = 0; p < hw; ++p) {
                             sum_g[ch] += go[off + p];
                             sum_gx[ch] += go[off + p] * xhat[off + p];
                           }
                         }
                       }
                       if (wants(X)) {
                         // dx = gamma inv / M (M dy - sum dy - xhat sum(dy xhat))
                         double* gx = X->grad_buffer().ptr();
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             const double a = G->value[ch] * inv[ch] / m;
                             const std::size_t off = (i * c + ch) * hw;
                             for (std::size_t p = 0; p < hw; ++p) {
                               gx[off + p] += a * (m * go[off + p] - sum_g[ch] - xhat[off + p] * sum_gx[ch]);
                             }
                           }
                         }
                       }
                       if (wants(G)) G->accumulate(Tensor(Shape{c}, std::vector<double>(sum_gx)));
                       if (wants(B)) B->accumulate(Tensor(Shape{c}, std::vector<double>(sum_g)));
                     });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [B,K], got " + shape_str(logits.shape()));
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (labels.size() != b) throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                           std::to_string(b) + " rows");
  Tensor out(Shape{b});
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ArgumentError("cross_entropy: label " + std::to_string(labels[i]) + " out of range [0," +
                          std::to_string(k) + ")");
    }
    const double* row = logits.ptr() + i * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    out[i] = std::log(s) + mx - row[labels[i]];
  }
  return out;
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  Tensor rows = cross_entropy_rows(logits.value(), labels);
  const std::size_t b = rows.numel();
  double total = 0.0;
  for (auto v : rows.data()) total += v;
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result(Tensor::scalar(total / static_cast<double>(b)), "cross_entropy", {logits},
                     [lab = std::move(lab)](Node& self) {
                       const Tensor& z = self.inputs[0]->value;
                       const std::size_t b = z.dim(0), k = z.dim(1);
                       const double g = self.grad[0] / static_cast<double>(b);
                       Tensor gz(z.shape());
                       for (std::size_t i = 0; i < b; ++i) {
                         const double* row = z.ptr() + i * k;
                         double* grow = gz.ptr() + i * k;
                         const double mx = *std::max_element(row, row + k);
                         double s = 0.0;
                         for (std::size_t j = 0; j < k; ++j) {
                           grow[j] = std::exp(row[j] - mx);
                           s += grow[j];
                         }
                         for (std::size_t j = 0; j < k; ++j) grow[j] = g * grow[j] / s;
                         grow[lab[i]] -= g;
                       }
                       self.inputs[0]->accumulate(gz);
                     });
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a, b, "mse");
  auto av = a.value().data();
  auto bv = b.value().data();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double n = static_cast<double>(av.size());
  return make_result(Tensor::scalar(s / n), "mse", {a, b}, [n](Node& self) {
    const auto& A = self.inputs[0];
    const auto& B = self.inputs[1];
    const double g = self.grad[0] * 2.0 / n;
    Tensor d(A->value.shape());
    auto dv = d.data();
    auto av = A->value.data();
    auto bv = B->value.data();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = g * (av[i] - bv[i]);
    if (wants(A)) A->accumulate(d);
    if (wants(B)) {
      for (auto& v : dv) v = -v;
      B->accumulate(d);
    }
  });
}

}  // namespace dsanet::ops
