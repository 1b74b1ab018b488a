#include "dbnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace dbnet::ops {
namespace {

template <typename T>
bool tracking(Tape<T>* tape, std::initializer_list<const Var<T>*> inputs) {
  if (tape == nullptr) return false;
  for (const auto* v : inputs) {
    if (v->defined() && v->requires_grad()) return true;
  }
  return false;
}

template <typename T>
Var<T> make_output(Tensor<T> value, bool tracked) {
  return Var<T>(std::move(value), tracked);
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> st(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

template <typename T, typename F, typename D>
Var<T> unary(Tape<T>* tape, const Var<T>& x, const char* name, F f, D dfdx_from_xy) {
  Tensor<T> out(x.shape());
  const auto xs = x.value().data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = f(xs[i]);
  const bool tracked = tracking(tape, {&x});
  Var<T> y = make_output(std::move(out), tracked);
  if (tracked) {
    tape->record(name, y, [x, y, dfdx_from_xy]() mutable {
      auto gx = x.grad();
      const auto gy = y.grad();
      const auto xv = x.value().data();
      const auto yv = y.value().data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * dfdx_from_xy(xv[i], yv[i]);
    });
  }
  return y;
}

// Fixed-order dot product with eight partial sums so the loop vectorizes
// without relaxing floating-point semantics.
template <typename T>
T dot(const T* a, const T* b, std::ptrdiff_t n) {
  T acc[8] = {};
  std::ptrdiff_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  T total = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) total += a[i] * b[i];
  return total;
}

}  // namespace

template <typename T>
Var<T> add(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const auto av = a.value().data();
  const auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  const bool tracked = tracking(tape, {&a, &b});
  Var<T> y = make_output(std::move(out), tracked);
  if (tracked) {
    tape->record("add", y, [a, b, y]() mutable {
      const auto gy = y.grad();
      for (const Var<T>* in : {&a, &b}) {
        if (!in->requires_grad()) continue;
        auto g = in->grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
    });
  }
  return y;
}

template <typename T>
Var<T> mul(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const auto av = a.value().data();
  const auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  const bool tracked = tracking(tape, {&a, &b});
  Var<T> y = make_output(std::move(out), tracked);
  if (tracked) {
    tape->record("mul", y, [a, b, y]() mutable {
      const auto gy = y.grad();
      const auto av = a.value().data();
      const auto bv = b.value().data();
      if (a.requires_grad()) {
        auto g = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto g = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * av[i];
      }
    });
  }
  return y;
}

template <typename T>
Var<T> broadcast_mul(Tape<T>* tape, const Var<T>& x, const Var<T>& w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  bool ok = xs.size() == ws.size();
  for (std::size_t i = 0; ok && i < xs.size(); ++i) ok = ws[i] == xs[i] || ws[i] == 1;
  require(ok, "broadcast_mul: " + shape_str(ws) + " does not broadcast to " + shape_str(xs));

  // Linear index into w for every element of x.
  const auto wst = strides_of(ws);
  std::vector<std::size_t> widx(x.size());
  {
    std::vector<std::size_t> pos(xs.size(), 0);
    for (std::size_t i = 0; i < widx.size(); ++i) {
      std::size_t off = 0;
      for (std::size_t a = 0; a < xs.size(); ++a) off += (ws[a] == 1 ? 0 : pos[a]) * wst[a];
      widx[i] = off;
      for (std::size_t a = xs.size(); a-- > 0;) {
        if (++pos[a] < xs[a]) break;
        pos[a] = 0;
      }
    }
  }

  Tensor<T> out(xs);
  const auto xv = x.value().data();
  const auto wv = w.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * wv[widx[i]];
  const bool tracked = tracking(tape, {&x, &w});
  Var<T> y = make_output(std::move(out), tracked);
  if (tracked) {
    tape->record("broadcast_mul", y, [x, w, y, widx = std::move(widx)]() mutable {
      const auto gy = y.grad();
      const auto xv = x.value().data();
      const auto wv = w.value().data();
      if (x.requires_grad()) {
        auto g = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * wv[widx[i]];
      }
      if (w.requires_grad()) {
        auto g = w.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) g[widx[i]] += gy[i] * xv[i];
      }
    });
  }
  return y;
}

template <typename T>
Var<T> scale(Tape<T>* tape, const Var<T>& x, T factor) {
  return unary(
      tape, x, "scale", [factor](T v) { return v * factor; },
      [factor](T, T) { return factor; });
}

template <typename T>
Var<T> sum(Tape<T>* tape, const Var<T>& x) {
  T acc{};
  for (T v : x.value().data()) acc += v;
  const bool tracked = tracking(tape, {&x});
  Var<T> y = make_output(Tensor<T>(Shape{1}, std::vector<T>{acc}), tracked);
  if (tracked) {
    tape->record("sum", y, [x, y]() mutable {
      const T gy = y.grad()[0];
      for (auto& g : x.grad()) g += gy;
    });
  }
  return y;
}

template <typename T>
Var<T> mean_axis(Tape<T>* tape, const Var<T>& x, std::size_t axis) {
  require(axis < x.shape().size(), "mean_axis: axis " + std::to_string(axis) + " out of range for " +
                                       shape_str(x.shape()));
  const auto s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> out(out_shape);
  const auto xv = x.value().data();
  auto ov = out.data();
  const T inv = T{1} / static_cast<T>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const T* src = &xv[(o * s.extent + e) * s.inner];
      T* dst = &ov[o * s.inner];
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  for (auto& v : ov) v *= inv;
  const bool tracked = tracking(tape, {&x});
  Var<T> y = make_output(std::move(out), tracked);
  if (tracked) {
    tape->record("mean_axis", y, [x, y, s, inv]() mutable {
      const auto gy = y.grad();
      auto gx = x.grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t e = 0; e < s.extent; ++e) {
          T* dst = &gx[(o * s.extent + e) * s.inner];
          const T* src = &gy[o * s.inner];
          for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i] * inv;
        }
      }
    });
  }
  return y;
}

template <typename T>
Var<T> reshape(Tape<T>* tape, const Var<T>& x, Shape shape) {
  const bool tracked = tracking(tape, {&x});
  Var<T> y = make_output(x.value().reshaped(std::move(shape)), tracked);
  if (tracked) {
    tape->record("reshape", y, [x, y]() mutable {
      const auto gy = y.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

template <typename T>
Var<T> permute(Tape<T>* tape, const Var<T>& x, const std::vector<std::size_t>& order) {
  const Shape& xs = x.shape();
  std::vector<bool> seen(xs.size(), false);
  bool ok = order.size() == xs.size();
  for (std::size_t i = 0; ok && i < order.size(); ++i) {
    ok = order[i] < xs.size() && !seen[order[i]];
    if (ok) seen[order[i]] = true;
  }
  require(ok, "permute: invalid axis order for " + shape_str(xs));

  Shape ys(xs.size());
  for (std::size_t i = 0; i < order.size(); ++i) ys[i] = xs[order[i]];
  const auto xst = strides_of(xs);
  // src[i] is the x offset of output element i.
  std::vector<std::size_t> src(x.size());
  {
    std::vector<std::size_t> pos(ys.size(), 0);
    for (std::size_t i = 0; i < src.size(); ++i) {
      std::size_t off = 0;
      for (std::size_t a = 0; a < ys.size(); ++a) off += pos[a] * xst[order[a]];
      src[i] = off;
      for (std::size_t a = ys.size(); a-- > 0;) {
        if (++pos[a] < ys[a]) break;
        pos[a] = 0;
      }
    }
  }
  Tensor<T> out(ys);
  const auto xv = x.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[src[i]];
  const bool tracked = tracking(tape, {&x});
  Var<T> y = make_output(std::move(out), tracked);
  if (tracked) {
    tape->record("permute", y, [x, y, src = std::move(src)]() mutable {
      const auto gy = y.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[src[i]] += gy[i];
    });
  }
  return y;
}

template <typename T>
Var<T> slice(Tape<T>* tape, const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  require(axis < x.shape().size(), "slice: axis out of range for " + shape_str(x.shape()));
  require(length >= 1 && start + length <= x.dim(axis),
          "slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
              ") exceeds axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  const auto s = split_at(x.shape(), axis);
  Shape ys = x.shape();
  ys[axis] = length;
  Tensor<T> out(ys);
  const auto xv = x.value().data();
  auto ov = out.data();
  const std::size_t block = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(&xv[(o * s.extent + start) * s.inner], block, &ov[o * block]);
  }
  const bool tracked = tracking(tape, {&x});
  Var<T> y = make_output(std::move(out), tracked);
  if (tracked) {
    tape->record("slice", y, [x, y, s, start, block]() mutable {
      const auto gy = y.grad();
      auto gx = x.grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        T* dst = &gx[(o * s.extent + start) * s.inner];
        const T* src = &gy[o * block];
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    });
  }
  return y;
}

template <typename T>
Var<T> concat(Tape<T>* tape, const std::vector<Var<T>>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat: axis out of range for " + shape_str(first));
  Shape ys = first;
  ys[axis] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape();
    Shape b = first;
    require(a.size() == b.size(), "concat: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    a[axis] = b[axis] = 0;
    require(a == b, "concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(first));
    ys[axis] += p.dim(axis);
  }
  const auto s = split_at(ys, axis);
  Tensor<T> out(ys);
  auto ov = out.data();
  bool tracked = false;
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t block = p.dim(axis) * s.inner;
    const auto pv = p.value().data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(&pv[o * block], block, &ov[o * s.extent * s.inner + offset * s.inner]);
    }
    offsets.push_back(offset);
    offset += p.dim(axis);
    tracked = tracked || tracking(tape, {&p});
  }
  Var<T> y = make_output(std::move(out), tracked);
  if (tracked) {
    tape->record("concat", y, [parts, y, s, axis, offsets = std::move(offsets)]() mutable {
      const auto gy = y.grad();
      for (std::size_t k = 0; k < parts.size(); ++k) {
        auto& p = parts[k];
        if (!p.requires_grad()) continue;
        const std::size_t block = p.dim(axis) * s.inner;
        auto gp = p.grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
          const T* src = &gy[o * s.extent * s.inner + offsets[k] * s.inner];
          T* dst = &gp[o * block];
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return y;
}

namespace {

struct ConvGeometry {
  std::size_t batch, in_ch, h, w;
  std::size_t out_ch, in_per_group, out_per_group, kh, kw;
  std::size_t dh, dw;
  std::ptrdiff_t pad_top, pad_left;
  std::size_t out_h, out_w;
};

ConvGeometry conv_geometry(const Shape& xs, const Shape& ks, const ConvOptions& opt) {
  const std::string shapes = "input " + shape_str(xs) + ", kernel " + shape_str(ks);
  require(xs.size() == 4 && ks.size() == 4, "conv2d: expected rank-4 tensors, got " + shapes);
  require(opt.groups >= 1 && opt.dilation_h >= 1 && opt.dilation_w >= 1,
          "conv2d: groups and dilation must be positive");
  ConvGeometry g{};
  g.batch = xs[0];
  g.in_ch = xs[1];
  g.h = xs[2];
  g.w = xs[3];
  g.out_ch = ks[0];
  g.in_per_group = ks[1];
  g.kh = ks[2];
  g.kw = ks[3];
  g.dh = opt.dilation_h;
  g.dw = opt.dilation_w;
  require(g.in_ch % opt.groups == 0 && g.out_ch % opt.groups == 0 &&
              g.in_per_group * opt.groups == g.in_ch,
          "conv2d: channel mismatch for " + std::to_string(opt.groups) + " group(s), " + shapes);
  g.out_per_group = g.out_ch / opt.groups;
  const std::size_t span_h = (g.kh - 1) * g.dh;
  const std::size_t span_w = (g.kw - 1) * g.dw;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  switch (opt.padding) {
    case Padding::Valid:
      break;
    case Padding::Same:
      pad_h = span_h;
      pad_w = span_w;
      g.pad_top = static_cast<std::ptrdiff_t>(span_h / 2);
      g.pad_left = static_cast<std::ptrdiff_t>(span_w / 2);
      break;
    case Padding::Causal:
      pad_w = span_w;
      g.pad_left = static_cast<std::ptrdiff_t>(span_w);
      break;
  }
  require(g.h + pad_h > span_h && g.w + pad_w > span_w,
          "conv2d: dilated kernel does not fit padded input, " + shapes);
  g.out_h = g.h + pad_h - span_h;
  g.out_w = g.w + pad_w - span_w;
  return g;
}

// Calls fn(out_row, in_row, weight_index, off, lo, hi) for every row pair that
// contributes; valid output columns are [lo, hi) with input column ow + off.
template <typename Fn>
void for_each_conv_row(const ConvGeometry& g, Fn&& fn) {
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
      const std::size_t group = oc / g.out_per_group;
      for (std::size_t icg = 0; icg < g.in_per_group; ++icg) {
        const std::size_t ic = group * g.in_per_group + icg;
        for (std::size_t i = 0; i < g.kh; ++i) {
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh + i * g.dh) - g.pad_top;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
            const std::size_t out_row = ((b * g.out_ch + oc) * g.out_h + oh) * g.out_w;
            const std::size_t in_row = ((b * g.in_ch + ic) * g.h + static_cast<std::size_t>(ih)) * g.w;
            for (std::size_t j = 0; j < g.kw; ++j) {
              const auto off = static_cast<std::ptrdiff_t>(j * g.dw) - g.pad_left;
              const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
              const std::ptrdiff_t hi =
                  std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.out_w),
                                           static_cast<std::ptrdiff_t>(g.w) - off);
              if (lo >= hi) continue;
              const std::size_t widx = ((oc * g.in_per_group + icg) * g.kh + i) * g.kw + j;
              fn(out_row, in_row, widx, off, lo, hi);
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(Tape<T>* tape, const Var<T>& input, const Var<T>& kernel, const ConvOptions& options) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), options);
  Tensor<T> out(Shape{g.batch, g.out_ch, g.out_h, g.out_w});
  {
    T* yv = out.raw();
    const T* xv = input.value().raw();
    const T* kv = kernel.value().raw();
    for_each_conv_row(g, [&](std::size_t orow, std::size_t irow, std::size_t widx, std::ptrdiff_t off,
                             std::ptrdiff_t lo, std::ptrdiff_t hi) {
      const T wv = kv[widx];
      T* dst = yv + orow;
      const T* src = xv + irow + off;
      for (std::ptrdiff_t t = lo; t < hi; ++t) dst[t] += wv * src[t];
    });
  }
  const bool tracked = tracking(tape, {&input, &kernel});
  Var<T> y = make_output(std::move(out), tracked);
  if (tracked) {
    tape->record("conv2d", y, [input, kernel, y, g]() mutable {
      const T* gy = y.grad().data();
      const T* xv = input.value().raw();
      const T* kv = kernel.value().raw();
      T* gx = input.requires_grad() ? input.grad().data() : nullptr;
      T* gk = kernel.requires_grad() ? kernel.grad().data() : nullptr;
      for_each_conv_row(g, [&](std::size_t orow, std::size_t irow, std::size_t widx, std::ptrdiff_t off,
                               std::ptrdiff_t lo, std::ptrdiff_t hi) {
        const T* dy = gy + orow;
        if (gx != nullptr) {
          const T wv = kv[widx];
          T* dst = gx + irow + off;
          for (std::ptrdiff_t t = lo; t < hi; ++t) dst[t] += wv * dy[t];
        }
        if (gk != nullptr) {
          const T* src = xv + irow + off;
          gk[widx] += dot(dy + lo, src + lo, hi - lo);
        }
      });
    });
  }
  return y;
}

template <typename T>
Var<T> pool_last_axis(Tape<T>* tape, const Var<T>& input, std::size_t p, PoolMode mode) {
  if (p < 1) throw std::invalid_argument("pool: window width must be at least 1");
  const Shape& xs = input.shape();
  const std::size_t w = xs.back();
  require(w >= p, "pool: window " + std::to_string(p) + " wider than last axis of " + shape_str(xs));
  const std::size_t ow = w / p;
  const std::size_t rows = input.size() / w;
  Shape ys = xs;
  ys.back() = ow;
  Tensor<T> out(ys);
  std::vector<std::size_t> argmax;
  const T* xv = input.value().raw();
  T* yv = out.raw();
  if (mode == PoolMode::Max) argmax.resize(out.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < ow; ++k) {
      const T* win = xv + r * w + k * p;
      if (mode == PoolMode::Average) {
        T acc{};
        for (std::size_t i = 0; i < p; ++i) acc += win[i];
        yv[r * ow + k] = acc / static_cast<T>(p);
      } else {
        std::size_t best = 0;
        for (std::size_t i = 1; i < p; ++i) {
          if (win[i] > win[best]) best = i;
        }
        yv[r * ow + k] = win[best];
        argmax[r * ow + k] = r * w + k * p + best;
      }
    }
  }
  const bool tracked = tracking(tape, {&input});
  Var<T> y = make_output(std::move(out), tracked);
  if (tracked) {
    tape->record("pool", y, [input, y, p, w, ow, rows, mode, argmax = std::move(argmax)]() mutable {
      const auto gy = y.grad();
      auto gx = input.grad();
      if (mode == PoolMode::Max) {
        for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax[i]] += gy[i];
        return;
      }
      const T inv = T{1} / static_cast<T>(p);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < ow; ++k) {
          const T g = gy[r * ow + k] * inv;
          for (std::size_t i = 0; i < p; ++i) gx[r * w + k * p + i] += g;
        }
      }
    });
  }
  return y;
}

template <typename T>
Var<T> batch_norm(Tape<T>* tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, const BatchNormOptions& options,
                  Mode mode) {
  const Shape& xs = x.shape();
  require(xs.size() >= 2, "batch_norm: input needs a channel axis, got " + shape_str(xs));
  const std::size_t channels = xs[1];
  const Shape cshape{channels};
  require(gamma.shape() == cshape && beta.shape() == cshape && running_mean.shape() == cshape &&
              running_var.shape() == cshape,
          "batch_norm: parameter shape mismatch for input " + shape_str(xs));
  if (!(options.epsilon > 0)) throw std::invalid_argument("batch_norm: epsilon must be positive");
  const std::size_t batch = xs[0];
  const std::size_t inner = x.size() / (batch * channels);
  const double count = static_cast<double>(batch * inner);

  std::vector<T> mean(channels);
  std::vector<T> inv_std(channels);
  const T* xv = x.value().raw();
  if (mode == Mode::Train) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* row = xv + (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += row[i];
      }
      const double m = s / count;
      double v = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* row = xv + (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) v += (row[i] - m) * (row[i] - m);
      }
      v /= count;
      mean[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(v + options.epsilon));
      running_mean[c] = static_cast<T>(options.momentum * running_mean[c] + (1.0 - options.momentum) * m);
      running_var[c] = static_cast<T>(options.momentum * running_var[c] + (1.0 - options.momentum) * v);
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + options.epsilon));
    }
  }

  Tensor<T> xhat(xs);
  Tensor<T> out(xs);
  const T* gv = gamma.value().raw();
  const T* bv = beta.value().raw();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const T h = (xv[base + i] - mean[c]) * inv_std[c];
        xhat[base + i] = h;
        out[base + i] = gv[c] * h + bv[c];
      }
    }
  }
  const bool tracked = tracking(tape, {&x, &gamma, &beta});
  Var<T> y = make_output(std::move(out), tracked);
  if (tracked) {
    tape->record("batch_norm", y,
                 [x, gamma, beta, y, xhat = std::move(xhat), inv_std = std::move(inv_std), batch, channels,
                  inner, count, mode]() mutable {
                   const auto gy = y.grad();
                   const T* gv = gamma.value().raw();
                   std::vector<double> sum_dy(channels, 0.0);
                   std::vector<double> sum_dy_xhat(channels, 0.0);
                   for (std::size_t b = 0; b < batch; ++b) {
                     for (std::size_t c = 0; c < channels; ++c) {
                       const std::size_t base = (b * channels + c) * inner;
                       for (std::size_t i = 0; i < inner; ++i) {
                         sum_dy[c] += gy[base + i];
                         sum_dy_xhat[c] += gy[base + i] * xhat[base + i];
                       }
                     }
                   }
                   if (gamma.requires_grad()) {
                     auto g = gamma.grad();
                     for (std::size_t c = 0; c < channels; ++c) g[c] += static_cast<T>(sum_dy_xhat[c]);
                   }
                   if (beta.requires_grad()) {
                     auto g = beta.grad();
                     for (std::size_t c = 0; c < channels; ++c) g[c] += static_cast<T>(sum_dy[c]);
                   }
                   if (!x.requires_grad()) return;
                   auto gx = x.grad();
                   for (std::size_t b = 0; b < batch; ++b) {
                     for (std::size_t c = 0; c < channels; ++c) {
                       const std::size_t base = (b * channels + c) * inner;
                       const T k = gv[c] * inv_std[c];
                       if (mode == Mode::Infer) {
                         for (std::size_t i = 0; i < inner; ++i) gx[base + i] += k * gy[base + i];
                         continue;
                       }
                       const T mdy = static_cast<T>(sum_dy[c] / count);
                       const T mdyx = static_cast<T>(sum_dy_xhat[c] / count);
                       for (std::size_t i = 0; i < inner; ++i) {
                         gx[base + i] += k * (gy[base + i] - mdy - xhat[base + i] * mdyx);
                       }
                     }
                   }
                 });
  }
  return y;
}

template <typename T>
Var<T> elu(Tape<T>* tape, const Var<T>& x) {
  return unary(
      tape, x, "elu", [](T v) { return v >= T{0} ? v : std::expm1(v); },
      [](T xv, T yv) { return xv >= T{0} ? T{1} : yv + T{1}; });
}

template <typename T>
Var<T> relu(Tape<T>* tape, const Var<T>& x) {
  return unary(
      tape, x, "relu", [](T v) { return v > T{0} ? v : T{0}; },
      [](T xv, T) { return xv > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> sigmoid(Tape<T>* tape, const Var<T>& x) {
  return unary(
      tape, x, "sigmoid",
      [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T yv) { return yv * (T{1} - yv); });
}

template <typename T>
Var<T> softmax(Tape<T>* tape, const Var<T>& logits) {
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.size() / k;
  Tensor<T> out(logits.shape());
  const T* xv = logits.value().raw();
  T* yv = out.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv + r * k;
    T* o = yv + r * k;
    const T mx = *std::max_element(in, in + k);
    T total{};
    for (std::size_t i = 0; i < k; ++i) {
      o[i] = std::exp(in[i] - mx);
      total += o[i];
    }
    for (std::size_t i = 0; i < k; ++i) o[i] /= total;
  }
  const bool tracked = tracking(tape, {&logits});
  Var<T> y = make_output(std::move(out), tracked);
  if (tracked) {
    tape->record("softmax", y, [logits, y, k, rows]() mutable {
      const auto gy = y.grad();
      const T* yv = y.value().raw();
      auto gx = logits.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        T dot{};
        for (std::size_t i = 0; i < k; ++i) dot += gy[r * k + i] * yv[r * k + i];
        for (std::size_t i = 0; i < k; ++i) gx[r * k + i] += yv[r * k + i] * (gy[r * k + i] - dot);
      }
    });
  }
  return y;
}

template <typename T>
Var<T> dropout(Tape<T>* tape, const Var<T>& x, double rate, Mode mode, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (mode == Mode::Infer || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(x.shape());
  for (auto& m : mask.data()) m = unit_uniform(rng) < rate ? T{0} : keep_scale;
  return mul(tape, x, Var<T>(std::move(mask)));
}

template <typename T>
Var<T> linear(Tape<T>* tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[1],
          "linear: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
  const std::size_t batch = xs[0];
  const std::size_t in = xs[1];
  const std::size_t outn = ws[0];
  if (bias.defined()) {
    require(bias.shape() == Shape{outn}, "linear: bias " + shape_str(bias.shape()) + " for weight " +
                                             shape_str(ws));
  }
  Tensor<T> out(Shape{batch, outn});
  const T* xv = x.value().raw();
  const T* wv = weight.value().raw();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < outn; ++o) {
      const T b0 = bias.defined() ? bias.value()[o] : T{};
      out[b * outn + o] = b0 + dot(xv + b * in, wv + o * in, static_cast<std::ptrdiff_t>(in));
    }
  }
  const bool tracked = tracking(tape, {&x, &weight, &bias});
  Var<T> y = make_output(std::move(out), tracked);
  if (tracked) {
    tape->record("linear", y, [x, weight, bias, y, batch, in, outn]() mutable {
      const T* gy = y.grad().data();
      const T* xv = x.value().raw();
      const T* wv = weight.value().raw();
      T* gx = x.requires_grad() ? x.grad().data() : nullptr;
      T* gw = weight.requires_grad() ? weight.grad().data() : nullptr;
      T* gb = bias.requires_grad() ? bias.grad().data() : nullptr;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < outn; ++o) {
          const T g = gy[b * outn + o];
          if (gb != nullptr) gb[o] += g;
          if (gx != nullptr) {
            T* dst = gx + b * in;
            const T* wr = wv + o * in;
            for (std::size_t i = 0; i < in; ++i) dst[i] += g * wr[i];
          }
          if (gw != nullptr) {
            T* dst = gw + o * in;
            const T* xr = xv + b * in;
            for (std::size_t i = 0; i < in; ++i) dst[i] += g * xr[i];
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Var<T> cross_entropy(Tape<T>* tape, const Var<T>& probs, std::span<const std::size_t> labels) {
  const Shape& ps = probs.shape();
  require(ps.size() == 2 && ps[0] == labels.size(),
          "cross_entropy: probabilities " + shape_str(ps) + " for " + std::to_string(labels.size()) +
              " labels");
  const std::size_t batch = ps[0];
  const std::size_t k = ps[1];
  constexpr double kFloor = 1e-12;
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  double total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (lab[b] >= k) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(lab[b]) + " out of range for " +
                              std::to_string(k) + " classes");
    }
    total -= std::log(std::max(static_cast<double>(probs.value()[b * k + lab[b]]), kFloor));
  }
  const bool tracked = tracking(tape, {&probs});
  Var<T> y = make_output(Tensor<T>(Shape{1}, std::vector<T>{static_cast<T>(total / batch)}), tracked);
  if (tracked) {
    tape->record("cross_entropy", y, [probs, y, lab = std::move(lab), batch, k]() mutable {
      const T gy = y.grad()[0];
      auto gp = probs.grad();
      for (std::size_t b = 0; b < batch; ++b) {
        const T p = probs.value()[b * k + lab[b]];
        if (static_cast<double>(p) > kFloor) gp[b * k + lab[b]] -= gy / (static_cast<T>(batch) * p);
      }
    });
  }
  return y;
}

#define DBNET_INSTANTIATE_OPS(T)                                                                          \
  template Var<T> add(Tape<T>*, const Var<T>&, const Var<T>&);                                            \
  template Var<T> mul(Tape<T>*, const Var<T>&, const Var<T>&);                                            \
  template Var<T> broadcast_mul(Tape<T>*, const Var<T>&, const Var<T>&);                                  \
  template Var<T> scale(Tape<T>*, const Var<T>&, T);                                                      \
  template Var<T> sum(Tape<T>*, const Var<T>&);                                                           \
  template Var<T> mean_axis(Tape<T>*, const Var<T>&, std::size_t);                                        \
  template Var<T> reshape(Tape<T>*, const Var<T>&, Shape);                                                \
  template Var<T> permute(Tape<T>*, const Var<T>&, const std::vector<std::size_t>&);                      \
  template Var<T> slice(Tape<T>*, const Var<T>&, std::size_t, std::size_t, std::size_t);                  \
  template Var<T> concat(Tape<T>*, const std::vector<Var<T>>&, std::size_t);                              \
  template Var<T> conv2d(Tape<T>*, const Var<T>&, const Var<T>&, const ConvOptions&);                     \
  template Var<T> pool_last_axis(Tape<T>*, const Var<T>&, std::size_t, PoolMode);                         \
  template Var<T> batch_norm(Tape<T>*, const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&,           \
                             Tensor<T>&, const BatchNormOptions&, Mode);                                  \
  template Var<T> elu(Tape<T>*, const Var<T>&);                                                           \
  template Var<T> relu(Tape<T>*, const Var<T>&);                                                          \
  template Var<T> sigmoid(Tape<T>*, const Var<T>&);                                                       \
  template Var<T> softmax(Tape<T>*, const Var<T>&);                                                       \
  template Var<T> dropout(Tape<T>*, const Var<T>&, double, Mode, std::mt19937_64&);                       \
  template Var<T> linear(Tape<T>*, const Var<T>&, const Var<T>&, const Var<T>&);                          \
  template Var<T> cross_entropy(Tape<T>*, const Var<T>&, std::span<const std::size_t>);

DBNET_INSTANTIATE_OPS(float)
DBNET_INSTANTIATE_OPS(double)

#undef DBNET_INSTANTIATE_OPS

}  // namespace dbnet::ops
