#include "aacv/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace aacv {

namespace {
std::atomic<Execution> current_execution{
#ifdef _OPENMP
    Execution::Parallel
#else
    Execution::Serial
#endif
};

bool is_parallel() { return current_execution.load() == Execution::Parallel; }

// Decomposes a shape around `axis` into (outer, len, inner) extents.
struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

void set_execution(Execution e) { current_execution.store(e); }
Execution execution() { return current_execution.load(); }

bool parallel_available() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

SamePadding same_padding(std::size_t in, std::size_t kernel, std::size_t stride) {
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + kernel;
  const std::size_t total = needed > in ? needed - in : 0;
  return {out, total / 2};
}

template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
  return is_parallel() ? parallel::batched_matmul(a, b, ta, tb)
                       : serial::batched_matmul(a, b, ta, tb);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride) {
  return is_parallel() ? parallel::conv2d(x, w, stride) : serial::conv2d(x, w, stride);
}

template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& dy, const Tensor<T>& w, const Shape& x_shape,
                            std::size_t stride) {
  return is_parallel() ? parallel::conv2d_grad_input(dy, w, x_shape, stride)
                       : serial::conv2d_grad_input(dy, w, x_shape, stride);
}

template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& x, const Tensor<T>& dy, const Shape& w_shape,
                             std::size_t stride) {
  return is_parallel() ? parallel::conv2d_grad_weight(x, dy, w_shape, stride)
                       : serial::conv2d_grad_weight(x, dy, w_shape, stride);
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expected matrices, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  return batched_matmul(a, b);
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("softmax_rows: scalar input");
  const std::size_t n = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / n;
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.raw() + r * n;
    T* yr = y.raw() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(xr[j])) throw NumericError("softmax_rows: NaN input");
      mx = std::max(mx, xr[j]);
    }
    T sum{0};
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= sum;
  }
  return y;
}

template <typename T>
Tensor<T> softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  const std::size_t n = y.dim(y.rank() - 1);
  const std::size_t rows = y.size() / n;
  Tensor<T> dx(y.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* yr = y.raw() + r * n;
    const T* gr = dy.raw() + r * n;
    T dot{0};
    for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
    T* dr = dx.raw() + r * n;
    for (std::size_t j = 0; j < n; ++j) dr[j] = yr[j] * (gr[j] - dot);
  }
  return dx;
}

namespace {

// Visits each (output cell, valid input cell) pair of the 3x3/2 pooling
// window together with the window's valid-cell count.
template <typename F>
void for_pool_windows(const Dims4& in, F&& f) {
  const auto ph = same_padding(in.h, 3, 2);
  const auto pw = same_padding(in.w, 3, 2);
  for (std::size_t b = 0; b < in.b; ++b) {
    for (std::size_t oy = 0; oy < ph.out; ++oy) {
      for (std::size_t ox = 0; ox < pw.out; ++ox) {
        const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * 2) - static_cast<std::ptrdiff_t>(ph.before);
        const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * 2) - static_cast<std::ptrdiff_t>(pw.before);
        const std::size_t ylo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(y0, 0));
        const std::size_t yhi = static_cast<std::size_t>(std::min<std::ptrdiff_t>(y0 + 3, static_cast<std::ptrdiff_t>(in.h)));
        const std::size_t xlo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(x0, 0));
        const std::size_t xhi = static_cast<std::size_t>(std::min<std::ptrdiff_t>(x0 + 3, static_cast<std::ptrdiff_t>(in.w)));
        const std::size_t count = (yhi - ylo) * (xhi - xlo);
        const std::size_t out_idx = (b * ph.out + oy) * pw.out + ox;
        for (std::size_t y = ylo; y < yhi; ++y) {
          for (std::size_t x = xlo; x < xhi; ++x) {
            f(out_idx, (b * in.h + y) * in.w + x, count);
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> avg_pool_3x3_s2(const Tensor<T>& x) {
  const auto d = dims4(x, "avg_pool_3x3_s2");
  Tensor<T> y(Shape{d.b, (d.h + 1) / 2, (d.w + 1) / 2, d.c});
  for_pool_windows(d, [&](std::size_t o, std::size_t i, std::size_t count) {
    const T inv = T{1} / static_cast<T>(count);
    for (std::size_t c = 0; c < d.c; ++c) y[o * d.c + c] += x[i * d.c + c] * inv;
  });
  return y;
}

template <typename T>
Tensor<T> avg_pool_3x3_s2_backward(const Tensor<T>& dy, const Shape& x_shape) {
  Tensor<T> dx(x_shape);
  const auto d = dims4(dx, "avg_pool_3x3_s2_backward");
  for_pool_windows(d, [&](std::size_t o, std::size_t i, std::size_t count) {
    const T inv = T{1} / static_cast<T>(count);
    for (std::size_t c = 0; c < d.c; ++c) dx[i * d.c + c] += dy[o * d.c + c] * inv;
  });
  return dx;
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;  // weight of `hi`
};

Tap bilinear_tap(std::size_t t, std::size_t in, std::size_t out) {
  double s = (static_cast<double>(t) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(in - 1));
  const auto lo = static_cast<std::size_t>(std::floor(s));
  const std::size_t hi = std::min(lo + 1, in - 1);
  return {lo, hi, s - static_cast<double>(lo)};
}

template <typename F>
void for_bilinear_taps(const Dims4& in, std::size_t oh, std::size_t ow, F&& f) {
  for (std::size_t b = 0; b < in.b; ++b) {
    for (std::size_t ty = 0; ty < oh; ++ty) {
      const Tap py = bilinear_tap(ty, in.h, oh);
      for (std::size_t tx = 0; tx < ow; ++tx) {
        const Tap px = bilinear_tap(tx, in.w, ow);
        const std::size_t o = (b * oh + ty) * ow + tx;
        auto src = [&](std::size_t y, std::size_t x) { return (b * in.h + y) * in.w + x; };
        f(o, src(py.lo, px.lo), (1 - py.frac) * (1 - px.frac));
        f(o, src(py.lo, px.hi), (1 - py.frac) * px.frac);
        f(o, src(py.hi, px.lo), py.frac * (1 - px.frac));
        f(o, src(py.hi, px.hi), py.frac * px.frac);
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  const auto d = dims4(x, "bilinear_upsample");
  if (out_h < d.h || out_w < d.w) {
    throw ShapeError("bilinear_upsample: target " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " smaller than input " + to_string(x.shape()));
  }
  Tensor<T> y(Shape{d.b, out_h, out_w, d.c});
  for_bilinear_taps(d, out_h, out_w, [&](std::size_t o, std::size_t i, double wgt) {
    const T tw = static_cast<T>(wgt);
    for (std::size_t c = 0; c < d.c; ++c) y[o * d.c + c] += tw * x[i * d.c + c];
  });
  return y;
}

template <typename T>
Tensor<T> bilinear_upsample_backward(const Tensor<T>& dy, const Shape& x_shape) {
  Tensor<T> dx(x_shape);
  const auto d = dims4(dx, "bilinear_upsample_backward");
  const auto o = dims4(dy, "bilinear_upsample_backward");
  for_bilinear_taps(d, o.h, o.w, [&](std::size_t oi, std::size_t i, double wgt) {
    const T tw = static_cast<T>(wgt);
    for (std::size_t c = 0; c < d.c; ++c) dx[i * d.c + c] += tw * dy[oi * d.c + c];
  });
  return dx;
}

template <typename T>
BatchStats<T> channel_stats(const Tensor<T>& x) {
  const std::size_t c = x.dim(x.rank() - 1);
  const std::size_t n = x.size() / c;
  BatchStats<T> s{std::vector<T>(c, T{0}), std::vector<T>(c, T{0})};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) s.mean[k] += x[i * c + k];
  }
  for (auto& m : s.mean) m /= static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const T d = x[i * c + k] - s.mean[k];
      s.var[k] += d * d;
    }
  }
  for (auto& v : s.var) v /= static_cast<T>(n);
  return s;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                    std::span<const T> mean, std::span<const T> var, T eps) {
  const std::size_t c = x.dim(x.rank() - 1);
  if (gamma.size() != c || beta.size() != c || mean.size() != c || var.size() != c) {
    throw ShapeError("batchnorm: parameter length does not match channel count " + std::to_string(c));
  }
  if (!(eps > T{0})) throw ContractError("batchnorm: eps must be positive");
  std::vector<T> inv(c);
  for (std::size_t k = 0; k < c; ++k) inv[k] = T{1} / std::sqrt(var[k] + eps);
  Tensor<T> y(x.shape());
  const std::size_t n = x.size() / c;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      y[i * c + k] = gamma[k] * (x[i * c + k] - mean[k]) * inv[k] + beta[k];
    }
  }
  return y;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const auto d = dims4(x, "global_avg_pool");
  Tensor<T> y(Shape{d.b, d.c});
  const std::size_t hw = d.h * d.w;
  for (std::size_t b = 0; b < d.b; ++b) {
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t c = 0; c < d.c; ++c) y[b * d.c + c] += x[(b * hw + p) * d.c + c];
    }
    for (std::size_t c = 0; c < d.c; ++c) y[b * d.c + c] /= static_cast<T>(hw);
  }
  return y;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  Tensor<T> y = matmul(x, w);
  const std::size_t out = w.dim(1);
  if (bias.size() != out) throw ShapeError("dense: bias length mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias[i % out];
  return y;
}

template <typename T>
T cross_entropy_with_logits(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t k = logits.dim(1);
  T total{0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw InputError("cross_entropy: label " + std::to_string(labels[i]) +
                       " outside [0, " + std::to_string(k) + ")");
    }
    const T* row = logits.raw() + i * k;
    const T mx = *std::max_element(row, row + k);
    T s{0};
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    total += std::log(s) + mx - row[labels[i]];
  }
  return total / static_cast<T>(labels.size());
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch");
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r), src_stride(r);
  std::size_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_strides[i] = s;
    s *= x.dim(i);
  }
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.dim(perm[i]);
    src_stride[i] = in_strides[perm[i]];
  }
  Tensor<T> y(out_shape);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < y.size(); ++o) {
    y[o] = x[src];
    for (std::size_t a = r; a-- > 0;) {
      ++idx[a];
      src += src_stride[a];
      if (idx[a] < out_shape[a]) break;
      src -= src_stride[a] * idx[a];
      idx[a] = 0;
    }
  }
  return y;
}

template <typename T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out_shape = parts.front()->shape();
  std::size_t total = 0;
  for (const auto* p : parts) {
    Shape s = p->shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat: rank mismatch");
    s[axis] = out_shape[axis];
    if (s != out_shape) {
      throw ShapeError("concat: incompatible shapes " + to_string(parts.front()->shape()) +
                       " and " + to_string(p->shape()));
    }
    total += p->dim(axis);
  }
  out_shape[axis] = total;
  Tensor<T> y(out_shape);
  const auto o = split_at(out_shape, axis);
  std::size_t offset = 0;
  for (const auto* p : parts) {
    const std::size_t len = p->dim(axis);
    for (std::size_t i = 0; i < o.outer; ++i) {
      std::copy_n(p->raw() + i * len * o.inner, len * o.inner,
                  y.raw() + (i * o.len + offset) * o.inner);
    }
    offset += len;
  }
  return y;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t len) {
  const auto s = split_at(x.shape(), axis);
  if (begin + len > s.len) {
    throw ShapeError("slice: [" + std::to_string(begin) + ", " + std::to_string(begin + len) +
                     ") exceeds axis length " + std::to_string(s.len));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  Tensor<T> y(out_shape);
  for (std::size_t i = 0; i < s.outer; ++i) {
    std::copy_n(x.raw() + (i * s.len + begin) * s.inner, len * s.inner,
                y.raw() + i * len * s.inner);
  }
  return y;
}

template <typename T>
Tensor<T> pad_trailing(const Tensor<T>& x, std::size_t axis, std::size_t new_len) {
  const auto s = split_at(x.shape(), axis);
  if (new_len < s.len) throw ShapeError("pad_trailing: target shorter than axis");
  Shape out_shape = x.shape();
  out_shape[axis] = new_len;
  Tensor<T> y(out_shape);
  for (std::size_t i = 0; i < s.outer; ++i) {
    std::copy_n(x.raw() + i * s.len * s.inner, s.len * s.inner, y.raw() + i * new_len * s.inner);
  }
  return y;
}

template <typename T>
Tensor<T> expand_tile(const Tensor<T>& x, std::size_t axis, std::size_t reps) {
  if (axis > x.rank()) throw ShapeError("expand_tile: axis out of range");
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), reps);
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  const std::size_t inner = x.size() / outer;
  Tensor<T> y(out_shape);
  for (std::size_t i = 0; i < outer; ++i) {
    for (std::size_t r = 0; r < reps; ++r) {
      std::copy_n(x.raw() + i * inner, inner, y.raw() + (i * reps + r) * inner);
    }
  }
  return y;
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> y(out_shape);
  for (std::size_t i = 0; i < s.outer; ++i) {
    for (std::size_t r = 0; r < s.len; ++r) {
      const T* src = x.raw() + (i * s.len + r) * s.inner;
      T* dst = y.raw() + i * s.inner;
      for (std::size_t k = 0; k < s.inner; ++k) dst[k] += src[k];
    }
  }
  return y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * s;
  return y;
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& x) {
  if (acc.size() != x.size()) {
    throw ShapeError("add_into: sizes " + to_string(acc.shape()) + " and " + to_string(x.shape()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) acc[i] += x[i];
}

#define AACV_INSTANTIATE(T)                                                                  \
  template Tensor<T> batched_matmul(const Tensor<T>&, const Tensor<T>&, bool, bool);         \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t);                \
  template Tensor<T> conv2d_grad_input(const Tensor<T>&, const Tensor<T>&, const Shape&,     \
                                       std::size_t);                                         \
  template Tensor<T> conv2d_grad_weight(const Tensor<T>&, const Tensor<T>&, const Shape&,    \
                                        std::size_t);                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                         \
  template Tensor<T> softmax_rows_backward(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> avg_pool_3x3_s2(const Tensor<T>&);                                      \
  template Tensor<T> avg_pool_3x3_s2_backward(const Tensor<T>&, const Shape&);               \
  template Tensor<T> bilinear_upsample(const Tensor<T>&, std::size_t, std::size_t);          \
  template Tensor<T> bilinear_upsample_backward(const Tensor<T>&, const Shape&);             \
  template BatchStats<T> channel_stats(const Tensor<T>&);                                    \
  template Tensor<T> batchnorm(const Tensor<T>&, std::span<const T>, std::span<const T>,     \
                               std::span<const T>, std::span<const T>, T);                   \
  template Tensor<T> relu(const Tensor<T>&);                                                 \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                      \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template T cross_entropy_with_logits(const Tensor<T>&, std::span<const int>);              \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);             \
  template Tensor<T> concat(const std::vector<const Tensor<T>*>&, std::size_t);              \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);         \
  template Tensor<T> pad_trailing(const Tensor<T>&, std::size_t, std::size_t);               \
  template Tensor<T> expand_tile(const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> sum_axis(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template void add_into(Tensor<T>&, const Tensor<T>&);
AACV_INSTANTIATE(float)
AACV_INSTANTIATE(double)
#undef AACV_INSTANTIATE

}  // namespace aacv
