#pragma once

// Per-row bodies shared by the serial and OpenMP kernel drivers. Each body
// computes a disjoint slice of the output with a fixed reduction order, so
// the drivers differ only in how rows are scheduled.

#include <algorithm>

#include "aacv/kernels.hpp"

namespace aacv::detail {

struct MatmulGeometry {
  std::size_t batch, m, n, p;
  bool ta, tb;
};

template <typename T>
MatmulGeometry matmul_geometry(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
  if (a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank()) {
    throw ShapeError("batched_matmul: operands " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " must have equal rank >= 2");
  }
  const std::size_t r = a.rank();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError("batched_matmul: batch dims differ between " + to_string(a.shape()) +
                       " and " + to_string(b.shape()));
    }
  }
  const std::size_t m = ta ? a.dim(r - 1) : a.dim(r - 2);
  const std::size_t n = ta ? a.dim(r - 2) : a.dim(r - 1);
  const std::size_t nb = tb ? b.dim(r - 1) : b.dim(r - 2);
  const std::size_t p = tb ? b.dim(r - 2) : b.dim(r - 1);
  if (n != nb) {
    throw ShapeError("matmul: inner dimensions disagree: " + to_string(a.shape()) +
                     (ta ? "^T" : "") + " x " + to_string(b.shape()) + (tb ? "^T" : ""));
  }
  return {a.size() / (a.dim(r - 1) * a.dim(r - 2)), m, n, p, ta, tb};
}

template <typename T>
Shape matmul_out_shape(const Tensor<T>& a, const MatmulGeometry& g) {
  Shape s(a.shape().begin(), a.shape().end() - 2);
  s.push_back(g.m);
  s.push_back(g.p);
  return s;
}

/// Row `row` (flattened over batch and m) of C = op(A) op(B).
template <typename T>
void matmul_row(const MatmulGeometry& g, const T* a, const T* b, T* c, std::size_t row) {
  const std::size_t bi = row / g.m;
  const std::size_t i = row % g.m;
  const T* ab = a + bi * g.m * g.n;
  const T* bb = b + bi * g.n * g.p;
  T* cr = c + row * g.p;
  std::fill(cr, cr + g.p, T{0});
  if (g.tb) {
    for (std::size_t j = 0; j < g.p; ++j) {
      T acc{0};
      const T* brow = bb + j * g.n;
      for (std::size_t k = 0; k < g.n; ++k) {
        const T aik = g.ta ? ab[k * g.m + i] : ab[i * g.n + k];
        acc += aik * brow[k];
      }
      cr[j] = acc;
    }
    return;
  }
  for (std::size_t k = 0; k < g.n; ++k) {
    const T aik = g.ta ? ab[k * g.m + i] : ab[i * g.n + k];
    const T* brow = bb + k * g.p;
    for (std::size_t j = 0; j < g.p; ++j) cr[j] += aik * brow[j];
  }
}

struct ConvGeometry {
  std::size_t b, h, w, cin;
  std::size_t k, cout, stride;
  SamePadding ph, pw;
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& wshape, std::size_t stride) {
  if (x.size() != 4 || wshape.size() != 4) {
    throw ShapeError("conv2d: expected rank-4 input and kernel, got " + to_string(x) +
                     " and " + to_string(wshape));
  }
  if (wshape[0] != wshape[1]) throw ShapeError("conv2d: kernel must be square");
  if (wshape[2] != x[3]) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(wshape[2]) +
                     " input channels, input has " + std::to_string(x[3]));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  return {x[0],      x[1],     x[2],
          x[3],      wshape[0], wshape[3],
          stride,    same_padding(x[1], wshape[0], stride),
          same_padding(x[2], wshape[0], stride)};
}

/// Output row (b, oy): all ox and all output channels.
template <typename T>
void conv_forward_row(const ConvGeometry& g, const T* x, const T* w, T* y, std::size_t row) {
  const std::size_t bi = row / g.ph.out;
  const std::size_t oy = row % g.ph.out;
  for (std::size_t ox = 0; ox < g.pw.out; ++ox) {
    T* acc = y + ((bi * g.ph.out + oy) * g.pw.out + ox) * g.cout;
    std::fill(acc, acc + g.cout, T{0});
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                static_cast<std::ptrdiff_t>(g.ph.before);
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                  static_cast<std::ptrdiff_t>(g.pw.before);
        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
        const T* xp = x + ((bi * g.h + iy) * g.w + ix) * g.cin;
        const T* wp = w + (ky * g.k + kx) * g.cin * g.cout;
        for (std::size_t ci = 0; ci < g.cin; ++ci) {
          const T xv = xp[ci];
          const T* wr = wp + ci * g.cout;
          for (std::size_t co = 0; co < g.cout; ++co) acc[co] += xv * wr[co];
        }
      }
    }
  }
}

/// Input-gradient row (b, y).
template <typename T>
void conv_grad_input_row(const ConvGeometry& g, const T* dy, const T* w, T* dx,
                         std::size_t row) {
  const std::size_t bi = row / g.h;
  const std::size_t y = row % g.h;
  for (std::size_t x = 0; x < g.w; ++x) {
    T* acc = dx + ((bi * g.h + y) * g.w + x) * g.cin;
    std::fill(acc, acc + g.cin, T{0});
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      const std::ptrdiff_t ny = static_cast<std::ptrdiff_t>(y + g.ph.before) -
                                static_cast<std::ptrdiff_t>(ky);
      if (ny < 0 || ny % static_cast<std::ptrdiff_t>(g.stride) != 0) continue;
      const std::size_t oy = static_cast<std::size_t>(ny) / g.stride;
      if (oy >= g.ph.out) continue;
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const std::ptrdiff_t nx = static_cast<std::ptrdiff_t>(x + g.pw.before) -
                                  static_cast<std::ptrdiff_t>(kx);
        if (nx < 0 || nx % static_cast<std::ptrdiff_t>(g.stride) != 0) continue;
        const std::size_t ox = static_cast<std::size_t>(nx) / g.stride;
        if (ox >= g.pw.out) continue;
        const T* dyp = dy + ((bi * g.ph.out + oy) * g.pw.out + ox) * g.cout;
        const T* wp = w + (ky * g.k + kx) * g.cin * g.cout;
        for (std::size_t ci = 0; ci < g.cin; ++ci) {
          const T* wr = wp + ci * g.cout;
          T s{0};
          for (std::size_t co = 0; co < g.cout; ++co) s += dyp[co] * wr[co];
          acc[ci] += s;
        }
      }
    }
  }
}

/// Weight-gradient row (ky, kx, ci): all output channels.
template <typename T>
void conv_grad_weight_row(const ConvGeometry& g, const T* x, const T* dy, T* dw,
                          std::size_t row) {
  const std::size_t ci = row % g.cin;
  const std::size_t kx = (row / g.cin) % g.k;
  const std::size_t ky = row / (g.cin * g.k);
  T* acc = dw + row * g.cout;
  std::fill(acc, acc + g.cout, T{0});
  for (std::size_t bi = 0; bi < g.b; ++bi) {
    for (std::size_t oy = 0; oy < g.ph.out; ++oy) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                static_cast<std::ptrdiff_t>(g.ph.before);
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
      for (std::size_t ox = 0; ox < g.pw.out; ++ox) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                  static_cast<std::ptrdiff_t>(g.pw.before);
        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
        const T xv = x[((bi * g.h + iy) * g.w + ix) * g.cin + ci];
        const T* dyp = dy + ((bi * g.ph.out + oy) * g.pw.out + ox) * g.cout;
        for (std::size_t co = 0; co < g.cout; ++co) acc[co] += xv * dyp[co];
      }
    }
  }
}

}  // namespace aacv::detail
