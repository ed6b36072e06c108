#pragma once

// Loop-level reference implementations used only by the tests. They share
// no code with the library kernels beyond the Tensor container.

#include <cmath>
#include <random>
#include <vector>

#include "aacv/tensor.hpp"

namespace oracle {

using aacv::Shape;
using aacv::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  Tensor<T> c(Shape{m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      T s{0};
      for (std::size_t k = 0; k < n; ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  }
  return c;
}

/// 'same' zero-padded cross-correlation, padding split with the extra cell
/// at the trailing edge.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride) {
  const long B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const long K = w.dim(0), CO = w.dim(3), S = static_cast<long>(stride);
  const long OH = (H + S - 1) / S, OW = (W + S - 1) / S;
  const long pad_h = std::max(0L, (OH - 1) * S + K - H) / 2;
  const long pad_w = std::max(0L, (OW - 1) * S + K - W) / 2;
  Tensor<T> y(Shape{static_cast<std::size_t>(B), static_cast<std::size_t>(OH),
                    static_cast<std::size_t>(OW), static_cast<std::size_t>(CO)});
  for (long b = 0; b < B; ++b)
    for (long oy = 0; oy < OH; ++oy)
      for (long ox = 0; ox < OW; ++ox)
        for (long co = 0; co < CO; ++co) {
          T s{0};
          for (long ky = 0; ky < K; ++ky)
            for (long kx = 0; kx < K; ++kx)
              for (long ci = 0; ci < C; ++ci) {
                const long iy = oy * S + ky - pad_h, ix = ox * S + kx - pad_w;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                s += x.at(b, iy, ix, ci) * w.at(ky, kx, ci, co);
              }
          y.at(b, oy, ox, co) = s;
        }
  return y;
}

/// Mean of the valid cells in each 3x3 window at stride 2.
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x) {
  const long B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const long OH = (H + 1) / 2, OW = (W + 1) / 2;
  const long pad_h = std::max(0L, (OH - 1) * 2 + 3 - H) / 2;
  const long pad_w = std::max(0L, (OW - 1) * 2 + 3 - W) / 2;
  Tensor<T> y(Shape{static_cast<std::size_t>(B), static_cast<std::size_t>(OH),
                    static_cast<std::size_t>(OW), static_cast<std::size_t>(C)});
  for (long b = 0; b < B; ++b)
    for (long oy = 0; oy < OH; ++oy)
      for (long ox = 0; ox < OW; ++ox)
        for (long c = 0; c < C; ++c) {
          double s = 0;
          int n = 0;
          for (long dy = 0; dy < 3; ++dy)
            for (long dx = 0; dx < 3; ++dx) {
              const long iy = oy * 2 + dy - pad_h, ix = ox * 2 + dx - pad_w;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              s += x.at(b, iy, ix, c);
              ++n;
            }
          y.at(b, oy, ox, c) = static_cast<T>(s / n);
        }
  return y;
}

/// out[b,n,i,j] = in[b,n,i,j-i+L-1]
template <typename T>
Tensor<T> rel_to_abs(const Tensor<T>& x) {
  const std::size_t B = x.dim(0), N = x.dim(1), L = x.dim(2);
  Tensor<T> y(Shape{B, N, L, L});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) y.at(b, n, i, j) = x.at(b, n, i, j + L - 1 - i);
  return y;
}

/// Direct multi-head attention from pixels, gathering relative embeddings by
/// offset (no reshapes). Input (B,H,W,F), returns (B,H,W,dv) and optionally
/// the attention weights (B,Nh,HW,HW).
template <typename T>
Tensor<T> attention(const Tensor<T>& x, const Tensor<T>& w_qkv, const Tensor<T>& w_out,
                    std::size_t heads, std::size_t dk, std::size_t dv, const Tensor<T>* rel_h,
                    const Tensor<T>* rel_w, Tensor<T>* weights_out = nullptr) {
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), F = x.dim(3);
  const std::size_t HW = H * W, dkh = dk / heads, dvh = dv / heads;
  const std::size_t D = 2 * dk + dv;
  Tensor<T> out(Shape{B, H, W, dv});
  if (weights_out) *weights_out = Tensor<T>(Shape{B, heads, HW, HW});
  for (std::size_t b = 0; b < B; ++b) {
    // Projections per pixel.
    std::vector<double> proj(HW * D, 0.0);
    for (std::size_t p = 0; p < HW; ++p)
      for (std::size_t o = 0; o < D; ++o) {
        double s = 0;
        for (std::size_t f = 0; f < F; ++f) s += double(x[(b * HW + p) * F + f]) * double(w_qkv[f * D + o]);
        proj[p * D + o] = s;
      }
    std::vector<double> heads_out(HW * dv, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < HW; ++i) {
        std::vector<double> logit(HW);
        const std::size_t iy = i / W, ix = i % W;
        for (std::size_t j = 0; j < HW; ++j) {
          const std::size_t jy = j / W, jx = j % W;
          double s = 0;
          for (std::size_t d = 0; d < dkh; ++d) {
            const double q = proj[i * D + dk + h * dkh + d] / std::sqrt(double(dkh));
            double kk = proj[j * D + h * dkh + d];
            if (rel_h) kk += double(rel_h->at(jy + H - 1 - iy, d));
            if (rel_w) kk += double(rel_w->at(jx + W - 1 - ix, d));
            s += q * kk;
          }
          logit[j] = s;
        }
        double mx = logit[0];
        for (double v : logit) mx = std::max(mx, v);
        double z = 0;
        for (double& v : logit) z += (v = std::exp(v - mx));
        for (std::size_t j = 0; j < HW; ++j) {
          const double a = logit[j] / z;
          if (weights_out) weights_out->at(b, h, i, j) = static_cast<T>(a);
          for (std::size_t d = 0; d < dvh; ++d) heads_out[i * dv + h * dvh + d] += a * proj[j * D + 2 * dk + h * dvh + d];
        }
      }
    }
    for (std::size_t p = 0; p < HW; ++p)
      for (std::size_t o = 0; o < dv; ++o) {
        double s = 0;
        for (std::size_t c = 0; c < dv; ++c) s += heads_out[p * dv + c] * double(w_out[c * dv + o]);
        out[(b * HW + p) * dv + o] = static_cast<T>(s);
      }
  }
  return out;
}

}  // namespace oracle
