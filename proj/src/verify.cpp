#include "aacv/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>

#include "aacv/aaconv.hpp"
#include "aacv/models.hpp"
#include "aacv/relattn.hpp"

namespace aacv::verify {

namespace {

// ------------------------------------------------------- loop references

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    if (std::isnan(d)) return INFINITY;
    m = std::max(m, d);
  }
  return m;
}

// out[b,n,i,j] = in[b,n,i,j-i+L-1]
template <typename T>
Tensor<T> ref_rel_to_abs(const Tensor<T>& x) {
  const std::size_t B = x.dim(0), N = x.dim(1), L = x.dim(2);
  Tensor<T> y(Shape{B, N, L, L});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) y.at(b, n, i, j) = x.at(b, n, i, j + L - 1 - i);
  return y;
}

// Relative logits by direct offset lookup, accumulated in double.
template <typename T>
RelativeLogits<T> ref_relative_logits(const Tensor<T>& q, const RelativeEmbeddings<T>& rel) {
  const std::size_t B = q.dim(0), N = q.dim(1), H = q.dim(2), W = q.dim(3), D = q.dim(4);
  const std::size_t HW = H * W;
  RelativeLogits<T> out{Tensor<T>(Shape{B, N, HW, HW}), Tensor<T>(Shape{B, N, HW, HW})};
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < HW; ++i)
        for (std::size_t j = 0; j < HW; ++j) {
          const std::size_t iy = i / W, ix = i % W, jy = j / W, jx = j % W;
          double sh = 0, sw = 0;
          for (std::size_t d = 0; d < D; ++d) {
            const double qv = q.at(b, n, iy, ix, d);
            sh += qv * rel.height.at(jy + H - 1 - iy, d);
            sw += qv * rel.width.at(jx + W - 1 - ix, d);
          }
          out.height.at(b, n, i, j) = static_cast<T>(sh);
          out.width.at(b, n, i, j) = static_cast<T>(sw);
        }
  return out;
}

// Multi-head attention over pixel pairs with the relative terms added to the
// keys. Projection channels are ordered [keys | queries | values].
template <typename T>
Tensor<T> ref_attention(const Tensor<T>& x, const AttentionSpec& spec, const AttentionWeights<T>& w) {
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), F = x.dim(3);
  const std::size_t HW = H * W, nh = spec.heads, dk = spec.key_depth, dv = spec.value_depth;
  const std::size_t dkh = dk / nh, dvh = dv / nh, D = 2 * dk + dv;
  Tensor<T> out(Shape{B, H, W, dv});
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> proj(HW * D, 0.0);
    for (std::size_t p = 0; p < HW; ++p)
      for (std::size_t o = 0; o < D; ++o) {
        double s = 0;
        for (std::size_t f = 0; f < F; ++f) s += double(x[(b * HW + p) * F + f]) * double(w.qkv[f * D + o]);
        proj[p * D + o] = s;
      }
    std::vector<double> mixed(HW * dv, 0.0), logit(HW);
    for (std::size_t h = 0; h < nh; ++h)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t iy = i / W, ix = i % W;
        for (std::size_t j = 0; j < HW; ++j) {
          const std::size_t jy = j / W, jx = j % W;
          double s = 0;
          for (std::size_t d = 0; d < dkh; ++d) {
            const double q = proj[i * D + dk + h * dkh + d] / std::sqrt(double(dkh));
            double k = proj[j * D + h * dkh + d];
            if (w.rel) k += double(w.rel->height.at(jy + H - 1 - iy, d)) + double(w.rel->width.at(jx + W - 1 - ix, d));
            s += q * k;
          }
          logit[j] = s;
        }
        const double mx = *std::max_element(logit.begin(), logit.end());
        double z = 0;
        for (double& v : logit) z += (v = std::exp(v - mx));
        for (std::size_t j = 0; j < HW; ++j)
          for (std::size_t d = 0; d < dvh; ++d)
            mixed[i * dv + h * dvh + d] += logit[j] / z * proj[j * D + 2 * dk + h * dvh + d];
      }
    for (std::size_t p = 0; p < HW; ++p)
      for (std::size_t o = 0; o < dv; ++o) {
        double s = 0;
        for (std::size_t c = 0; c < dv; ++c) s += mixed[p * dv + c] * double(w.out[c * dv + o]);
        out[(b * HW + p) * dv + o] = static_cast<T>(s);
      }
  }
  return out;
}

template <typename T>
Tensor<T> ref_conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride) {
  const long B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const long K = w.dim(0), CO = w.dim(3), S = static_cast<long>(stride);
  const long OH = (H + S - 1) / S, OW = (W + S - 1) / S;
  const long ph = std::max(0L, (OH - 1) * S + K - H) / 2, pw = std::max(0L, (OW - 1) * S + K - W) / 2;
  Tensor<T> y(Shape{std::size_t(B), std::size_t(OH), std::size_t(OW), std::size_t(CO)});
  for (long b = 0; b < B; ++b)
    for (long oy = 0; oy < OH; ++oy)
      for (long ox = 0; ox < OW; ++ox)
        for (long co = 0; co < CO; ++co) {
          double s = 0;
          for (long ky = 0; ky < K; ++ky)
            for (long kx = 0; kx < K; ++kx) {
              const long iy = oy * S + ky - ph, ix = ox * S + kx - pw;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              for (long ci = 0; ci < C; ++ci) s += double(x.at(b, iy, ix, ci)) * double(w.at(ky, kx, ci, co));
            }
          y.at(b, oy, ox, co) = static_cast<T>(s);
        }
  return y;
}

template <typename T>
Tensor<T> permute_pixels(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t b = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  Tensor<T> y(x.shape());
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t k = 0; k < c; ++k) y[(n * hw + p) * c + k] = x[(n * hw + perm[p]) * c + k];
  return y;
}

AttentionSpec head_spec(std::size_t heads, std::size_t dkh, std::size_t dvh, PositionEncoding enc) {
  return AttentionSpec{heads, heads * dkh, heads * dvh, enc, 1};
}

Property at_most(std::string suite, std::string name, double observed, double tol) {
  return {std::move(suite), std::move(name), observed, tol, false, observed <= tol, {}};
}

Property above(std::string suite, std::string name, double observed, double bound) {
  return {std::move(suite), std::move(name), observed, bound, true, observed > bound, {}};
}

// ----------------------------------------------------------------- oracle

Property oracle_rel_to_abs(std::mt19937_64& rng) {
  double worst = 0;
  for (std::size_t L = 1; L <= 8; ++L) {
    auto x = random_tensor<float>({2, 2, L, 2 * L - 1}, rng);
    worst = std::max(worst, max_abs_diff(rel_to_abs(x), ref_rel_to_abs(x)));
  }
  return at_most("oracle", "rel_to_abs_index_map", worst, 0.0);
}

Property oracle_relative_logits(std::mt19937_64& rng, std::size_t configs) {
  const std::size_t head_choices[] = {1, 2, 4};
  double worst = 0;
  for (std::size_t c = 0; c < configs; ++c) {
    const std::size_t h = pick(rng, 1, 6), w = pick(rng, 1, 6), d = pick(rng, 1, 8);
    const std::size_t nh = head_choices[pick(rng, 0, 2)], b = pick(rng, 1, 2);
    auto q = random_tensor<float>({b, nh, h, w, d}, rng);
    RelativeEmbeddings<float> rel{random_tensor<float>({2 * h - 1, d}, rng),
                                  random_tensor<float>({2 * w - 1, d}, rng)};
    auto fast = relative_logits_2d(q, rel);
    auto ref = ref_relative_logits(q, rel);
    worst = std::max({worst, max_abs_diff(fast.height, ref.height), max_abs_diff(fast.width, ref.width)});
    if (h <= 8 && w <= 8) {
      auto naive = naive_relative_logits(q, rel);
      worst = std::max({worst, max_abs_diff(fast.height, naive.height), max_abs_diff(fast.width, naive.width)});
    }
  }
  return at_most("oracle", "relative_logits_vs_gather", worst, 1e-5);
}

Property oracle_attention(std::mt19937_64& rng, std::size_t configs, PositionEncoding enc,
                          const std::string& name) {
  const std::size_t head_choices[] = {1, 2, 4};
  double worst = 0;
  for (std::size_t c = 0; c < configs; ++c) {
    const std::size_t h = pick(rng, 1, 6), w = pick(rng, 1, 6), f = pick(rng, 1, 6);
    const std::size_t nh = head_choices[pick(rng, 0, 2)];
    auto spec = head_spec(nh, pick(rng, 1, 3), pick(rng, 1, 3), enc);
    auto wts = init_attention_weights<float>(spec, f, h, w, rng);
    auto x = random_tensor<float>({pick(rng, 1, 2), h, w, f}, rng);
    worst = std::max(worst, max_abs_diff(self_attention_2d(x, spec, wts), ref_attention(x, spec, wts)));
  }
  return at_most("oracle", name, worst, 1e-5);
}

Property oracle_conv(std::mt19937_64& rng, std::size_t configs) {
  double worst = 0;
  for (std::size_t c = 0; c < configs; ++c) {
    const std::size_t k = 2 * pick(rng, 0, 2) + 1, stride = pick(rng, 1, 2);
    auto x = random_tensor<float>({pick(rng, 1, 2), pick(rng, 1, 7), pick(rng, 1, 7), pick(rng, 1, 4)}, rng);
    auto w = random_tensor<float>({k, k, x.dim(3), pick(rng, 1, 4)}, rng);
    worst = std::max(worst, max_abs_diff(conv2d(x, w, stride), ref_conv2d(x, w, stride)));
  }
  return at_most("oracle", "conv2d_vs_loop", worst, 1e-5);
}

// ------------------------------------------------------------------- grad

// <v, r> for a fixed random r drawn from its own stream.
Var<double> project(Var<double> v, std::uint64_t seed) {
  std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL);
  const std::size_t n = v.value().size();
  auto r = random_tensor<double>({n, 1}, rng);
  return ad::sum(ad::matmul(ad::reshape(v, {1, n}), v.tape->constant(r)));
}

struct GradErr {
  double rel = 0;
  double coord = 0;
  std::size_t checked = 0, refined = 0, skipped = 0;

  static GradErr of(const GradCheckReport& r) {
    return {r.max_rel_error(), r.max_coord_error(), r.coords_checked(), r.kinks_refined(), r.kinks_skipped()};
  }
  GradErr& merge(const GradErr& o) {
    rel = std::isnan(o.rel) ? INFINITY : std::max(rel, o.rel);
    coord = std::isnan(o.coord) ? INFINITY : std::max(coord, o.coord);
    checked += o.checked;
    refined += o.refined;
    skipped += o.skipped;
    return *this;
  }
};

struct GradCase {
  ParameterStore<double> store;
  std::vector<Parameter<double>*> params;

  Parameter<double>& add(const std::string& name, Tensor<double> value) {
    auto& p = store.add(name, std::move(value));
    params.push_back(&p);
    return p;
  }
  Parameter<double>& add(const std::string& name, Shape shape, std::mt19937_64& rng, double lo = -1.0,
                         double hi = 1.0) {
    return add(name, random_tensor<double>(std::move(shape), rng, lo, hi));
  }
  GradErr check(const std::function<Var<double>(Tape<double>&)>& f, std::uint64_t seed) {
    GradCheckOptions opts;
    opts.seed = seed;
    return GradErr::of(check_gradients(params, f, opts));
  }
};

using GradBuilder = std::function<GradErr(std::uint64_t seed)>;

GradErr grad_matmul(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCase c;
  auto& a = c.add("a", {3, 4}, rng);
  auto& b = c.add("b", {4, 2}, rng);
  return c.check([&](Tape<double>& t) {
    auto m = ad::matmul(t.parameter(a), t.parameter(b));
    auto mt = ad::matmul(t.parameter(b), t.parameter(a), true, true);
    return project(ad::add(ad::scale(m, 0.7), ad::permute(mt, {1, 0})), seed);
  }, seed);
}

GradErr grad_softmax(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCase c;
  auto& a = c.add("a", {3, 5}, rng, -2, 2);
  return c.check([&](Tape<double>& t) { return project(ad::softmax(t.parameter(a)), seed); }, seed);
}

GradErr grad_conv2d(std::uint64_t seed) {
  GradErr worst;
  for (std::size_t stride : {1u, 2u}) {
    std::mt19937_64 rng(seed + stride);
    GradCase c;
    auto& x = c.add("x", {2, 4, 3, 2}, rng);
    auto& w = c.add("w", {3, 3, 2, 3}, rng);
    worst.merge(c.check([&](Tape<double>& t) {
      return project(ad::conv2d(t.parameter(x), t.parameter(w), stride), seed);
    }, seed));
  }
  return worst;
}

GradErr grad_pool_upsample(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCase c;
  auto& x = c.add("x", {1, 5, 4, 2}, rng);
  return c.check([&](Tape<double>& t) {
    return project(ad::bilinear_upsample(ad::avg_pool_3x3_s2(t.parameter(x)), 5, 4), seed);
  }, seed);
}

GradErr grad_batchnorm(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCase c;
  auto& x = c.add("x", {2, 2, 2, 3}, rng);
  auto& g = c.add("gamma", {3}, rng, 0.5, 1.5);
  auto& b = c.add("beta", {3}, rng);
  const std::vector<double> mean{0.1, -0.2, 0.3}, var{1.0, 0.5, 2.0};
  return c.check([&](Tape<double>& t) {
    auto train = ad::batchnorm_train(t.parameter(x), t.parameter(g), t.parameter(b), 1e-5);
    auto eval = ad::batchnorm_eval<double>(t.parameter(x), t.parameter(g), t.parameter(b), mean, var, 1e-5);
    return ad::add(project(train, seed), project(eval, seed + 1));
  }, seed);
}

GradErr grad_head(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCase c;
  auto& x = c.add("x", {3, 2, 2, 4}, rng);
  auto& w = c.add("w", {4, 3}, rng);
  auto& b = c.add("b", {3}, rng);
  return c.check([&](Tape<double>& t) {
    auto h = ad::global_avg_pool(ad::relu(t.parameter(x)));
    return ad::cross_entropy(ad::dense(h, t.parameter(w), t.parameter(b)), {0, 2, 1});
  }, seed);
}

GradErr grad_layout(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCase c;
  auto& x = c.add("x", {2, 3, 2}, rng);
  auto& y = c.add("y", {2, 1, 2}, rng);
  return c.check([&](Tape<double>& t) {
    auto cat = ad::concat<double>({t.parameter(x), t.parameter(y)}, 1);
    auto tl = ad::expand_tile(ad::pad_trailing(ad::slice(cat, 1, 1, 3), 2, 4), 1, 2);
    return project(ad::permute(ad::reshape(tl, {2, 2, 3, 4}), {3, 1, 0, 2}), seed);
  }, seed);
}

GradErr grad_heads(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCase c;
  auto& x = c.add("x", {1, 2, 3, 4}, rng);
  return c.check([&](Tape<double>& t) {
    return project(ad::split_heads_2d(ad::combine_heads_2d(ad::split_heads_2d(t.parameter(x), 2)), 2), seed);
  }, seed);
}

GradErr grad_rel_to_abs(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCase c;
  auto& x = c.add("x", {1, 2, 4, 7}, rng);
  return c.check([&](Tape<double>& t) { return project(ad::rel_to_abs(t.parameter(x)), seed); }, seed);
}

GradErr grad_relative_logits(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCase c;
  auto& q = c.add("q", {1, 2, 3, 2, 2}, rng);
  auto& rh = c.add("rel_height", {5, 2}, rng);
  auto& rw = c.add("rel_width", {3, 2}, rng);
  return c.check([&](Tape<double>& t) {
    auto [sh, sw] = ad::relative_logits_2d(t.parameter(q), t.parameter(rh), t.parameter(rw));
    return ad::add(project(sh, seed), project(ad::softmax(ad::add(sh, sw)), seed + 1));
  }, seed);
}

GradBuilder grad_attention(PositionEncoding enc) {
  return [enc](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto spec = head_spec(2, 2, 2, enc);
    auto w = init_attention_weights<double>(spec, 4, 3, 3, rng);
    GradCase c;
    auto& x = c.add("x", {1, 3, 3, 4}, rng);
    auto& qkv = c.add("qkv", w.qkv);
    auto& out = c.add("out", w.out);
    Parameter<double>* rh = w.rel ? &c.add("rel_height", w.rel->height) : nullptr;
    Parameter<double>* rw = w.rel ? &c.add("rel_width", w.rel->width) : nullptr;
    return c.check([&](Tape<double>& t) {
      AttentionVars<double> v{t.parameter(qkv), t.parameter(out), std::nullopt, std::nullopt};
      if (rh) {
        v.rel_height = t.parameter(*rh);
        v.rel_width = t.parameter(*rw);
      }
      return project(ad::self_attention_2d(t.parameter(x), spec, v), seed);
    }, seed);
  };
}

GradErr grad_aaconv(std::uint64_t seed) {
  GradErr worst;
  for (std::size_t stride : {1u, 2u}) {
    std::mt19937_64 rng(seed + 10 * stride);
    AAConvSpec s;
    s.in_channels = 3;
    s.out_channels = 8;
    s.kappa = s.upsilon = 0.5;
    s.heads = 2;
    s.stride = stride;
    s.downsample_attention = stride == 2;
    // Strided and downsampled attention pools twice; 8x8 keeps a 2x2 grid
    // so the relative tables and batch statistics stay non-degenerate.
    const std::size_t side = 4 * stride;
    auto w = init_aaconv_weights<double>(s, side, side, rng);
    GradCase c;
    auto& x = c.add("x", {2, side, side, 3}, rng);
    auto& conv = c.add("conv", *w.conv);
    auto& qkv = c.add("qkv", w.attention->qkv);
    auto& out = c.add("out", w.attention->out);
    auto& rh = c.add("rel_height", w.attention->rel->height);
    auto& rw = c.add("rel_width", w.attention->rel->width);
    auto& gamma = c.add("gamma", {8}, rng, 0.5, 1.5);
    auto& beta = c.add("beta", {8}, rng);
    worst.merge(c.check([&](Tape<double>& t) {
      AAConvVars<double> v;
      v.conv = t.parameter(conv);
      v.attention = AttentionVars<double>{t.parameter(qkv), t.parameter(out), t.parameter(rh), t.parameter(rw)};
      return project(ad::aaconv_bn(t.parameter(x), s, v, t.parameter(gamma), t.parameter(beta), 1e-5), seed);
    }, seed));
  }
  return worst;
}

// ReLU, batch norm and pooling leave some toy-model weights with gradients
// around 1e-8, where central differences only resolve a few digits.
constexpr double kToyScaleFloor = 1e-3;

GradErr grad_toy_model(std::uint64_t seed) {
  ToyNetConfig cfg;
  cfg.image_size = 8;
  cfg.stem_width = 8;
  cfg.blocks = 2;
  cfg.kappa = 0.5;
  cfg.upsilon = 0.5;
  cfg.heads = 2;
  cfg.seed = seed;
  ToyNet<double> net(cfg);
  auto data = synth_dataset(seed, 3, SynthOptions{8, 3, 0.1});
  Tensor<double> images(data.images.shape());
  for (std::size_t i = 0; i < images.size(); ++i) images[i] = data.images[i];
  std::vector<Parameter<double>*> params;
  for (auto& p : net.parameters()) params.push_back(&p);
  GradCheckOptions opts;
  opts.seed = seed;
  opts.max_coords = 40;
  opts.scale_floor = kToyScaleFloor;
  return GradErr::of(check_gradients(params, [&](Tape<double>& t) {
    return ad::cross_entropy(net.forward(t, images, true), data.labels);
  }, opts));
}

}  // namespace

// ----------------------------------------------------------------- public

Suite parse_suite(std::string_view s) {
  if (s == "oracle") return Suite::Oracle;
  if (s == "grad") return Suite::Grad;
  if (s == "equivariance") return Suite::Equivariance;
  if (s == "all") return Suite::All;
  throw InputError("unknown suite '" + std::string(s) + "' (expected oracle, grad, equivariance or all)");
}

std::string Property::line() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s %s/%s %s=%.3e %s=%.0e", pass ? "PASS" : "FAIL", suite.c_str(),
                name.c_str(), must_exceed ? "observed" : "max_err", observed,
                must_exceed ? "must_exceed" : "tol", bound);
  return note.empty() ? std::string(buf) : std::string(buf) + " " + note;
}

std::vector<Property> run_oracle_suite(const Options& opts) {
  std::mt19937_64 rng(opts.seed);
  std::vector<Property> out;
  out.push_back(oracle_rel_to_abs(rng));
  out.push_back(oracle_relative_logits(rng, opts.random_configs));
  out.push_back(oracle_attention(rng, opts.random_configs, PositionEncoding::Relative, "self_attention_relative"));
  out.push_back(oracle_attention(rng, opts.random_configs / 4 + 1, PositionEncoding::None, "self_attention_none"));
  out.push_back(oracle_conv(rng, opts.random_configs / 4 + 1));
  return out;
}

std::vector<Property> run_grad_suite(const Options& opts) {
  const std::vector<std::pair<std::string, GradBuilder>> cases = {
      {"matmul", grad_matmul},
      {"softmax", grad_softmax},
      {"conv2d", grad_conv2d},
      {"avg_pool_bilinear", grad_pool_upsample},
      {"batchnorm", grad_batchnorm},
      {"relu_pool_dense_xent", grad_head},
      {"layout_ops", grad_layout},
      {"split_combine_heads", grad_heads},
      {"rel_to_abs", grad_rel_to_abs},
      {"relative_logits", grad_relative_logits},
      {"self_attention_none", grad_attention(PositionEncoding::None)},
      {"self_attention_sine2d", grad_attention(PositionEncoding::Sine2D)},
      {"self_attention_coord", grad_attention(PositionEncoding::CoordChannels)},
      {"self_attention_relative", grad_attention(PositionEncoding::Relative)},
      {"aaconv_bn", grad_aaconv},
      {"toy_model", grad_toy_model},
  };
  std::vector<Property> out;
  for (const auto& [name, fn] : cases) {
    GradErr worst;
    for (std::uint64_t k = 0; k < 3; ++k) worst.merge(fn(opts.seed + k));
    auto p = at_most("grad", name, worst.rel, 1e-4);
    // Skipped kink coordinates must stay rare or the check says little.
    p.pass = p.pass && worst.skipped * 10 <= worst.checked;
    if (worst.coord != worst.rel) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "coord_err=%.3e", worst.coord);
      p.note = buf;
    }
    if (worst.refined + worst.skipped > 0) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "kinks refined=%zu skipped=%zu of %zu", worst.refined, worst.skipped,
                    worst.checked);
      p.note += (p.note.empty() ? "" : " ") + std::string(buf);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Property> run_equivariance_suite(const Options& opts) {
  std::mt19937_64 rng(opts.seed);
  std::vector<Property> out;
  const std::size_t h = 3, w = 4, hw = h * w, f = 5;
  {
    auto spec = head_spec(2, 3, 2, PositionEncoding::None);
    auto wts = init_attention_weights<float>(spec, f, h, w, rng);
    auto x = random_tensor<float>({2, h, w, f}, rng);
    auto y = self_attention_2d(x, spec, wts);
    std::vector<std::size_t> perm(hw);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double worst = 0;
    for (int k = 0; k < 20; ++k) {
      std::shuffle(perm.begin(), perm.end(), rng);
      worst = std::max(worst, max_abs_diff(self_attention_2d(permute_pixels(x, perm), spec, wts),
                                           permute_pixels(y, perm)));
    }
    out.push_back(at_most("equivariance", "none_mode_permutations", worst, 1e-5));
  }
  {
    auto spec = head_spec(2, 3, 2, PositionEncoding::Relative);
    auto wts = init_attention_weights<float>(spec, f, h, w, rng);
    auto x = random_tensor<float>({1, h, w, f}, rng);
    auto y = self_attention_2d(x, spec, wts);
    double worst = 0;
    for (std::size_t a = 0; a < hw; ++a)
      for (std::size_t b = a + 1; b < hw; ++b) {
        std::vector<std::size_t> perm(hw);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::swap(perm[a], perm[b]);
        worst = std::max(worst, max_abs_diff(self_attention_2d(permute_pixels(x, perm), spec, wts),
                                             permute_pixels(y, perm)));
      }
    out.push_back(above("equivariance", "relative_mode_breaks_transposition", worst, 1e-3));
  }
  {
    const std::size_t d = 3, sh = 4, sw = 5, n = sh * sw;
    auto v = random_tensor<float>({d}, rng);
    Tensor<float> q({1, 1, sh, sw, d});
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = v[i % d];
    RelativeEmbeddings<float> rel{random_tensor<float>({2 * sh - 1, d}, rng),
                                  random_tensor<float>({2 * sw - 1, d}, rng)};
    auto r = relative_logits_2d(q, rel);
    // Every logit must equal the one at the same offset from query 0's row/column.
    double dev_h = 0, dev_w = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const long dy = long(j / sw) - long(i / sw), dx = long(j % sw) - long(i % sw);
        const std::size_t i0 = dy >= 0 ? 0 : std::size_t(-dy) * sw;
        const std::size_t j0h = i0 + std::size_t(long(dy) * long(sw));
        const std::size_t i1 = dx >= 0 ? 0 : std::size_t(-dx);
        const std::size_t j1 = std::size_t(long(i1) + dx);
        dev_h = std::max(dev_h, double(std::abs(r.height.at(0, 0, i, j) - r.height.at(0, 0, i0, j0h))));
        dev_w = std::max(dev_w, double(std::abs(r.width.at(0, 0, i, j) - r.width.at(0, 0, i1, j1))));
      }
    out.push_back(at_most("equivariance", "offset_stationarity_height", dev_h, 0.0));
    out.push_back(at_most("equivariance", "offset_stationarity_width", dev_w, 0.0));
  }
  return out;
}

std::vector<Property> run(Suite suite, const Options& opts) {
  std::vector<Property> out;
  auto append = [&](std::vector<Property> v) { out.insert(out.end(), v.begin(), v.end()); };
  if (suite == Suite::Oracle || suite == Suite::All) append(run_oracle_suite(opts));
  if (suite == Suite::Grad || suite == Suite::All) append(run_grad_suite(opts));
  if (suite == Suite::Equivariance || suite == Suite::All) append(run_equivariance_suite(opts));
  return out;
}

bool all_pass(const std::vector<Property>& props) {
  return std::all_of(props.begin(), props.end(), [](const Property& p) { return p.pass; });
}

}  // namespace aacv::verify
