#include "aacv/relattn.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>

namespace aacv {

std::string_view to_string(PositionEncoding e) {
  switch (e) {
    case PositionEncoding::None: return "none";
    case PositionEncoding::Sine2D: return "sine2d";
    case PositionEncoding::CoordChannels: return "coord";
    case PositionEncoding::Relative: return "relative";
  }
  return "unknown";
}

PositionEncoding parse_encoding(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "none") return PositionEncoding::None;
  if (lower == "sine2d" || lower == "sine") return PositionEncoding::Sine2D;
  if (lower == "coord" || lower == "coordchannels") return PositionEncoding::CoordChannels;
  if (lower == "relative") return PositionEncoding::Relative;
  throw InputError("unknown position encoding '" + std::string(s) +
                   "' (expected none, sine2d, coord or relative)");
}

void AttentionSpec::validate() const {
  if (heads == 0) throw ContractError("attention: head count must be positive");
  if (key_depth == 0 || value_depth == 0) {
    throw ContractError("attention: key and value depths must be positive");
  }
  if (key_depth % heads != 0 || value_depth % heads != 0) {
    throw ContractError("attention: " + std::to_string(heads) + " heads must divide d_k=" +
                        std::to_string(key_depth) + " and d_v=" + std::to_string(value_depth));
  }
  if (key_depth_per_head() < min_key_depth_per_head) {
    throw ContractError("attention: key depth per head " + std::to_string(key_depth_per_head()) +
                        " below minimum " + std::to_string(min_key_depth_per_head));
  }
}

std::size_t attention_input_channels(const AttentionSpec& spec, std::size_t in_channels) {
  return spec.encoding == PositionEncoding::CoordChannels ? in_channels + 3 : in_channels;
}

template <typename T>
AttentionWeights<T> init_attention_weights(const AttentionSpec& spec, std::size_t in_channels,
                                           std::size_t height, std::size_t width,
                                           std::mt19937_64& rng) {
  spec.validate();
  const std::size_t fin = attention_input_channels(spec, in_channels);
  auto uniform = [&](Shape shape, std::size_t fan_in) {
    const double limit = std::sqrt(3.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
  };
  AttentionWeights<T> w;
  w.qkv = uniform(Shape{1, 1, fin, 2 * spec.key_depth + spec.value_depth}, fin);
  w.out = uniform(Shape{1, 1, spec.value_depth, spec.value_depth}, spec.value_depth);
  if (spec.encoding == PositionEncoding::Relative) {
    const std::size_t dkh = spec.key_depth_per_head();
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dkh)));
    RelativeEmbeddings<T> rel{Tensor<T>(Shape{2 * height - 1, dkh}),
                              Tensor<T>(Shape{2 * width - 1, dkh})};
    for (auto& v : rel.height.data()) v = static_cast<T>(dist(rng));
    for (auto& v : rel.width.data()) v = static_cast<T>(dist(rng));
    w.rel = std::move(rel);
  }
  return w;
}

// ----------------------------------------------------------- head layout

namespace ad {

template <typename T>
Var<T> split_heads_2d(Var<T> x, std::size_t heads) {
  const auto d = dims4(x.value(), "split_heads_2d");
  if (heads == 0 || d.c % heads != 0) {
    throw ShapeError("split_heads_2d: " + std::to_string(d.c) + " channels not divisible by " +
                     std::to_string(heads) + " heads");
  }
  auto r = reshape(x, Shape{d.b, d.h, d.w, heads, d.c / heads});
  return permute(r, {0, 3, 1, 2, 4});
}

template <typename T>
Var<T> combine_heads_2d(Var<T> x) {
  if (x.value().rank() != 5) throw ShapeError("combine_heads_2d: expected rank-5 input");
  const Shape s = x.shape();
  auto p = permute(x, {0, 2, 3, 1, 4});
  return reshape(p, Shape{s[0], s[2], s[3], s[1] * s[4]});
}

}  // namespace ad

template <typename T>
Tensor<T> split_heads_2d(const Tensor<T>& x, std::size_t heads) {
  Tape<T> tape;
  return ad::split_heads_2d(tape.constant(x), heads).value();
}

template <typename T>
Tensor<T> combine_heads_2d(const Tensor<T>& x) {
  Tape<T> tape;
  return ad::combine_heads_2d(tape.constant(x)).value();
}

// --------------------------------------------------------------- rel_to_abs

namespace detail {
namespace {
std::atomic<bool> rel_to_abs_fault_flag{false};
}
void set_rel_to_abs_fault(bool enabled) { rel_to_abs_fault_flag.store(enabled); }
bool rel_to_abs_fault() { return rel_to_abs_fault_flag.load(); }
}  // namespace detail

namespace {

std::size_t rel_length(const Shape& s, const char* who) {
  if (s.size() != 4 || s[3] != 2 * s[2] - 1) {
    throw ShapeError(std::string(who) + ": expected (B, N_h, L, 2L-1), got " + to_string(s));
  }
  return s[2];
}

template <typename T>
void reverse_columns(Tensor<T>& y) {
  const std::size_t l = y.dim(3);
  for (std::size_t r = 0; r < y.size() / l; ++r) std::reverse(y.raw() + r * l, y.raw() + (r + 1) * l);
}

}  // namespace

template <typename T>
Tensor<T> rel_to_abs(const Tensor<T>& x) {
  const std::size_t len = rel_length(x.shape(), "rel_to_abs");
  const std::size_t b = x.dim(0);
  const std::size_t nh = x.dim(1);
  // Pad one zero column, flatten, pad L-1 zeros, view as (L+1, 2L-1) and
  // keep the first L rows and last L columns.
  auto padded = pad_trailing(x, 3, 2 * len);
  auto flat = std::move(padded).reshaped(Shape{b, nh, len * 2 * len});
  auto flat_padded = pad_trailing(flat, 2, len * 2 * len + len - 1);
  auto grid = std::move(flat_padded).reshaped(Shape{b, nh, len + 1, 2 * len - 1});
  auto rows = slice(grid, 2, 0, len);
  auto out = slice(rows, 3, len - 1, len);
  if (detail::rel_to_abs_fault()) reverse_columns(out);
  return out;
}

namespace ad {

template <typename T>
Var<T> rel_to_abs(Var<T> x) {
  return x.tape->record(
      "rel_to_abs", aacv::rel_to_abs(x.value()), {x.id}, [x = x.id](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& xs = t.value(x).shape();
        const std::size_t len = xs[2];
        const std::size_t width = 2 * len - 1;
        const std::size_t outer = xs[0] * xs[1];
        Tensor<T> dx(xs);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < len; ++i) {
            for (std::size_t j = 0; j < len; ++j) {
              dx[(o * len + i) * width + (j + len - 1 - i)] += g[(o * len + i) * len + j];
            }
          }
        }
        t.accumulate(x, dx);
      });
}

}  // namespace ad

// --------------------------------------------------------- relative logits

namespace ad {
namespace {

// Appendix-style 1-D relative logits for q laid out as (B, N_h, H, W, d):
// contract with the (2W-1, d) table, re-index each (N_h*H) row block from
// relative to absolute width offsets, tile across the H key rows and permute
// into (B, N_h, HW, HW) order given by `mask`.
template <typename T>
Var<T> relative_logits_1d_masked(Var<T> q, Var<T> rel, const std::vector<std::size_t>& mask) {
  if (q.value().rank() != 5) {
    throw ShapeError("relative_logits_1d: queries must be (B, N_h, H, W, d), got " +
                     to_string(q.shape()));
  }
  const Shape s = q.shape();
  const std::size_t b = s[0], nh = s[1], h = s[2], w = s[3], d = s[4];
  if (rel.value().rank() != 2 || rel.shape()[0] != 2 * w - 1 || rel.shape()[1] != d) {
    throw ShapeError("relative_logits_1d: embedding table " + to_string(rel.shape()) +
                     " does not match (2*" + std::to_string(w) + "-1, " + std::to_string(d) + ")");
  }
  auto q_rows = reshape(q, Shape{1, b * nh * h * w, d});
  auto table = reshape(rel, Shape{1, 2 * w - 1, d});
  auto logits = matmul(q_rows, table, false, true);
  logits = reshape(logits, Shape{b, nh * h, w, 2 * w - 1});
  logits = rel_to_abs(logits);
  logits = reshape(logits, Shape{b, nh, h, w, w});
  logits = expand_tile(logits, 3, h);
  logits = permute(logits, mask);
  return reshape(logits, Shape{b, nh, h * w, h * w});
}

}  // namespace

template <typename T>
Var<T> relative_logits_1d(Var<T> q, Var<T> rel) {
  return relative_logits_1d_masked(q, rel, {0, 1, 2, 4, 3, 5});
}

template <typename T>
std::pair<Var<T>, Var<T>> relative_logits_2d(Var<T> q, Var<T> rel_height, Var<T> rel_width) {
  if (q.value().rank() != 5) throw ShapeError("relative_logits_2d: queries must be rank 5");
  const Shape s = q.shape();
  if (rel_height.shape()[0] != 2 * s[2] - 1 || rel_width.shape()[0] != 2 * s[3] - 1) {
    throw ShapeError("relative_logits_2d: embedding rows " + to_string(rel_height.shape()) +
                     " / " + to_string(rel_width.shape()) + " do not match a " +
                     std::to_string(s[2]) + "x" + std::to_string(s[3]) + " map");
  }
  auto width = relative_logits_1d_masked(q, rel_width, {0, 1, 2, 4, 3, 5});
  auto qt = permute(q, {0, 1, 3, 2, 4});
  auto height = relative_logits_1d_masked(qt, rel_height, {0, 1, 4, 2, 5, 3});
  return {height, width};
}

}  // namespace ad

template <typename T>
Tensor<T> relative_logits_1d(const Tensor<T>& q, const Tensor<T>& rel) {
  Tape<T> tape;
  return ad::relative_logits_1d(tape.constant(q), tape.constant(rel)).value();
}

template <typename T>
RelativeLogits<T> relative_logits_2d(const Tensor<T>& q, const RelativeEmbeddings<T>& rel) {
  Tape<T> tape;
  auto [h, w] = ad::relative_logits_2d(tape.constant(q), tape.constant(rel.height),
                                       tape.constant(rel.width));
  return {h.value(), w.value()};
}

template <typename T>
RelativeLogits<T> naive_relative_logits(const Tensor<T>& q, const RelativeEmbeddings<T>& rel) {
  if (q.rank() != 5) throw ShapeError("naive_relative_logits: queries must be rank 5");
  const std::size_t b = q.dim(0), nh = q.dim(1), h = q.dim(2), w = q.dim(3), d = q.dim(4);
  if (h > 8 || w > 8) {
    throw ContractError("naive_relative_logits: limited to maps of at most 8x8, got " +
                        std::to_string(h) + "x" + std::to_string(w));
  }
  if (rel.height.shape() != Shape{2 * h - 1, d} || rel.width.shape() != Shape{2 * w - 1, d}) {
    throw ShapeError("naive_relative_logits: embedding tables do not match the map");
  }
  const std::size_t hw = h * w;
  // Gathered tables: entry [i, j, :] holds the embedding for the offset
  // between query pixel i and key pixel j.
  Tensor<T> gathered_h(Shape{hw, hw, d});
  Tensor<T> gathered_w(Shape{hw, hw, d});
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t j = 0; j < hw; ++j) {
      const std::size_t row_h = j / w + (h - 1) - i / w;
      const std::size_t row_w = j % w + (w - 1) - i % w;
      for (std::size_t k = 0; k < d; ++k) {
        gathered_h[(i * hw + j) * d + k] = rel.height[row_h * d + k];
        gathered_w[(i * hw + j) * d + k] = rel.width[row_w * d + k];
      }
    }
  }
  RelativeLogits<T> out{Tensor<T>(Shape{b, nh, hw, hw}), Tensor<T>(Shape{b, nh, hw, hw})};
  for (std::size_t bn = 0; bn < b * nh; ++bn) {
    for (std::size_t i = 0; i < hw; ++i) {
      const T* qi = q.raw() + (bn * hw + i) * d;
      for (std::size_t j = 0; j < hw; ++j) {
        T sh{0}, sw{0};
        for (std::size_t k = 0; k < d; ++k) {
          sh += qi[k] * gathered_h[(i * hw + j) * d + k];
          sw += qi[k] * gathered_w[(i * hw + j) * d + k];
        }
        out.height[(bn * hw + i) * hw + j] = sh;
        out.width[(bn * hw + i) * hw + j] = sw;
      }
    }
  }
  return out;
}

// -------------------------------------------------------- position codes

template <typename T>
Tensor<T> sine_encoding_2d(std::size_t height, std::size_t width, std::size_t depth) {
  if (depth == 0 || depth % 4 != 0) {
    throw ContractError("sine_encoding_2d: depth " + std::to_string(depth) +
                        " must be a positive multiple of 4");
  }
  const std::size_t freqs = depth / 4;
  std::vector<double> timescale(freqs);
  for (std::size_t i = 0; i < freqs; ++i) {
    const double frac = freqs > 1 ? static_cast<double>(i) / static_cast<double>(freqs - 1) : 0.0;
    timescale[i] = std::pow(10000.0, frac);
  }
  Tensor<T> enc(Shape{height, width, depth});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      T* e = enc.raw() + (y * width + x) * depth;
      for (std::size_t i = 0; i < freqs; ++i) {
        const double ax = static_cast<double>(x) / timescale[i];
        const double ay = static_cast<double>(y) / timescale[i];
        e[2 * i] = static_cast<T>(std::sin(ax));
        e[2 * i + 1] = static_cast<T>(std::cos(ax));
        e[depth / 2 + 2 * i] = static_cast<T>(std::sin(ay));
        e[depth / 2 + 2 * i + 1] = static_cast<T>(std::cos(ay));
      }
    }
  }
  return enc;
}

template <typename T>
Tensor<T> coord_channels(std::size_t height, std::size_t width) {
  auto scaled = [](std::size_t i, std::size_t n) {
    return n > 1 ? -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
  };
  Tensor<T> c(Shape{height, width, 3});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double xs = scaled(x, width);
      const double ys = scaled(y, height);
      T* p = c.raw() + (y * width + x) * 3;
      p[0] = static_cast<T>(xs);
      p[1] = static_cast<T>(ys);
      p[2] = static_cast<T>(std::sqrt(xs * xs + ys * ys));
    }
  }
  return c;
}

// ------------------------------------------------------------ attention

namespace ad {

template <typename T>
Var<T> self_attention_2d(Var<T> x, const AttentionSpec& spec, const AttentionVars<T>& w,
                         AttentionProbe<T>* probe) {
  spec.validate();
  const auto d = dims4(x.value(), "self_attention_2d");
  const std::size_t fin = attention_input_channels(spec, d.c);
  if (w.qkv.shape() != Shape{1, 1, fin, 2 * spec.key_depth + spec.value_depth}) {
    throw ShapeError("self_attention_2d: qkv weights " + to_string(w.qkv.shape()) +
                     " do not match input with " + std::to_string(fin) + " channels and d_k=" +
                     std::to_string(spec.key_depth) + ", d_v=" + std::to_string(spec.value_depth));
  }
  if (w.out.shape() != Shape{1, 1, spec.value_depth, spec.value_depth}) {
    throw ShapeError("self_attention_2d: output projection " + to_string(w.out.shape()));
  }

  Var<T> input = x;
  if (spec.encoding == PositionEncoding::Sine2D) {
    auto enc = sine_encoding_2d<T>(d.h, d.w, d.c).reshaped(Shape{1, d.h, d.w, d.c});
    input = add_constant(x, aacv::expand_tile(enc, 0, d.b).reshaped(x.shape()));
  } else if (spec.encoding == PositionEncoding::CoordChannels) {
    auto coords = coord_channels<T>(d.h, d.w);
    auto tiled = aacv::expand_tile(coords, 0, d.b);
    input = concat<T>({x, x.tape->constant(std::move(tiled))}, 3);
  }

  const std::size_t dk = spec.key_depth, dv = spec.value_depth, nh = spec.heads;
  const std::size_t dkh = spec.key_depth_per_head(), dvh = spec.value_depth_per_head();
  const std::size_t hw = d.h * d.w;

  auto kqv = conv2d(input, w.qkv, 1);
  auto k = slice(kqv, 3, 0, dk);
  auto q = slice(kqv, 3, dk, dk);
  auto v = slice(kqv, 3, 2 * dk, dv);
  q = scale(q, static_cast<T>(1.0 / std::sqrt(static_cast<double>(dkh))));

  q = split_heads_2d(q, nh);
  k = split_heads_2d(k, nh);
  v = split_heads_2d(v, nh);

  auto logits = matmul(reshape(q, Shape{d.b, nh, hw, dkh}), reshape(k, Shape{d.b, nh, hw, dkh}),
                       false, true);
  if (spec.encoding == PositionEncoding::Relative) {
    if (!w.rel_height || !w.rel_width) {
      throw ContractError("self_attention_2d: relative encoding requires embedding tables");
    }
    auto [s_h, s_w] = relative_logits_2d(q, *w.rel_height, *w.rel_width);
    logits = add(add(logits, s_h), s_w);
  }
  auto weights = softmax(logits);
  if (probe) {
    probe->weights = weights.value();
    probe->height = d.h;
    probe->width = d.w;
  }
  auto attn = matmul(weights, reshape(v, Shape{d.b, nh, hw, dvh}));
  attn = combine_heads_2d(reshape(attn, Shape{d.b, nh, d.h, d.w, dvh}));
  return conv2d(attn, w.out, 1);
}

}  // namespace ad

template <typename T>
Tensor<T> self_attention_2d(const Tensor<T>& x, const AttentionSpec& spec,
                            const AttentionWeights<T>& w, AttentionProbe<T>* probe) {
  Tape<T> tape;
  AttentionVars<T> vars{tape.constant(w.qkv), tape.constant(w.out), std::nullopt, std::nullopt};
  if (w.rel) {
    vars.rel_height = tape.constant(w.rel->height);
    vars.rel_width = tape.constant(w.rel->width);
  }
  return ad::self_attention_2d(tape.constant(x), spec, vars, probe).value();
}

#define AACV_INSTANTIATE(T)                                                                  \
  template AttentionWeights<T> init_attention_weights(const AttentionSpec&, std::size_t,     \
                                                      std::size_t, std::size_t,              \
                                                      std::mt19937_64&);                     \
  template Tensor<T> split_heads_2d(const Tensor<T>&, std::size_t);                          \
  template Tensor<T> combine_heads_2d(const Tensor<T>&);                                     \
  template Tensor<T> rel_to_abs(const Tensor<T>&);                                           \
  template Tensor<T> relative_logits_1d(const Tensor<T>&, const Tensor<T>&);                 \
  template RelativeLogits<T> relative_logits_2d(const Tensor<T>&, const RelativeEmbeddings<T>&); \
  template RelativeLogits<T> naive_relative_logits(const Tensor<T>&,                         \
                                                   const RelativeEmbeddings<T>&);            \
  template Tensor<T> sine_encoding_2d(std::size_t, std::size_t, std::size_t);                \
  template Tensor<T> coord_channels(std::size_t, std::size_t);                               \
  template Tensor<T> self_attention_2d(const Tensor<T>&, const AttentionSpec&,               \
                                       const AttentionWeights<T>&, AttentionProbe<T>*);      \
  namespace ad {                                                                             \
  template Var<T> split_heads_2d(Var<T>, std::size_t);                                       \
  template Var<T> combine_heads_2d(Var<T>);                                                  \
  template Var<T> rel_to_abs(Var<T>);                                                        \
  template Var<T> relative_logits_1d(Var<T>, Var<T>);                                        \
  template std::pair<Var<T>, Var<T>> relative_logits_2d(Var<T>, Var<T>, Var<T>);             \
  template Var<T> self_attention_2d(Var<T>, const AttentionSpec&, const AttentionVars<T>&,   \
                                    AttentionProbe<T>*);                                     \
  }
AACV_INSTANTIATE(float)
AACV_INSTANTIATE(double)
#undef AACV_INSTANTIATE

}  // namespace aacv
