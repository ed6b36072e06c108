#include "aacv/aaconv.hpp"

#include <cmath>
#include <numeric>

namespace aacv {

std::size_t round_to_heads(double channels, std::size_t heads) {
  if (heads == 0) throw ContractError("round_to_heads: head count must be positive");
  if (channels <= 0.0) return 0;
  const double multiples = std::floor(channels / static_cast<double>(heads) + 0.5 + 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(multiples)) * heads;
}

std::size_t AAConvSpec::value_depth() const {
  return round_to_heads(upsilon * static_cast<double>(out_channels), heads);
}

std::size_t AAConvSpec::key_depth() const {
  if (!has_attention()) return 0;
  return std::max(round_to_heads(kappa * static_cast<double>(out_channels), heads),
                  min_key_depth_per_head * heads);
}

AttentionSpec AAConvSpec::attention() const {
  return AttentionSpec{heads, key_depth(), value_depth(), encoding, min_key_depth_per_head};
}

std::pair<std::size_t, std::size_t> AAConvSpec::attention_dims(std::size_t height,
                                                               std::size_t width) const {
  auto halve = [](std::size_t n) { return (n + 1) / 2; };
  if (stride == 2) {
    height = halve(height);
    width = halve(width);
  }
  if (downsample_attention) {
    height = halve(height);
    width = halve(width);
  }
  return {height, width};
}

void AAConvSpec::validate() const {
  if (kernel == 0 || in_channels == 0 || out_channels == 0 || heads == 0) {
    throw ContractError("aaconv: kernel, channel and head counts must be positive");
  }
  if (stride != 1 && stride != 2) throw ContractError("aaconv: stride must be 1 or 2");
  if (!(upsilon >= 0.0 && upsilon <= 1.0)) {
    throw ContractError("aaconv: upsilon must lie in [0, 1], got " + std::to_string(upsilon));
  }
  if (upsilon > 0.0 && !(kappa > 0.0)) throw ContractError("aaconv: kappa must be positive");
  if (value_depth() > out_channels) {
    throw ContractError("aaconv: d_v=" + std::to_string(value_depth()) + " exceeds F_out=" +
                        std::to_string(out_channels) + " after rounding to " +
                        std::to_string(heads) + " heads");
  }
  if (has_attention()) attention().validate();
}

template <typename T>
AAConvWeights<T> init_aaconv_weights(const AAConvSpec& spec, std::size_t height, std::size_t width,
                                     std::mt19937_64& rng) {
  spec.validate();
  AAConvWeights<T> w;
  if (spec.conv_channels() > 0) {
    const std::size_t fan_in = spec.kernel * spec.kernel * spec.in_channels;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor<T> k(Shape{spec.kernel, spec.kernel, spec.in_channels, spec.conv_channels()});
    for (auto& v : k.data()) v = static_cast<T>(dist(rng));
    w.conv = std::move(k);
  }
  if (spec.has_attention()) {
    const auto [ah, aw] = spec.attention_dims(height, width);
    w.attention = init_attention_weights<T>(spec.attention(), spec.in_channels, ah, aw, rng);
  }
  return w;
}

namespace ad {

template <typename T>
Var<T> augmented_conv2d(Var<T> x, const AAConvSpec& spec, const AAConvVars<T>& w,
                        AttentionProbe<T>* probe) {
  spec.validate();
  const auto d = dims4(x.value(), "augmented_conv2d");
  if (d.c != spec.in_channels) {
    throw ShapeError("augmented_conv2d: input has " + std::to_string(d.c) +
                     " channels, layer expects " + std::to_string(spec.in_channels));
  }
  const std::size_t out_h = (d.h + spec.stride - 1) / spec.stride;
  const std::size_t out_w = (d.w + spec.stride - 1) / spec.stride;

  std::vector<Var<T>> parts;
  if (spec.conv_channels() > 0) {
    if (!w.conv) throw ContractError("augmented_conv2d: missing convolution weights");
    parts.push_back(conv2d(x, *w.conv, spec.stride));
  }
  if (spec.has_attention()) {
    if (!w.attention) throw ContractError("augmented_conv2d: missing attention weights");
    Var<T> a = x;
    if (spec.stride == 2) a = avg_pool_3x3_s2(a);
    if (spec.downsample_attention) a = avg_pool_3x3_s2(a);
    auto att = self_attention_2d(a, spec.attention(), *w.attention, probe);
    if (spec.downsample_attention) att = bilinear_upsample(att, out_h, out_w);
    parts.push_back(att);
  }
  for (const auto& p : parts) {
    if (p.shape()[1] != out_h || p.shape()[2] != out_w) {
      throw ContractError("augmented_conv2d: path spatial dims " + to_string(p.shape()) +
                          " disagree with " + std::to_string(out_h) + "x" + std::to_string(out_w));
    }
  }
  return parts.size() == 1 ? parts.front() : concat(parts, 3);
}

template <typename T>
Var<T> aaconv_bn(Var<T> x, const AAConvSpec& spec, const AAConvVars<T>& w, Var<T> gamma,
                 Var<T> beta, T eps, BatchStats<T>* stats) {
  return batchnorm_train(augmented_conv2d(x, spec, w), gamma, beta, eps, stats);
}

}  // namespace ad

namespace {

template <typename T>
AAConvVars<T> bind_constants(Tape<T>& tape, const AAConvWeights<T>& w) {
  AAConvVars<T> vars;
  if (w.conv) vars.conv = tape.constant(*w.conv);
  if (w.attention) {
    AttentionVars<T> a{tape.constant(w.attention->qkv), tape.constant(w.attention->out),
                       std::nullopt, std::nullopt};
    if (w.attention->rel) {
      a.rel_height = tape.constant(w.attention->rel->height);
      a.rel_width = tape.constant(w.attention->rel->width);
    }
    vars.attention = a;
  }
  return vars;
}

}  // namespace

template <typename T>
Tensor<T> augmented_conv2d(const Tensor<T>& x, const AAConvSpec& spec, const AAConvWeights<T>& w,
                           AttentionProbe<T>* probe) {
  Tape<T> tape;
  return ad::augmented_conv2d(tape.constant(x), spec, bind_constants(tape, w), probe).value();
}

template <typename T>
Tensor<T> aaconv_bn(const Tensor<T>& x, const AAConvSpec& spec, const AAConvWeights<T>& w,
                    const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  Tape<T> tape;
  return ad::aaconv_bn(tape.constant(x), spec, bind_constants(tape, w), tape.constant(gamma),
                       tape.constant(beta), eps)
      .value();
}

// --------------------------------------------------------------- rational

namespace {

std::int64_t checked(__int128 v) {
  if (v > INT64_MAX || v < INT64_MIN) throw NumericError("rational arithmetic overflow");
  return static_cast<std::int64_t>(v);
}

Rational make(__int128 num, __int128 den) {
  if (den < 0) {
    num = -num;
    den = -den;
  }
  __int128 a = num < 0 ? -num : num, b = den;
  while (b != 0) {
    const __int128 t = a % b;
    a = b;
    b = t;
  }
  if (a > 1) {
    num /= a;
    den /= a;
  }
  return Rational(checked(num), checked(den));
}

}  // namespace

Rational::Rational(std::int64_t num, std::int64_t den) : num_(num), den_(den) {
  if (den == 0) throw NumericError("rational with zero denominator");
  if (den_ < 0) {
    num_ = -num_;
    den_ = -den_;
  }
  const std::int64_t g = std::gcd(num_ < 0 ? -num_ : num_, den_);
  if (g > 1) {
    num_ /= g;
    den_ /= g;
  }
}

Rational Rational::from_double(double x, std::int64_t max_den) {
  if (!std::isfinite(x)) throw NumericError("rational from non-finite value");
  // Continued-fraction convergents, stopping before the denominator bound.
  std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double r = x;
  for (int i = 0; i < 64; ++i) {
    const double a = std::floor(r);
    const auto ai = static_cast<std::int64_t>(a);
    const std::int64_t q2 = q0 + ai * q1;
    if (q2 > max_den) break;
    const std::int64_t p2 = p0 + ai * p1;
    p0 = p1;
    q0 = q1;
    p1 = p2;
    q1 = q2;
    const double frac = r - a;
    if (std::abs(static_cast<double>(p1) / static_cast<double>(q1) - x) <= 1e-15 * std::max(1.0, std::abs(x)) ||
        frac < 1e-12) {
      break;
    }
    r = 1.0 / frac;
  }
  return Rational(p1, q1);
}

Rational operator+(const Rational& a, const Rational& b) {
  return make(static_cast<__int128>(a.num_) * b.den_ + static_cast<__int128>(b.num_) * a.den_,
              static_cast<__int128>(a.den_) * b.den_);
}

Rational operator-(const Rational& a, const Rational& b) {
  return a + Rational(-b.num_, b.den_);
}

Rational operator*(const Rational& a, const Rational& b) {
  return make(static_cast<__int128>(a.num_) * b.num_, static_cast<__int128>(a.den_) * b.den_);
}

bool operator<(const Rational& a, const Rational& b) {
  return static_cast<__int128>(a.num_) * b.den_ < static_cast<__int128>(b.num_) * a.den_;
}

std::string Rational::str() const {
  return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
}

std::int64_t enumerated_delta(const AAConvSpec& spec) {
  spec.validate();
  const auto k2 = static_cast<std::int64_t>(spec.kernel * spec.kernel);
  const auto fin = static_cast<std::int64_t>(spec.in_channels);
  const auto fout = static_cast<std::int64_t>(spec.out_channels);
  const auto dv = static_cast<std::int64_t>(spec.value_depth());
  const auto dk = static_cast<std::int64_t>(spec.key_depth());
  std::int64_t augmented = k2 * fin * (fout - dv);
  if (dv > 0) {
    const auto fin_att = static_cast<std::int64_t>(attention_input_channels(spec.attention(), spec.in_channels));
    augmented += fin_att * (2 * dk + dv) + dv * dv;
  }
  return augmented - k2 * fin * fout;
}

ParamDelta delta_params(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                        Rational kappa, Rational upsilon, std::size_t heads) {
  const Rational fin(static_cast<std::int64_t>(in_channels));
  const Rational fout(static_cast<std::int64_t>(out_channels));
  const Rational k2(static_cast<std::int64_t>(kernel * kernel));
  const Rational two(2);
  const Rational one(1);
  const Rational formula = fin * fout * (two * kappa + (one - k2) * upsilon) + fout * fout * upsilon * upsilon;

  AAConvSpec spec;
  spec.kernel = kernel;
  spec.in_channels = in_channels;
  spec.out_channels = out_channels;
  spec.kappa = kappa.to_double();
  spec.upsilon = upsilon.to_double();
  spec.heads = heads;
  spec.encoding = PositionEncoding::None;
  return {formula, enumerated_delta(spec)};
}

#define AACV_INSTANTIATE(T)                                                                      \
  template AAConvWeights<T> init_aaconv_weights(const AAConvSpec&, std::size_t, std::size_t,     \
                                                std::mt19937_64&);                               \
  template Tensor<T> augmented_conv2d(const Tensor<T>&, const AAConvSpec&,                       \
                                      const AAConvWeights<T>&, AttentionProbe<T>*);              \
  template Tensor<T> aaconv_bn(const Tensor<T>&, const AAConvSpec&, const AAConvWeights<T>&,     \
                               const Tensor<T>&, const Tensor<T>&, T);                           \
  namespace ad {                                                                                 \
  template Var<T> augmented_conv2d(Var<T>, const AAConvSpec&, const AAConvVars<T>&,              \
                                   AttentionProbe<T>*);                                          \
  template Var<T> aaconv_bn(Var<T>, const AAConvSpec&, const AAConvVars<T>&, Var<T>, Var<T>, T,  \
                            BatchStats<T>*);                                                     \
  }
AACV_INSTANTIATE(float)
AACV_INSTANTIATE(double)
#undef AACV_INSTANTIATE

}  // namespace aacv
