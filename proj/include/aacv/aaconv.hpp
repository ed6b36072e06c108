#pragma once

// Attention-augmented convolution: a k x k convolution producing
// F_out - d_v channels concatenated with d_v self-attention channels.

#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "aacv/autodiff.hpp"
#include "aacv/relattn.hpp"

namespace aacv {

/// Nearest positive multiple of `heads` to `channels` (halves round up);
/// zero stays zero.
std::size_t round_to_heads(double channels, std::size_t heads);

struct AAConvSpec {
  std::size_t kernel = 3;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  double kappa = 0.0;    // d_k / F_out
  double upsilon = 0.0;  // d_v / F_out
  std::size_t heads = 1;
  std::size_t stride = 1;
  bool downsample_attention = false;
  PositionEncoding encoding = PositionEncoding::Relative;
  std::size_t min_key_depth_per_head = 1;

  std::size_t value_depth() const;
  std::size_t key_depth() const;
  std::size_t conv_channels() const { return out_channels - value_depth(); }
  bool has_attention() const { return value_depth() > 0; }
  AttentionSpec attention() const;
  /// Spatial dims at which attention runs for an H x W input.
  std::pair<std::size_t, std::size_t> attention_dims(std::size_t height, std::size_t width) const;
  void validate() const;
};

template <typename T>
struct AAConvWeights {
  std::optional<Tensor<T>> conv;  // (k, k, F_in, F_out - d_v)
  std::optional<AttentionWeights<T>> attention;
};

/// Conv kernels are He-uniform; attention weights per init_attention_weights.
template <typename T>
AAConvWeights<T> init_aaconv_weights(const AAConvSpec& spec, std::size_t height, std::size_t width,
                                     std::mt19937_64& rng);

template <typename T>
struct AAConvVars {
  std::optional<Var<T>> conv;
  std::optional<AttentionVars<T>> attention;
};

namespace ad {
template <typename T>
Var<T> augmented_conv2d(Var<T> x, const AAConvSpec& spec, const AAConvVars<T>& w,
                        AttentionProbe<T>* probe = nullptr);
/// augmented_conv2d followed by batch-statistics batch normalisation.
template <typename T>
Var<T> aaconv_bn(Var<T> x, const AAConvSpec& spec, const AAConvVars<T>& w, Var<T> gamma,
                 Var<T> beta, T eps, BatchStats<T>* stats = nullptr);
}  // namespace ad

template <typename T>
Tensor<T> augmented_conv2d(const Tensor<T>& x, const AAConvSpec& spec, const AAConvWeights<T>& w,
                           AttentionProbe<T>* probe = nullptr);

template <typename T>
Tensor<T> aaconv_bn(const Tensor<T>& x, const AAConvSpec& spec, const AAConvWeights<T>& w,
                    const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

/// Exact fraction with a positive denominator, kept in lowest terms.
class Rational {
 public:
  Rational(std::int64_t num = 0, std::int64_t den = 1);
  /// Best approximation with denominator <= max_den (exact for short
  /// decimals such as 0.2 or 0.25).
  static Rational from_double(double x, std::int64_t max_den = 1'000'000);

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }
  bool is_integer() const { return den_ == 1; }

  friend Rational operator+(const Rational& a, const Rational& b);
  friend Rational operator-(const Rational& a, const Rational& b);
  friend Rational operator*(const Rational& a, const Rational& b);
  friend bool operator==(const Rational& a, const Rational& b) = default;
  friend bool operator<(const Rational& a, const Rational& b);

  std::string str() const;

 private:
  std::int64_t num_;
  std::int64_t den_;
};

struct ParamDelta {
  Rational formula;         // closed form on the unrounded ratios
  std::int64_t enumerated;  // real rounded layer shapes, relative tables excluded
};

/// Change in parameter count when a k x k convolution F_in -> F_out is
/// replaced by its augmented form.
ParamDelta delta_params(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                        Rational kappa, Rational upsilon, std::size_t heads = 1);

/// Parameter tensors of one augmented layer (no relative tables) minus the
/// plain k x k convolution it replaces.
std::int64_t enumerated_delta(const AAConvSpec& spec);

}  // namespace aacv
