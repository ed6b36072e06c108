#pragma once

// Multi-head self-attention over (B, H, W, C) feature maps with optional
// two-dimensional relative position logits.
//
// The relative logits follow the memory-efficient formulation: queries are
// contracted against the (2L-1)-row embedding tables and the result is
// re-indexed from relative to absolute offsets, so the (HW, HW, d) table of
// gathered embeddings is never built. naive_relative_logits() builds exactly
// that table and serves as the reference.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "aacv/autodiff.hpp"
#include "aacv/tensor.hpp"

namespace aacv {

enum class PositionEncoding { None, Sine2D, CoordChannels, Relative };

std::string_view to_string(PositionEncoding e);
/// Accepts "none", "sine2d", "coord", "relative" (case-insensitive).
PositionEncoding parse_encoding(std::string_view s);

struct AttentionSpec {
  std::size_t heads = 1;
  std::size_t key_depth = 1;    // total over heads
  std::size_t value_depth = 1;  // total over heads
  PositionEncoding encoding = PositionEncoding::Relative;
  std::size_t min_key_depth_per_head = 1;

  std::size_t key_depth_per_head() const { return key_depth / heads; }
  std::size_t value_depth_per_head() const { return value_depth / heads; }
  /// Throws ContractError when heads do not divide the depths evenly or the
  /// per-head key depth is below the configured minimum.
  void validate() const;
};

/// Width of the tensor the qkv projection consumes for a given input width.
std::size_t attention_input_channels(const AttentionSpec& spec, std::size_t in_channels);

template <typename T>
struct RelativeEmbeddings {
  Tensor<T> height;  // (2H-1, d_k^h); row m is offset m-(H-1)
  Tensor<T> width;   // (2W-1, d_k^h)
};

template <typename T>
struct AttentionWeights {
  Tensor<T> qkv;  // (1, 1, F_in', 2 d_k + d_v), channels split [keys | queries | values]
  Tensor<T> out;  // (1, 1, d_v, d_v)
  std::optional<RelativeEmbeddings<T>> rel;
};

/// Fan-in scaled uniform projections; relative tables ~ N(0, d_k^h^-1/2).
template <typename T>
AttentionWeights<T> init_attention_weights(const AttentionSpec& spec, std::size_t in_channels,
                                           std::size_t height, std::size_t width,
                                           std::mt19937_64& rng);

// ----------------------------------------------------------- head layout

/// (B,H,W,d) -> (B,N_h,H,W,d/N_h); channel block h becomes head h.
template <typename T>
Tensor<T> split_heads_2d(const Tensor<T>& x, std::size_t heads);
/// Inverse of split_heads_2d.
template <typename T>
Tensor<T> combine_heads_2d(const Tensor<T>& x);

namespace ad {
template <typename T> Var<T> split_heads_2d(Var<T> x, std::size_t heads);
template <typename T> Var<T> combine_heads_2d(Var<T> x);
}  // namespace ad

// --------------------------------------------------------------- rel_to_abs

/// (B,N_h,L,2L-1) -> (B,N_h,L,L) with out[..,i,j] = in[..,i,j-i+L-1],
/// computed by padding, flattening and slicing (no arithmetic).
template <typename T>
Tensor<T> rel_to_abs(const Tensor<T>& x);

namespace ad {
/// Gradient is the adjoint of the index map: a scatter back to the source
/// positions, zeros elsewhere.
template <typename T> Var<T> rel_to_abs(Var<T> x);
}  // namespace ad

namespace detail {
/// Deliberately corrupts rel_to_abs (reverses output columns) so that
/// verification suites can demonstrate they catch a faulty kernel.
void set_rel_to_abs_fault(bool enabled);
bool rel_to_abs_fault();
}  // namespace detail

// --------------------------------------------------------- relative logits

/// Width-direction logits (B,N_h,HW,HW) for queries (B,N_h,H,W,d_k^h):
/// entry [(y,x),(y',x')] = q[y,x] . rel[x'-x+W-1].
template <typename T>
Tensor<T> relative_logits_1d(const Tensor<T>& q, const Tensor<T>& rel);

template <typename T>
struct RelativeLogits {
  Tensor<T> height;  // S_H
  Tensor<T> width;   // S_W
};

template <typename T>
RelativeLogits<T> relative_logits_2d(const Tensor<T>& q, const RelativeEmbeddings<T>& rel);

/// Direct double loop over pixel pairs; materialises the gathered embedding
/// table. Limited to H, W <= 8.
template <typename T>
RelativeLogits<T> naive_relative_logits(const Tensor<T>& q, const RelativeEmbeddings<T>& rel);

namespace ad {
template <typename T> Var<T> relative_logits_1d(Var<T> q, Var<T> rel);
template <typename T>
std::pair<Var<T>, Var<T>> relative_logits_2d(Var<T> q, Var<T> rel_height, Var<T> rel_width);
}  // namespace ad

// -------------------------------------------------------- position codes

/// (H,W,d): first d/2 channels encode x, last d/2 encode y. Within a half,
/// channel 2i is sin(p / s_i) and 2i+1 is cos(p / s_i) with timescales s_i
/// spaced geometrically from 1 to 10000.
template <typename T>
Tensor<T> sine_encoding_2d(std::size_t height, std::size_t width, std::size_t depth);

/// (H,W,3): x and y scaled to [-1, 1] (0 for a single row/column) and
/// r = sqrt(x^2 + y^2).
template <typename T>
Tensor<T> coord_channels(std::size_t height, std::size_t width);

// ------------------------------------------------------------ attention

/// Captures the softmax weights (B,N_h,HW,HW) of a forward pass.
template <typename T>
struct AttentionProbe {
  Tensor<T> weights;
  std::size_t height = 0;
  std::size_t width = 0;
};

template <typename T>
struct AttentionVars {
  Var<T> qkv;
  Var<T> out;
  std::optional<Var<T>> rel_height;
  std::optional<Var<T>> rel_width;
};

namespace ad {
template <typename T>
Var<T> self_attention_2d(Var<T> x, const AttentionSpec& spec, const AttentionVars<T>& w,
                         AttentionProbe<T>* probe = nullptr);
}  // namespace ad

/// (B,H,W,F_in) -> (B,H,W,d_v).
template <typename T>
Tensor<T> self_attention_2d(const Tensor<T>& x, const AttentionSpec& spec,
                            const AttentionWeights<T>& w, AttentionProbe<T>* probe = nullptr);

}  // namespace aacv
