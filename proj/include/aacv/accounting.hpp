#pragma once

// Parameter, FLOP and attention-memory accounting over symbolic layer lists.
// Nothing here allocates tensors or runs a network.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aacv/aaconv.hpp"

namespace aacv {

enum class LayerKind { Conv, AAConv, BatchNorm, Dense, Pool, Add };

std::string_view to_string(LayerKind k);

struct LayerRecord {
  LayerKind kind = LayerKind::Conv;
  std::string name;
  std::size_t in_h = 1, in_w = 1, in_c = 1;
  std::size_t out_h = 1, out_w = 1, out_c = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::optional<AAConvSpec> aa;  // AAConv only
  std::size_t attn_h = 0, attn_w = 0;  // AAConv only: dims at which attention runs
};

struct ArchDescriptor {
  std::string family;
  std::size_t image_size = 0;
  std::size_t in_channels = 3;
  std::size_t classes = 0;
  std::vector<LayerRecord> layers;

  std::size_t count(LayerKind k) const;
  /// Throws ContractError when consecutive spatial dims disagree.
  void validate() const;
};

/// Recognised family names, in display order.
const std::vector<std::string>& descriptor_families();

struct DescriptorOptions {
  double kappa = 0.0;
  double upsilon = 0.0;
  std::size_t heads = 8;
  bool augmented = false;
  std::size_t image_size = 0;  // 0 = family default (224 ResNet, 32 WRN, 16 toy)
  PositionEncoding encoding = PositionEncoding::Relative;
};

/// Family defaults for the attention ratios: resnet34 0.25/0.25, other
/// ResNets and WRN kappa = 2 upsilon = 0.2, toy per ToyNetConfig.
DescriptorOptions default_descriptor_options(std::string_view family);

/// Throws InputError for an unknown family.
ArchDescriptor build_descriptor(std::string_view family, const DescriptorOptions& opts);

// ------------------------------------------------------------ layer builders

/// Appends records while tracking the running feature-map shape.
class DescriptorBuilder {
 public:
  DescriptorBuilder(std::string family, std::size_t image_size, std::size_t channels,
                    std::size_t classes);

  struct Cursor {
    std::size_t h, w, c;
  };
  Cursor cursor() const { return cur_; }
  void set_cursor(Cursor c) { cur_ = c; }

  void conv(const std::string& name, std::size_t out_c, std::size_t k, std::size_t stride = 1);
  void aaconv(const std::string& name, const AAConvSpec& spec);
  void batchnorm(const std::string& name);
  void pool(const std::string& name, std::size_t k, std::size_t stride);
  void global_pool(const std::string& name);
  void add(const std::string& name);
  void dense(const std::string& name, std::size_t out);

  ArchDescriptor finish();

 private:
  ArchDescriptor d_;
  Cursor cur_;
};

// ----------------------------------------------------------------- counting

std::uint64_t layer_params(const LayerRecord& r);
std::uint64_t layer_flops(const LayerRecord& r);

std::uint64_t count_params(const ArchDescriptor& d);
std::uint64_t count_flops(const ArchDescriptor& d);

struct AttentionMemory {
  std::vector<std::uint64_t> per_layer;  // one entry per AAConv record
  std::uint64_t training = 0;            // sum
  std::uint64_t inference_max = 0;       // max
};

/// N_h (HW)^2 entries per augmented layer at the given storage width.
AttentionMemory attn_memory(const ArchDescriptor& d, std::size_t bytes_per_entry = 2);

/// Bytes of one attention map stack: heads * (H W)^2 * bytes_per_entry.
std::uint64_t attention_map_bytes(std::size_t height, std::size_t width, std::size_t heads,
                                  std::size_t bytes_per_entry = 2);

/// Self-attention share of one augmented layer.
struct AttentionCost {
  std::uint64_t params = 0;      // qkv + output projection + relative tables
  std::uint64_t flops = 0;       // sum of the terms below
  std::uint64_t qkv_flops = 0;
  std::uint64_t logits_flops = 0;    // Q K^T over all heads
  std::uint64_t values_flops = 0;    // weights . V
  std::uint64_t relative_flops = 0;  // query-embedding contractions
  std::uint64_t output_flops = 0;
};

AttentionCost attention_cost(const LayerRecord& r);
/// Summed over every augmented layer.
AttentionCost attention_cost(const ArchDescriptor& d);

struct CostReport {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  AttentionMemory attn;

  /// Keys: params, flops, attn_bytes_per_layer, attn_bytes_training,
  /// attn_bytes_inference_max. Two-space indent, trailing newline.
  std::string to_json() const;
  std::string to_table() const;
};

CostReport cost_report(const ArchDescriptor& d, std::size_t bytes_per_entry = 2);

}  // namespace aacv
