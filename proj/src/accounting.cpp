#include "aacv/accounting.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "aacv/models.hpp"

namespace aacv {

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::AAConv: return "aaconv";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Dense: return "dense";
    case LayerKind::Pool: return "pool";
    case LayerKind::Add: return "add";
  }
  return "?";
}

std::size_t ArchDescriptor::count(LayerKind k) const {
  return static_cast<std::size_t>(
      std::count_if(layers.begin(), layers.end(), [k](const LayerRecord& r) { return r.kind == k; }));
}

void ArchDescriptor::validate() const {
  for (std::size_t i = 1; i < layers.size(); ++i) {
    const auto& a = layers[i - 1];
    const auto& b = layers[i];
    // Projection shortcuts and residual adds read an earlier tensor, so only
    // layers that continue the main path are checked against their predecessor.
    if (b.kind == LayerKind::BatchNorm && (b.in_h != a.out_h || b.in_w != a.out_w || b.in_c != a.out_c)) {
      throw ContractError("descriptor: '" + b.name + "' input does not match '" + a.name + "' output");
    }
  }
  for (const auto& r : layers) {
    if (r.kind == LayerKind::AAConv && (!r.aa || r.attn_h == 0 || r.attn_w == 0)) {
      throw ContractError("descriptor: augmented layer '" + r.name + "' lacks attention dims");
    }
  }
}

// ------------------------------------------------------------------ builder

DescriptorBuilder::DescriptorBuilder(std::string family, std::size_t image_size,
                                     std::size_t channels, std::size_t classes)
    : cur_{image_size, image_size, channels} {
  d_.family = std::move(family);
  d_.image_size = image_size;
  d_.in_channels = channels;
  d_.classes = classes;
}

namespace {
std::size_t strided(std::size_t n, std::size_t s) { return (n + s - 1) / s; }
}  // namespace

void DescriptorBuilder::conv(const std::string& name, std::size_t out_c, std::size_t k,
                             std::size_t stride) {
  LayerRecord r;
  r.kind = LayerKind::Conv;
  r.name = name;
  r.in_h = cur_.h;
  r.in_w = cur_.w;
  r.in_c = cur_.c;
  r.out_h = strided(cur_.h, stride);
  r.out_w = strided(cur_.w, stride);
  r.out_c = out_c;
  r.kernel = k;
  r.stride = stride;
  d_.layers.push_back(r);
  cur_ = {r.out_h, r.out_w, out_c};
}

void DescriptorBuilder::aaconv(const std::string& name, const AAConvSpec& spec) {
  spec.validate();
  if (spec.in_channels != cur_.c) {
    throw ContractError("descriptor: '" + name + "' expects " + std::to_string(spec.in_channels) +
                        " input channels, have " + std::to_string(cur_.c));
  }
  LayerRecord r;
  r.kind = LayerKind::AAConv;
  r.name = name;
  r.in_h = cur_.h;
  r.in_w = cur_.w;
  r.in_c = cur_.c;
  r.out_h = strided(cur_.h, spec.stride);
  r.out_w = strided(cur_.w, spec.stride);
  r.out_c = spec.out_channels;
  r.kernel = spec.kernel;
  r.stride = spec.stride;
  r.aa = spec;
  std::tie(r.attn_h, r.attn_w) = spec.attention_dims(cur_.h, cur_.w);
  d_.layers.push_back(r);
  cur_ = {r.out_h, r.out_w, r.out_c};
}

void DescriptorBuilder::batchnorm(const std::string& name) {
  LayerRecord r;
  r.kind = LayerKind::BatchNorm;
  r.name = name;
  r.in_h = r.out_h = cur_.h;
  r.in_w = r.out_w = cur_.w;
  r.in_c = r.out_c = cur_.c;
  d_.layers.push_back(r);
}

void DescriptorBuilder::pool(const std::string& name, std::size_t k, std::size_t stride) {
  LayerRecord r;
  r.kind = LayerKind::Pool;
  r.name = name;
  r.in_h = cur_.h;
  r.in_w = cur_.w;
  r.in_c = r.out_c = cur_.c;
  r.out_h = strided(cur_.h, stride);
  r.out_w = strided(cur_.w, stride);
  r.kernel = k;
  r.stride = stride;
  d_.layers.push_back(r);
  cur_ = {r.out_h, r.out_w, cur_.c};
}

void DescriptorBuilder::global_pool(const std::string& name) {
  LayerRecord r;
  r.kind = LayerKind::Pool;
  r.name = name;
  r.in_h = cur_.h;
  r.in_w = cur_.w;
  r.in_c = r.out_c = cur_.c;
  r.kernel = cur_.h;
  d_.layers.push_back(r);
  cur_ = {1, 1, cur_.c};
}

void DescriptorBuilder::add(const std::string& name) {
  LayerRecord r;
  r.kind = LayerKind::Add;
  r.name = name;
  r.in_h = r.out_h = cur_.h;
  r.in_w = r.out_w = cur_.w;
  r.in_c = r.out_c = cur_.c;
  d_.layers.push_back(r);
}

void DescriptorBuilder::dense(const std::string& name, std::size_t out) {
  LayerRecord r;
  r.kind = LayerKind::Dense;
  r.name = name;
  r.in_c = cur_.h * cur_.w * cur_.c;
  r.out_c = out;
  d_.layers.push_back(r);
  cur_ = {1, 1, out};
}

ArchDescriptor DescriptorBuilder::finish() {
  d_.validate();
  return std::move(d_);
}

// ------------------------------------------------------------------ families

const std::vector<std::string>& descriptor_families() {
  static const std::vector<std::string> names{"resnet34", "resnet50", "resnet101", "resnet152",
                                              "wrn28_10", "toy"};
  return names;
}

DescriptorOptions default_descriptor_options(std::string_view family) {
  DescriptorOptions o;
  if (family == "resnet34") {
    o.kappa = 0.25;
    o.upsilon = 0.25;
  } else if (family == "toy") {
    const ToyNetConfig t;
    o.kappa = t.kappa;
    o.upsilon = t.upsilon;
    o.heads = t.heads;
    o.encoding = t.encoding;
  } else {
    o.kappa = 0.2;
    o.upsilon = 0.1;
  }
  return o;
}

namespace {

// Published ResNet and WRN attention layers keep at least this many key
// dimensions per head.
constexpr std::size_t kMinKeyDepthPerHead = 20;

AAConvSpec layer_spec(const DescriptorOptions& o, std::size_t in_c, std::size_t out_c,
                      std::size_t stride, bool downsample) {
  AAConvSpec s;
  s.kernel = 3;
  s.in_channels = in_c;
  s.out_channels = out_c;
  s.kappa = o.kappa;
  s.upsilon = o.upsilon;
  s.heads = o.heads;
  s.stride = stride;
  s.downsample_attention = downsample;
  s.encoding = o.encoding;
  s.min_key_depth_per_head = kMinKeyDepthPerHead;
  return s;
}

// torchvision-style ResNet: 7x7/2 stem and 3x3/2 max pool, stride in the
// 3x3 convolution, projection shortcuts where shape changes.
ArchDescriptor resnet(std::string_view family, const DescriptorOptions& o) {
  struct Layout {
    bool bottleneck;
    std::vector<std::size_t> blocks;
  };
  Layout layout;
  if (family == "resnet34") layout = {false, {3, 4, 6, 3}};
  else if (family == "resnet50") layout = {true, {3, 4, 6, 3}};
  else if (family == "resnet101") layout = {true, {3, 4, 23, 3}};
  else layout = {true, {3, 8, 36, 3}};

  const std::size_t image = o.image_size ? o.image_size : 224;
  DescriptorBuilder b(std::string(family), image, 3, 1000);
  b.conv("stem/conv", 64, 7, 2);
  b.batchnorm("stem/bn");
  b.pool("stem/maxpool", 3, 2);

  const std::size_t expansion = layout.bottleneck ? 4 : 1;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const std::size_t width = 64u << stage;
    for (std::size_t blk = 0; blk < layout.blocks[stage]; ++blk) {
      const std::string p = "stage" + std::to_string(stage + 1) + "/block" + std::to_string(blk) + "/";
      const std::size_t stride = (stage > 0 && blk == 0) ? 2 : 1;
      const auto in = b.cursor();
      const std::size_t out_c = width * expansion;
      // Attention in the first augmented stage runs at half resolution.
      const bool augment = o.augmented && stage > 0;
      const bool downsample = stage == 1;
      if (layout.bottleneck) {
        b.conv(p + "conv1", width, 1);
        b.batchnorm(p + "bn1");
        if (augment) b.aaconv(p + "conv2", layer_spec(o, width, width, stride, downsample));
        else b.conv(p + "conv2", width, 3, stride);
        b.batchnorm(p + "bn2");
        b.conv(p + "conv3", out_c, 1);
        b.batchnorm(p + "bn3");
      } else {
        if (augment) b.aaconv(p + "conv1", layer_spec(o, in.c, width, stride, downsample));
        else b.conv(p + "conv1", width, 3, stride);
        b.batchnorm(p + "bn1");
        b.conv(p + "conv2", width, 3);
        b.batchnorm(p + "bn2");
      }
      const auto main = b.cursor();
      if (stride != 1 || in.c != out_c) {
        b.set_cursor(in);
        b.conv(p + "shortcut/conv", out_c, 1, stride);
        b.batchnorm(p + "shortcut/bn");
      }
      b.set_cursor(main);
      b.add(p + "add");
    }
  }
  b.global_pool("head/pool");
  b.dense("head/dense", 1000);
  return b.finish();
}

// Pre-activation WRN-28-10 for 32x32 inputs: 3 groups of 4 blocks, widths
// 160/320/640, 1x1 projection where width or stride changes.
ArchDescriptor wrn28_10(const DescriptorOptions& o) {
  const std::size_t image = o.image_size ? o.image_size : 32;
  DescriptorBuilder b("wrn28_10", image, 3, 100);
  b.conv("stem/conv", 16, 3);
  const std::size_t widths[3] = {160, 320, 640};
  for (std::size_t g = 0; g < 3; ++g) {
    for (std::size_t blk = 0; blk < 4; ++blk) {
      const std::string p = "group" + std::to_string(g + 1) + "/block" + std::to_string(blk) + "/";
      const std::size_t stride = (g > 0 && blk == 0) ? 2 : 1;
      const auto in = b.cursor();
      b.batchnorm(p + "bn1");
      if (o.augmented) b.aaconv(p + "conv1", layer_spec(o, in.c, widths[g], stride, false));
      else b.conv(p + "conv1", widths[g], 3, stride);
      b.batchnorm(p + "bn2");
      b.conv(p + "conv2", widths[g], 3);
      const auto main = b.cursor();
      if (stride != 1 || in.c != widths[g]) {
        b.set_cursor(in);
        b.conv(p + "shortcut/conv", widths[g], 1, stride);
      }
      b.set_cursor(main);
      b.add(p + "add");
    }
  }
  b.batchnorm("head/bn");
  b.global_pool("head/pool");
  b.dense("head/dense", 100);
  return b.finish();
}

}  // namespace

ArchDescriptor build_descriptor(std::string_view family, const DescriptorOptions& opts) {
  if (family == "resnet34" || family == "resnet50" || family == "resnet101" || family == "resnet152") {
    return resnet(family, opts);
  }
  if (family == "wrn28_10") return wrn28_10(opts);
  if (family == "toy") {
    ToyNetConfig cfg;
    if (opts.image_size) cfg.image_size = opts.image_size;
    cfg.heads = opts.heads;
    cfg.encoding = opts.encoding;
    cfg.kappa = opts.augmented ? opts.kappa : 0.0;
    cfg.upsilon = opts.augmented ? opts.upsilon : 0.0;
    return toy_descriptor(cfg);
  }
  std::string names;
  for (const auto& n : descriptor_families()) names += (names.empty() ? "" : ", ") + n;
  throw InputError("unknown architecture '" + std::string(family) + "' (valid: " + names + ")");
}

// ----------------------------------------------------------------- counting

namespace {
using u64 = std::uint64_t;
}

AttentionCost attention_cost(const LayerRecord& r) {
  AttentionCost c;
  if (r.kind != LayerKind::AAConv || !r.aa || !r.aa->has_attention()) return c;
  const auto spec = r.aa->attention();
  const u64 fin = attention_input_channels(spec, r.in_c);
  const u64 dk = spec.key_depth, dv = spec.value_depth, dkh = spec.key_depth_per_head();
  const u64 h = r.attn_h, w = r.attn_w, hw = h * w;
  const bool relative = spec.encoding == PositionEncoding::Relative;

  c.params = fin * (2 * dk + dv) + dv * dv;
  if (relative) c.params += (2 * (h + w) - 2) * dkh;

  c.qkv_flops = 2 * hw * fin * (2 * dk + dv);
  c.logits_flops = 2 * hw * hw * dk;
  c.values_flops = 2 * hw * hw * dv;
  c.relative_flops = relative ? 2 * hw * dk * ((2 * h - 1) + (2 * w - 1)) : 0;
  c.output_flops = 2 * hw * dv * dv;
  c.flops = c.qkv_flops + c.logits_flops + c.values_flops + c.relative_flops + c.output_flops;
  return c;
}

AttentionCost attention_cost(const ArchDescriptor& d) {
  AttentionCost total;
  for (const auto& r : d.layers) {
    const auto c = attention_cost(r);
    total.params += c.params;
    total.flops += c.flops;
    total.qkv_flops += c.qkv_flops;
    total.logits_flops += c.logits_flops;
    total.values_flops += c.values_flops;
    total.relative_flops += c.relative_flops;
    total.output_flops += c.output_flops;
  }
  return total;
}

std::uint64_t layer_params(const LayerRecord& r) {
  switch (r.kind) {
    case LayerKind::Conv: return u64(r.kernel) * r.kernel * r.in_c * r.out_c;
    case LayerKind::AAConv:
      return u64(r.kernel) * r.kernel * r.in_c * r.aa->conv_channels() + attention_cost(r).params;
    case LayerKind::BatchNorm: return 2 * u64(r.out_c);
    case LayerKind::Dense: return u64(r.in_c) * r.out_c + r.out_c;
    case LayerKind::Pool:
    case LayerKind::Add: return 0;
  }
  return 0;
}

std::uint64_t layer_flops(const LayerRecord& r) {
  switch (r.kind) {
    case LayerKind::Conv: return 2 * u64(r.kernel) * r.kernel * r.in_c * r.out_c * r.out_h * r.out_w;
    case LayerKind::AAConv:
      return 2 * u64(r.kernel) * r.kernel * r.in_c * r.aa->conv_channels() * r.out_h * r.out_w +
             attention_cost(r).flops;
    case LayerKind::Dense: return 2 * u64(r.in_c) * r.out_c;
    case LayerKind::BatchNorm:
    case LayerKind::Pool:
    case LayerKind::Add: return 0;
  }
  return 0;
}

std::uint64_t count_params(const ArchDescriptor& d) {
  u64 n = 0;
  for (const auto& r : d.layers) n += layer_params(r);
  return n;
}

std::uint64_t count_flops(const ArchDescriptor& d) {
  u64 n = 0;
  for (const auto& r : d.layers) n += layer_flops(r);
  return n;
}

std::uint64_t attention_map_bytes(std::size_t height, std::size_t width, std::size_t heads,
                                  std::size_t bytes_per_entry) {
  const u64 hw = u64(height) * width;
  return u64(heads) * hw * hw * bytes_per_entry;
}

AttentionMemory attn_memory(const ArchDescriptor& d, std::size_t bytes_per_entry) {
  AttentionMemory m;
  for (const auto& r : d.layers) {
    if (r.kind != LayerKind::AAConv || !r.aa->has_attention()) continue;
    const u64 b = attention_map_bytes(r.attn_h, r.attn_w, r.aa->heads, bytes_per_entry);
    m.per_layer.push_back(b);
    m.training += b;
    m.inference_max = std::max(m.inference_max, b);
  }
  return m;
}

CostReport cost_report(const ArchDescriptor& d, std::size_t bytes_per_entry) {
  return CostReport{count_params(d), count_flops(d), attn_memory(d, bytes_per_entry)};
}

std::string CostReport::to_json() const {
  nlohmann::ordered_json j;
  j["params"] = params;
  j["flops"] = flops;
  j["attn_bytes_per_layer"] = attn.per_layer;
  j["attn_bytes_training"] = attn.training;
  j["attn_bytes_inference_max"] = attn.inference_max;
  return j.dump(2) + "\n";
}

std::string CostReport::to_table() const {
  auto human = [](double v, const char* unit) {
    char buf[64];
    if (v >= 1e9) std::snprintf(buf, sizeof buf, "%.2fG%s", v / 1e9, unit);
    else if (v >= 1e6) std::snprintf(buf, sizeof buf, "%.2fM%s", v / 1e6, unit);
    else if (v >= 1e3) std::snprintf(buf, sizeof buf, "%.2fk%s", v / 1e3, unit);
    else std::snprintf(buf, sizeof buf, "%.0f%s", v, unit);
    return std::string(buf);
  };
  std::vector<std::pair<std::string, std::pair<u64, std::string>>> rows{
      {"params", {params, human(double(params), "")}},
      {"flops", {flops, human(double(flops), "")}},
      {"attn_bytes_training", {attn.training, human(double(attn.training), "B")}},
      {"attn_bytes_inference_max", {attn.inference_max, human(double(attn.inference_max), "B")}},
  };
  for (std::size_t i = 0; i < attn.per_layer.size(); ++i) {
    rows.push_back({"attn_bytes_layer" + std::to_string(i),
                    {attn.per_layer[i], human(double(attn.per_layer[i]), "B")}});
  }
  std::size_t w0 = 0, w1 = 0;
  for (const auto& [k, v] : rows) {
    w0 = std::max(w0, k.size());
    w1 = std::max(w1, std::to_string(v.first).size());
  }
  std::ostringstream os;
  for (const auto& [k, v] : rows) {
    const std::string num = std::to_string(v.first);
    os << k << std::string(w0 - k.size() + 2, ' ') << std::string(w1 - num.size(), ' ') << num
       << "  " << v.second << "\n";
  }
  return os.str();
}

}  // namespace aacv
