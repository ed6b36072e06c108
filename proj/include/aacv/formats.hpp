#pragma once

// On-disk formats: weights container, run configuration, PPM/PGM images and
// the CSV training trace.
//
// Weights file layout (all integers little-endian):
//   "AACV" u8 version=1
//   repeated, names in ascending byte order:
//     u16 name length, name bytes (UTF-8), u8 rank, rank x u32 dims,
//     numel x f32 payload

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "aacv/models.hpp"
#include "aacv/tensor.hpp"

namespace aacv {

using NamedTensors = std::map<std::string, Tensor<float>>;

std::string encode_weights(const NamedTensors& tensors);
/// Throws InputError on bad magic/version, truncation, trailing bytes or a
/// repeated name.
NamedTensors decode_weights(std::string_view bytes);

void save_weights(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_weights(const std::filesystem::path& path);

/// Parameters and buffers of a model, keyed by name.
NamedTensors collect_weights(const Model<float>& model);
/// Copies every tensor into the model. The name set and shapes must match
/// exactly.
void apply_weights(Model<float>& model, const NamedTensors& tensors);

// ------------------------------------------------------------ run config

struct RunConfig {
  ToyNetConfig net;
  TrainConfig train;
};

/// `key = value` lines with `#` comments. Keys are the ToyNetConfig and
/// TrainConfig field names; `seed` sets both. Unknown or repeated keys and
/// malformed values raise InputError naming the line.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Every key with its value, one per line, in a fixed order.
std::string format_run_config(const RunConfig& cfg);

// ---------------------------------------------------------------- images

/// Binary P6 to (H, W, 3) floats in [0, 1].
Tensor<float> decode_ppm(std::string_view bytes);
Tensor<float> read_ppm(const std::filesystem::path& path);
/// (H, W, 3) floats, clamped to [0, 1] and rounded to 8 bits.
std::string encode_ppm(const Tensor<float>& image);
void write_ppm(const std::filesystem::path& path, const Tensor<float>& image);

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;
};
/// Binary P5, maxval 255.
std::string encode_pgm(const GrayImage& image);
GrayImage decode_pgm(std::string_view bytes);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

// ------------------------------------------------------------------- csv

/// Header "step,loss,accuracy"; floats with 9 significant digits.
std::string encode_trace_csv(const std::vector<TraceRow>& trace);
std::vector<TraceRow> decode_trace_csv(std::string_view text);
void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace);

// ------------------------------------------------------------------ files

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace aacv
