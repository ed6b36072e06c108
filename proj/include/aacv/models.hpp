#pragma once

// Desk-scale classifier built from augmented residual blocks, a synthetic
// translated-shapes dataset and a deterministic SGD loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "aacv/aaconv.hpp"
#include "aacv/accounting.hpp"
#include "aacv/autodiff.hpp"

namespace aacv {

struct ToyNetConfig {
  std::size_t image_size = 16;
  std::size_t channels = 3;
  std::size_t classes = 4;
  std::size_t stem_width = 16;
  std::size_t blocks = 2;
  double kappa = 0.5;
  double upsilon = 0.25;
  std::size_t heads = 4;
  PositionEncoding encoding = PositionEncoding::Relative;
  std::uint64_t seed = 42;

  void validate() const;
  /// The augmented convolution opening each residual block. Attention runs
  /// at half resolution.
  AAConvSpec block_spec() const;
};

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t batch = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 42;

  void validate() const;
};

// ------------------------------------------------------------------ dataset

enum class ShapeClass { FilledSquare = 0, HollowSquare = 1, Cross = 2, DiagonalStripe = 3 };

struct SynthOptions {
  std::size_t image_size = 16;
  std::size_t channels = 3;
  double noise = 0.1;  // Gaussian sigma; 0 gives exact {0, 1} pixels
};

struct Dataset {
  Tensor<float> images;  // (n, S, S, C)
  std::vector<int> labels;
};

/// Image `index` of the stream `seed`. A pure function of its arguments.
Dataset synth_sample(std::uint64_t seed, std::uint64_t index, const SynthOptions& opts = {});
/// Samples first..first+n-1 of the stream.
Dataset synth_dataset(std::uint64_t seed, std::size_t n, const SynthOptions& opts = {},
                      std::uint64_t first = 0);

// -------------------------------------------------------------------- model

/// Independent generator for the parameter called `name`.
std::mt19937_64 param_rng(std::uint64_t seed, std::string_view name);
/// He-uniform conv kernel (k, k, in, out).
template <typename T>
Tensor<T> he_uniform(const Shape& shape, std::mt19937_64& rng);

/// A classifier with named parameters and named non-trainable buffers
/// (batch-norm running statistics).
template <typename T>
class Model {
 public:
  virtual ~Model() = default;

  /// Logits (B, classes). In training mode batch norm uses batch statistics
  /// and updates the running averages.
  virtual Var<T> forward(Tape<T>& tape, const Tensor<T>& images, bool training) = 0;
  virtual std::size_t image_size() const = 0;
  virtual std::size_t in_channels() const = 0;

  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }
  std::map<std::string, Tensor<T>>& buffers() { return buffers_; }
  const std::map<std::string, Tensor<T>>& buffers() const { return buffers_; }

 protected:
  /// He-uniform kernel drawn from param_rng(seed, name).
  Parameter<T>& add_conv(const std::string& name, std::size_t k, std::size_t in, std::size_t out,
                         std::uint64_t seed);
  /// `prefix`/gamma, `prefix`/beta and running-statistics buffers.
  void add_batchnorm(const std::string& prefix, std::size_t channels);
  Var<T> batchnorm(Tape<T>& tape, Var<T> x, const std::string& prefix, bool training);
  /// `prefix`/w (in, classes) and `prefix`/b.
  void add_dense(const std::string& prefix, std::size_t in, std::size_t out, std::uint64_t seed);
  Var<T> dense(Tape<T>& tape, Var<T> x, const std::string& prefix);
  Var<T> param(Tape<T>& tape, const std::string& name) { return tape.parameter(params_.get(name)); }

  ParameterStore<T> params_;
  std::map<std::string, Tensor<T>> buffers_;
};

template <typename T>
class ToyNet : public Model<T> {
 public:
  explicit ToyNet(const ToyNetConfig& cfg);

  Var<T> forward(Tape<T>& tape, const Tensor<T>& images, bool training) override;
  /// As forward, capturing each block's attention weights into `probes`.
  Var<T> forward(Tape<T>& tape, const Tensor<T>& images, bool training,
                 std::vector<AttentionProbe<T>>* probes);
  std::size_t image_size() const override { return cfg_.image_size; }
  std::size_t in_channels() const override { return cfg_.channels; }
  const ToyNetConfig& config() const { return cfg_; }

 private:
  ToyNetConfig cfg_;
};

/// Layer list of the toy net; count_params on it equals the instantiated
/// parameter total.
ArchDescriptor toy_descriptor(const ToyNetConfig& cfg);

// ----------------------------------------------------------------- training

struct TraceRow {
  std::size_t step = 0;
  float loss = 0;
  float accuracy = 0;  // on the step's minibatch, before the update
};

struct TrainOptions {
  std::function<void(const TraceRow&)> on_step;
};

/// SGD with momentum and decoupled weight decay on parameters flagged
/// `decay`. Minibatch s holds samples s*batch .. s*batch+batch-1 of the
/// synthetic stream `tcfg.seed`. Throws NumericError naming the step on a
/// non-finite loss.
std::vector<TraceRow> train(Model<float>& model, const TrainConfig& tcfg,
                            const TrainOptions& opts = {});

/// Fraction of `n` held-out samples (indices from 1e9 on) classified
/// correctly in inference mode.
double evaluate(Model<float>& model, std::uint64_t seed, std::size_t n);

/// Mean of trace losses over [first, first + count).
double mean_loss(const std::vector<TraceRow>& trace, std::size_t first, std::size_t count);

// ------------------------------------------------------------ visualisation

struct PixelQuery {
  std::size_t y = 0;
  std::size_t x = 0;
};

struct AttentionMap {
  std::size_t layer = 0;
  std::size_t head = 0;
  PixelQuery query;               // in input-image coordinates
  std::size_t height = 0, width = 0;  // attention grid
  std::vector<double> weights;    // softmax row, before scaling
  std::vector<std::uint8_t> pixels;  // min-max scaled to 0..255

  std::string filename() const;
};

/// One map per augmented layer, head and query pixel. Queries are given in
/// input coordinates and mapped to the attention grid by integer scaling.
/// Throws InputError for out-of-range pixels or a mismatched image.
std::vector<AttentionMap> attention_maps(ToyNet<float>& model, const Tensor<float>& image,
                                         const std::vector<PixelQuery>& pixels);

/// Writes each map as layer{L}_head{h}_q{y}x{x}.pgm under `dir`; returns the
/// paths written.
std::vector<std::filesystem::path> dump_attention_maps(ToyNet<float>& model,
                                                       const Tensor<float>& image,
                                                       const std::vector<PixelQuery>& pixels,
                                                       const std::filesystem::path& dir);

/// Min-max scaling; a constant map becomes all 255.
std::vector<std::uint8_t> scale_to_bytes(const std::vector<double>& values);

}  // namespace aacv
