#include "aacv/models.hpp"

#include <algorithm>
#include <cmath>

#include "aacv/formats.hpp"

namespace aacv {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;

std::string block_prefix(std::size_t i) { return "block" + std::to_string(i) + "/"; }

}  // namespace

// ------------------------------------------------------------------- config

void ToyNetConfig::validate() const {
  if (image_size == 0 || channels == 0 || classes == 0 || stem_width == 0 || blocks == 0 ||
      heads == 0) {
    throw InputError("toy net: image_size, channels, classes, stem_width, blocks and heads must be positive");
  }
  if (!(upsilon >= 0.0 && upsilon <= 1.0)) throw InputError("toy net: upsilon must lie in [0, 1]");
  if (!(kappa >= 0.0)) throw InputError("toy net: kappa must be non-negative");
  try {
    block_spec().validate();
    if (encoding == PositionEncoding::Sine2D && upsilon > 0.0 && stem_width % 4 != 0) {
      throw ContractError("sine2d encoding needs stem_width divisible by 4");
    }
  } catch (const ContractError& e) {
    throw InputError(std::string("toy net: ") + e.what());
  }
}

AAConvSpec ToyNetConfig::block_spec() const {
  AAConvSpec s;
  s.kernel = 3;
  s.in_channels = stem_width;
  s.out_channels = stem_width;
  s.kappa = kappa;
  s.upsilon = upsilon;
  s.heads = heads;
  s.stride = 1;
  s.downsample_attention = true;
  s.encoding = encoding;
  return s;
}

void TrainConfig::validate() const {
  if (steps == 0 || batch == 0) throw InputError("train: steps and batch must be positive");
  if (!(lr >= 0.0) || !(momentum >= 0.0 && momentum < 1.0) || !(weight_decay >= 0.0)) {
    throw InputError("train: need lr >= 0, 0 <= momentum < 1, weight_decay >= 0");
  }
}

// ------------------------------------------------------------------ dataset

Dataset synth_sample(std::uint64_t seed, std::uint64_t index, const SynthOptions& opts) {
  const std::size_t s = opts.image_size;
  if (s == 0 || opts.channels == 0) throw InputError("synth: image size and channels must be positive");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);

  const int label = static_cast<int>(std::uniform_int_distribution<int>(0, 3)(rng));
  const std::size_t size = std::min<std::size_t>(s, std::max<std::size_t>(3, (3 * s) / 8));
  const std::size_t oy = std::uniform_int_distribution<std::size_t>(0, s - size)(rng);
  const std::size_t ox = std::uniform_int_distribution<std::size_t>(0, s - size)(rng);

  auto on = [&](std::size_t i, std::size_t j) {
    switch (static_cast<ShapeClass>(label)) {
      case ShapeClass::FilledSquare: return true;
      case ShapeClass::HollowSquare: return i == 0 || j == 0 || i + 1 == size || j + 1 == size;
      case ShapeClass::Cross: {
        const std::size_t lo = (size - 1) / 2, hi = size / 2;
        return (i >= lo && i <= hi) || (j >= lo && j <= hi);
      }
      case ShapeClass::DiagonalStripe: return i == j || i == j + 1;
    }
    return false;
  };

  Dataset d{Tensor<float>(Shape{1, s, s, opts.channels}), {label}};
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      if (!on(i, j)) continue;
      for (std::size_t c = 0; c < opts.channels; ++c) d.images.at(0, oy + i, ox + j, c) = 1.0f;
    }
  }
  if (opts.noise > 0.0) {
    std::normal_distribution<double> noise(0.0, opts.noise);
    for (auto& v : d.images.data()) v = static_cast<float>(v + noise(rng));
  }
  return d;
}

Dataset synth_dataset(std::uint64_t seed, std::size_t n, const SynthOptions& opts,
                      std::uint64_t first) {
  if (n == 0) throw InputError("synth: need at least one sample");
  const std::size_t per = opts.image_size * opts.image_size * opts.channels;
  Dataset d{Tensor<float>(Shape{n, opts.image_size, opts.image_size, opts.channels}), {}};
  d.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto one = synth_sample(seed, first + i, opts);
    std::copy(one.images.data().begin(), one.images.data().end(), d.images.raw() + i * per);
    d.labels.push_back(one.labels[0]);
  }
  return d;
}

// -------------------------------------------------------------------- model

std::mt19937_64 param_rng(std::uint64_t seed, std::string_view name) {
  // FNV-1a keeps the stream of each parameter independent of creation order.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

template <typename T>
Tensor<T> he_uniform(const Shape& shape, std::mt19937_64& rng) {
  if (shape.size() != 4) throw ShapeError("he_uniform: expected a (k, k, in, out) shape");
  const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] * shape[1] * shape[2]));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Parameter<T>& Model<T>::add_conv(const std::string& name, std::size_t k, std::size_t in,
                                 std::size_t out, std::uint64_t seed) {
  auto rng = param_rng(seed, name);
  return params_.add(name, he_uniform<T>(Shape{k, k, in, out}, rng));
}

template <typename T>
void Model<T>::add_batchnorm(const std::string& prefix, std::size_t channels) {
  params_.add(prefix + "/gamma", Tensor<T>(Shape{channels}, T{1}), false);
  params_.add(prefix + "/beta", Tensor<T>(Shape{channels}, T{0}), false);
  buffers_[prefix + "/running_mean"] = Tensor<T>(Shape{channels}, T{0});
  buffers_[prefix + "/running_var"] = Tensor<T>(Shape{channels}, T{1});
}

template <typename T>
Var<T> Model<T>::batchnorm(Tape<T>& tape, Var<T> x, const std::string& prefix, bool training) {
  auto gamma = param(tape, prefix + "/gamma");
  auto beta = param(tape, prefix + "/beta");
  auto& mean = buffers_.at(prefix + "/running_mean");
  auto& var = buffers_.at(prefix + "/running_var");
  if (!training) {
    return ad::batchnorm_eval<T>(x, gamma, beta, mean.data(), var.data(), static_cast<T>(kBnEps));
  }
  BatchStats<T> stats;
  auto y = ad::batchnorm_train(x, gamma, beta, static_cast<T>(kBnEps), &stats);
  const T m = static_cast<T>(kBnMomentum);
  for (std::size_t c = 0; c < mean.size(); ++c) {
    mean[c] = m * mean[c] + (T{1} - m) * stats.mean[c];
    var[c] = m * var[c] + (T{1} - m) * stats.var[c];
  }
  return y;
}

template <typename T>
void Model<T>::add_dense(const std::string& prefix, std::size_t in, std::size_t out,
                         std::uint64_t seed) {
  auto rng = param_rng(seed, prefix + "/w");
  const double limit = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<T> w(Shape{in, out});
  for (auto& v : w.data()) v = static_cast<T>(dist(rng));
  params_.add(prefix + "/w", std::move(w));
  params_.add(prefix + "/b", Tensor<T>(Shape{out}, T{0}), false);
}

template <typename T>
Var<T> Model<T>::dense(Tape<T>& tape, Var<T> x, const std::string& prefix) {
  return ad::dense(x, param(tape, prefix + "/w"), param(tape, prefix + "/b"));
}

template <typename T>
ToyNet<T>::ToyNet(const ToyNetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t w = cfg_.stem_width;
  this->add_conv("stem/conv", 3, cfg_.channels, w, cfg_.seed);
  this->add_batchnorm("stem/bn", w);
  const auto spec = cfg_.block_spec();
  const auto [ah, aw] = spec.attention_dims(cfg_.image_size, cfg_.image_size);
  for (std::size_t i = 0; i < cfg_.blocks; ++i) {
    const std::string p = block_prefix(i);
    if (spec.conv_channels() > 0) this->add_conv(p + "aaconv/conv", 3, w, spec.conv_channels(), cfg_.seed);
    if (spec.has_attention()) {
      auto rng = param_rng(cfg_.seed, p + "aaconv/attention");
      auto a = init_attention_weights<T>(spec.attention(), w, ah, aw, rng);
      this->params_.add(p + "aaconv/qkv", std::move(a.qkv));
      this->params_.add(p + "aaconv/out", std::move(a.out));
      if (a.rel) {
        this->params_.add(p + "aaconv/rel_height", std::move(a.rel->height), false);
        this->params_.add(p + "aaconv/rel_width", std::move(a.rel->width), false);
      }
    }
    this->add_batchnorm(p + "bn1", w);
    this->add_conv(p + "conv2", 3, w, w, cfg_.seed);
    this->add_batchnorm(p + "bn2", w);
  }
  this->add_dense("head/dense", w, cfg_.classes, cfg_.seed);
}

template <typename T>
Var<T> ToyNet<T>::forward(Tape<T>& tape, const Tensor<T>& images, bool training) {
  return forward(tape, images, training, nullptr);
}

template <typename T>
Var<T> ToyNet<T>::forward(Tape<T>& tape, const Tensor<T>& images, bool training,
                          std::vector<AttentionProbe<T>>* probes) {
  const auto d = dims4(images, "toy net");
  if (d.h != cfg_.image_size || d.w != cfg_.image_size || d.c != cfg_.channels) {
    throw InputError("toy net: expected images of " + std::to_string(cfg_.image_size) + "x" +
                     std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.channels) +
                     ", got " + to_string(images.shape()));
  }
  const auto spec = cfg_.block_spec();
  auto x = tape.constant(images);
  auto h = ad::relu(this->batchnorm(tape, ad::conv2d(x, this->param(tape, "stem/conv"), 1), "stem/bn", training));
  if (probes) probes->clear();
  for (std::size_t i = 0; i < cfg_.blocks; ++i) {
    const std::string p = block_prefix(i);
    AAConvVars<T> vars;
    if (spec.conv_channels() > 0) vars.conv = this->param(tape, p + "aaconv/conv");
    AttentionProbe<T>* probe = nullptr;
    if (spec.has_attention()) {
      AttentionVars<T> a{this->param(tape, p + "aaconv/qkv"), this->param(tape, p + "aaconv/out"),
                         std::nullopt, std::nullopt};
      if (spec.encoding == PositionEncoding::Relative) {
        a.rel_height = this->param(tape, p + "aaconv/rel_height");
        a.rel_width = this->param(tape, p + "aaconv/rel_width");
      }
      vars.attention = a;
      if (probes) probe = &probes->emplace_back();
    }
    auto a = ad::relu(this->batchnorm(tape, ad::augmented_conv2d(h, spec, vars, probe), p + "bn1", training));
    auto b = this->batchnorm(tape, ad::conv2d(a, this->param(tape, p + "conv2"), 1), p + "bn2", training);
    h = ad::relu(ad::add(b, h));
  }
  return this->dense(tape, ad::global_avg_pool(h), "head/dense");
}

ArchDescriptor toy_descriptor(const ToyNetConfig& cfg) {
  cfg.validate();
  const std::size_t w = cfg.stem_width;
  DescriptorBuilder b("toy", cfg.image_size, cfg.channels, cfg.classes);
  b.conv("stem/conv", w, 3);
  b.batchnorm("stem/bn");
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    const std::string p = block_prefix(i);
    const auto spec = cfg.block_spec();
    if (spec.has_attention()) b.aaconv(p + "aaconv", spec);
    else b.conv(p + "aaconv/conv", w, 3);
    b.batchnorm(p + "bn1");
    b.conv(p + "conv2", w, 3);
    b.batchnorm(p + "bn2");
    b.add(p + "add");
  }
  b.global_pool("head/pool");
  b.dense("head/dense", cfg.classes);
  return b.finish();
}

// ----------------------------------------------------------------- training

namespace {

float batch_accuracy(const Tensor<float>& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.raw() + i * k;
    const auto best = static_cast<int>(std::max_element(row, row + k) - row);
    if (best == labels[i]) ++correct;
  }
  return static_cast<float>(correct) / static_cast<float>(n);
}

}  // namespace

std::vector<TraceRow> train(Model<float>& model, const TrainConfig& tcfg, const TrainOptions& opts) {
  tcfg.validate();
  auto& params = model.parameters();
  std::vector<Tensor<float>> velocity;
  for (const auto& p : params) velocity.emplace_back(p.value.shape());

  const SynthOptions data{model.image_size(), model.in_channels(), 0.1};
  const auto lr = static_cast<float>(tcfg.lr);
  const auto mu = static_cast<float>(tcfg.momentum);
  const auto wd = static_cast<float>(tcfg.weight_decay);

  std::vector<TraceRow> trace;
  trace.reserve(tcfg.steps);
  for (std::size_t step = 0; step < tcfg.steps; ++step) {
    auto batch = synth_dataset(tcfg.seed, tcfg.batch, data, step * tcfg.batch);
    auto diverged = [&](const std::string& why) {
      return NumericError("training diverged: non-finite loss at step " + std::to_string(step) + why);
    };
    Tape<float> tape;
    TraceRow row{step, 0.0f, 0.0f};
    try {
      auto logits = model.forward(tape, batch.images, true);
      auto loss = ad::cross_entropy(logits, batch.labels);
      row.loss = loss.value()[0];
      if (!std::isfinite(row.loss)) throw diverged("");
      row.accuracy = batch_accuracy(logits.value(), batch.labels);
      tape.backward(loss);
    } catch (const NumericError& e) {
      // Kernels reject NaN inputs before the loss itself is formed.
      if (std::string_view(e.what()).starts_with("training diverged")) throw;
      throw diverged(std::string(" (") + e.what() + ")");
    }

    std::size_t i = 0;
    for (auto& p : params) {
      auto& v = velocity[i++];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        v[k] = mu * v[k] + p.grad[k];
        const float decay = p.decay ? lr * wd * p.value[k] : 0.0f;
        p.value[k] = p.value[k] - lr * v[k] - decay;
      }
    }
    trace.push_back(row);
    if (opts.on_step) opts.on_step(row);
  }
  return trace;
}

double evaluate(Model<float>& model, std::uint64_t seed, std::size_t n) {
  const SynthOptions data{model.image_size(), model.in_channels(), 0.1};
  constexpr std::uint64_t kHeldOut = 1'000'000'000ULL;
  std::size_t correct = 0;
  for (std::size_t first = 0; first < n; first += 64) {
    const std::size_t m = std::min<std::size_t>(64, n - first);
    auto batch = synth_dataset(seed, m, data, kHeldOut + first);
    Tape<float> tape;
    auto logits = model.forward(tape, batch.images, false);
    correct += static_cast<std::size_t>(
        std::lround(batch_accuracy(logits.value(), batch.labels) * static_cast<float>(m)));
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double mean_loss(const std::vector<TraceRow>& trace, std::size_t first, std::size_t count) {
  if (count == 0 || first + count > trace.size()) {
    throw ContractError("mean_loss: window exceeds trace of " + std::to_string(trace.size()) + " rows");
  }
  double s = 0;
  for (std::size_t i = first; i < first + count; ++i) s += trace[i].loss;
  return s / static_cast<double>(count);
}

// ------------------------------------------------------------ visualisation

std::vector<std::uint8_t> scale_to_bytes(const std::vector<double>& values) {
  std::vector<std::uint8_t> out(values.size(), 255);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double span = *hi - *lo;
  if (!(span > 0.0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround((values[i] - *lo) / span * 255.0));
  }
  return out;
}

std::string AttentionMap::filename() const {
  return "layer" + std::to_string(layer) + "_head" + std::to_string(head) + "_q" +
         std::to_string(query.y) + "x" + std::to_string(query.x) + ".pgm";
}

std::vector<AttentionMap> attention_maps(ToyNet<float>& model, const Tensor<float>& image,
                                         const std::vector<PixelQuery>& pixels) {
  const std::size_t s = model.image_size(), c = model.in_channels();
  Tensor<float> batch = image;
  if (image.rank() == 3) batch = image.reshaped(Shape{1, image.dim(0), image.dim(1), image.dim(2)});
  if (batch.rank() != 4 || batch.dim(0) != 1 || batch.dim(1) != s || batch.dim(2) != s || batch.dim(3) != c) {
    throw InputError("input image is " + to_string(image.shape()) + ", model expects " +
                     std::to_string(s) + "x" + std::to_string(s) + "x" + std::to_string(c));
  }
  for (const auto& p : pixels) {
    if (p.y >= s || p.x >= s) {
      throw InputError("pixel (" + std::to_string(p.y) + "," + std::to_string(p.x) +
                       ") outside the " + std::to_string(s) + "x" + std::to_string(s) + " image");
    }
  }
  std::vector<AttentionProbe<float>> probes;
  Tape<float> tape;
  model.forward(tape, batch, false, &probes);

  std::vector<AttentionMap> maps;
  for (std::size_t layer = 0; layer < probes.size(); ++layer) {
    const auto& pr = probes[layer];
    const std::size_t heads = pr.weights.dim(1), hw = pr.height * pr.width;
    for (std::size_t h = 0; h < heads; ++h) {
      for (const auto& q : pixels) {
        AttentionMap m;
        m.layer = layer;
        m.head = h;
        m.query = q;
        m.height = pr.height;
        m.width = pr.width;
        const std::size_t qy = q.y * pr.height / s, qx = q.x * pr.width / s;
        const float* row = pr.weights.raw() + (h * hw + qy * pr.width + qx) * hw;
        m.weights.assign(row, row + hw);
        m.pixels = scale_to_bytes(m.weights);
        maps.push_back(std::move(m));
      }
    }
  }
  return maps;
}

std::vector<std::filesystem::path> dump_attention_maps(ToyNet<float>& model,
                                                       const Tensor<float>& image,
                                                       const std::vector<PixelQuery>& pixels,
                                                       const std::filesystem::path& dir) {
  auto maps = attention_maps(model, image, pixels);
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const auto& m : maps) {
    const auto path = dir / m.filename();
    write_pgm(path, GrayImage{m.width, m.height, m.pixels});
    written.push_back(path);
  }
  return written;
}

template Tensor<float> he_uniform(const Shape&, std::mt19937_64&);
template Tensor<double> he_uniform(const Shape&, std::mt19937_64&);
template class Model<float>;
template class Model<double>;
template class ToyNet<float>;
template class ToyNet<double>;

}  // namespace aacv
