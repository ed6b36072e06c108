#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>

#include "aacv/formats.hpp"
#include "aacv/models.hpp"
#include "aacv/verify.hpp"

using namespace aacv;

namespace {

// The v=0 toy net written out by hand with plain convolutions and the same
// parameter names, so initialisation draws from the same streams.
class PlainConvNet : public Model<float> {
 public:
  explicit PlainConvNet(const ToyNetConfig& c) : cfg_(c) {
    const std::size_t w = c.stem_width;
    add_conv("stem/conv", 3, c.channels, w, c.seed);
    add_batchnorm("stem/bn", w);
    for (std::size_t i = 0; i < c.blocks; ++i) {
      const std::string p = "block" + std::to_string(i) + "/";
      add_conv(p + "aaconv/conv", 3, w, w, c.seed);
      add_batchnorm(p + "bn1", w);
      add_conv(p + "conv2", 3, w, w, c.seed);
      add_batchnorm(p + "bn2", w);
    }
    add_dense("head/dense", w, c.classes, c.seed);
  }

  Var<float> forward(Tape<float>& t, const Tensor<float>& images, bool training) override {
    auto h = ad::relu(batchnorm(t, ad::conv2d(t.constant(images), param(t, "stem/conv"), 1), "stem/bn", training));
    for (std::size_t i = 0; i < cfg_.blocks; ++i) {
      const std::string p = "block" + std::to_string(i) + "/";
      auto a = ad::relu(batchnorm(t, ad::conv2d(h, param(t, p + "aaconv/conv"), 1), p + "bn1", training));
      auto b = batchnorm(t, ad::conv2d(a, param(t, p + "conv2"), 1), p + "bn2", training);
      h = ad::relu(ad::add(b, h));
    }
    return dense(t, ad::global_avg_pool(h), "head/dense");
  }
  std::size_t image_size() const override { return cfg_.image_size; }
  std::size_t in_channels() const override { return cfg_.channels; }

 private:
  ToyNetConfig cfg_;
};

TrainConfig short_run(std::size_t steps = 8) {
  TrainConfig t;
  t.steps = steps;
  t.batch = 8;
  return t;
}

bool same_trace(const std::vector<TraceRow>& a, const std::vector<TraceRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].step != b[i].step || a[i].loss != b[i].loss || a[i].accuracy != b[i].accuracy) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("synthetic samples are a pure function of seed and index") {
  auto a = synth_sample(3, 17), b = synth_sample(3, 17), c = synth_sample(3, 18);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK_FALSE(a.images == c.images);
  auto batch = synth_dataset(3, 4, {}, 16);
  CHECK(batch.images.shape() == Shape{4, 16, 16, 3});
  CHECK(batch.labels[1] == a.labels[0]);
  for (std::size_t i = 0; i < 16 * 16 * 3; ++i) CHECK(batch.images[16 * 16 * 3 + i] == a.images[i]);
  CHECK_THROWS_AS(synth_dataset(3, 0), InputError);
}

TEST_CASE("class histogram over 4000 samples") {
  auto d = synth_dataset(42, 4000);
  std::array<int, 4> hist{};
  for (int l : d.labels) ++hist.at(std::size_t(l));
  for (int h : hist) {
    CHECK(h >= 900);
    CHECK(h <= 1100);
  }
}

TEST_CASE("zero-noise images are binary and every class draws a shape") {
  SynthOptions o;
  o.noise = 0;
  for (std::uint64_t i = 0; i < 40; ++i) {
    auto s = synth_sample(9, i, o);
    double on = 0;
    for (float v : s.images.data()) {
      CHECK((v == 0.0f || v == 1.0f));
      on += v;
    }
    CHECK(on > 0);
  }
}

TEST_CASE("toy config validation") {
  ToyNetConfig c;
  CHECK_NOTHROW(c.validate());
  c.upsilon = 1.5;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = {};
  c.blocks = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = {};
  c.heads = 32;
  CHECK_THROWS_AS(c.validate(), InputError);
  TrainConfig t;
  t.momentum = 1.0;
  CHECK_THROWS_AS(t.validate(), InputError);
}

TEST_CASE("fully attentional toy net has no convolution inside the blocks") {
  ToyNetConfig c;
  c.kappa = c.upsilon = 1.0;
  ToyNet<float> net(c);
  CHECK(net.parameters().find("block0/aaconv/conv") == nullptr);
  CHECK(net.parameters().find("block0/aaconv/qkv") != nullptr);
  c.kappa = c.upsilon = 0.0;
  ToyNet<float> plain(c);
  CHECK(plain.parameters().find("block0/aaconv/qkv") == nullptr);
}

TEST_CASE("every parameter gets a finite, non-zero gradient at step 0") {
  for (auto enc : {PositionEncoding::Relative, PositionEncoding::None}) {
    ToyNetConfig c;
    c.encoding = enc;
    ToyNet<float> net(c);
    auto batch = synth_dataset(1, 16);
    Tape<float> tape;
    tape.backward(ad::cross_entropy(net.forward(tape, batch.images, true), batch.labels));
    for (const auto& p : net.parameters()) {
      CAPTURE(p.name);
      double norm = 0;
      for (float g : p.grad.data()) {
        REQUIRE(std::isfinite(g));
        norm += double(g) * g;
      }
      CHECK(norm > 0);
    }
    if (enc == PositionEncoding::Relative) CHECK(net.parameters().find("block1/aaconv/rel_width") != nullptr);
  }
}

TEST_CASE("weight decay spares batch-norm affine terms, relative tables and biases") {
  ToyNet<float> net(ToyNetConfig{});
  for (const auto& p : net.parameters()) {
    CAPTURE(p.name);
    const bool exempt = p.name.find("/bn") != std::string::npos || p.name.find("rel_") != std::string::npos ||
                        p.name.ends_with("/b");
    CHECK(p.decay == !exempt);
  }
}

TEST_CASE("upsilon = 0 toy net trains exactly like a hand-assembled conv net") {
  ToyNetConfig c;
  c.kappa = c.upsilon = 0.0;
  ToyNet<float> toy(c);
  PlainConvNet plain(c);
  auto a = train(toy, short_run());
  auto b = train(plain, short_run());
  CHECK(same_trace(a, b));
  CHECK(collect_weights(toy) == collect_weights(plain));
}

TEST_CASE("training is deterministic") {
  ToyNet<float> n1(ToyNetConfig{}), n2(ToyNetConfig{});
  auto a = train(n1, short_run());
  auto b = train(n2, short_run());
  CHECK(same_trace(a, b));
  CHECK(encode_weights(collect_weights(n1)) == encode_weights(collect_weights(n2)));
}

TEST_CASE("lr = 0 leaves the parameters untouched") {
  ToyNet<float> net(ToyNetConfig{}), fresh(ToyNetConfig{});
  auto t = short_run(6);
  t.lr = 0;
  auto trace = train(net, t);
  for (const auto& p : net.parameters()) CHECK(p.value == fresh.parameters().get(p.name).value);
  // Each step's loss is the untrained model's loss on that minibatch.
  for (const auto& row : trace) {
    auto batch = synth_dataset(t.seed, t.batch, {}, row.step * t.batch);
    Tape<float> tape;
    CHECK(ad::cross_entropy(fresh.forward(tape, batch.images, true), batch.labels).value()[0] == row.loss);
  }
}

TEST_CASE("divergence aborts with the failing step") {
  ToyNet<float> net(ToyNetConfig{});
  auto t = short_run(50);
  t.lr = 1e30;
  try {
    train(net, t);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    INFO(std::string(e.what()));
    CHECK(std::string(e.what()).find("non-finite loss at step") != std::string::npos);
  }
}

TEST_CASE("on_step sees every row and mean_loss windows") {
  ToyNet<float> net(ToyNetConfig{});
  std::vector<TraceRow> seen;
  TrainOptions o;
  o.on_step = [&](const TraceRow& r) { seen.push_back(r); };
  auto trace = train(net, short_run(4), o);
  CHECK(same_trace(trace, seen));
  CHECK(mean_loss(trace, 1, 2) == doctest::Approx((trace[1].loss + trace[2].loss) / 2.0));
  CHECK_THROWS_AS(mean_loss(trace, 3, 2), ContractError);
  const double acc = evaluate(net, 42, 70);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}

TEST_CASE("attention maps are softmax rows, one per layer, head and pixel") {
  ToyNetConfig c;
  ToyNet<float> net(c);
  auto img = synth_sample(5, 0).images.reshaped({16, 16, 3});
  const std::vector<PixelQuery> px{{0, 0}, {7, 9}, {15, 15}};
  auto maps = attention_maps(net, img, px);
  CHECK(maps.size() == c.blocks * c.heads * px.size());
  for (const auto& m : maps) {
    CHECK(m.height == 8);
    CHECK(m.width == 8);
    double s = 0;
    for (double v : m.weights) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-5);
    CHECK(m.pixels.size() == 64);
    CHECK(*std::max_element(m.pixels.begin(), m.pixels.end()) == 255);
    CHECK(*std::min_element(m.pixels.begin(), m.pixels.end()) == 0);
  }
  CHECK(maps[1].filename() == "layer0_head0_q7x9.pgm");
  CHECK_THROWS_AS(attention_maps(net, img, {{16, 0}}), InputError);
  CHECK_THROWS_AS(attention_maps(net, Tensor<float>({8, 8, 3}), px), InputError);
}

TEST_CASE("single-pixel attention dumps as 255") {
  CHECK(scale_to_bytes({1.0}) == std::vector<std::uint8_t>{255});
  ToyNetConfig c;
  c.image_size = 1;
  ToyNet<float> net(c);
  auto maps = attention_maps(net, Tensor<float>({1, 1, 3}, 0.5f), {{0, 0}});
  REQUIRE(maps.size() == c.blocks * c.heads);
  for (const auto& m : maps) {
    CHECK(m.weights == std::vector<double>{1.0});
    CHECK(m.pixels == std::vector<std::uint8_t>{255});
  }
}

TEST_CASE("dump writes P5 files named by layer, head and pixel") {
  ToyNetConfig c;
  ToyNet<float> net(c);
  const auto dir = std::filesystem::temp_directory_path() / "aacv_test_dump";
  std::filesystem::remove_all(dir);
  auto paths = dump_attention_maps(net, synth_sample(5, 1).images.reshaped({16, 16, 3}), {{2, 3}, {9, 1}}, dir);
  CHECK(paths.size() == 2 * 4 * 2);
  for (const auto& p : paths) {
    const auto bytes = read_file(p);
    CHECK(bytes.starts_with("P5\n8 8\n255\n"));
    CHECK(bytes.size() == std::string("P5\n8 8\n255\n").size() + 64);
  }
  CHECK(std::filesystem::exists(dir / "layer1_head3_q9x1.pgm"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("verification suites pass and catch a corrupted rel_to_abs") {
  verify::Options o;
  o.seed = 3;
  o.random_configs = 20;
  auto ok = verify::run(verify::Suite::All, o);
  for (const auto& p : ok) {
    CAPTURE(p.line());
    CHECK(p.pass);
  }
  detail::set_rel_to_abs_fault(true);
  auto bad = verify::run(verify::Suite::Oracle, o);
  detail::set_rel_to_abs_fault(false);
  CHECK_FALSE(verify::all_pass(bad));
  CHECK_THROWS_AS(verify::parse_suite("fast"), InputError);
}
