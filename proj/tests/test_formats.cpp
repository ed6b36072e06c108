#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "aacv/formats.hpp"

using namespace aacv;

namespace {

std::string expect_input_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const InputError& e) {
    return e.what();
  }
  FAIL("expected InputError");
  return {};
}

std::filesystem::path temp(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("aacv_test_" + name);
}

}  // namespace

TEST_CASE("weights layout byte by byte") {
  NamedTensors t;
  t.emplace("b", Tensor<float>({2}, std::vector<float>{1.0f, -2.5f}));
  t.emplace("a", Tensor<float>::scalar(0.5f));
  const auto bytes = encode_weights(t);
  std::string expect("AACV\x01", 5);
  // "a": len 1, rank 0, one float
  expect += std::string("\x01\x00" "a" "\x00", 4);
  float v = 0.5f;
  expect.append(reinterpret_cast<const char*>(&v), 4);
  // "b": len 1, rank 1, dim 2
  expect += std::string("\x01\x00" "b" "\x01" "\x02\x00\x00\x00", 8);
  for (float f : {1.0f, -2.5f}) expect.append(reinterpret_cast<const char*>(&f), 4);
  CHECK(bytes == expect);
}

TEST_CASE("weights round trip is bit exact") {
  ToyNet<float> net(ToyNetConfig{});
  auto w = collect_weights(net);
  CHECK(w.count("stem/bn/running_mean") == 1);
  // Include values that must survive bit-for-bit.
  w.at("head/dense/b")[0] = -0.0f;
  w.at("head/dense/b")[1] = std::numeric_limits<float>::denorm_min();
  const auto path = temp("weights.bin");
  save_weights(path, w);
  auto back = load_weights(path);
  REQUIRE(back.size() == w.size());
  for (const auto& [name, t] : w) {
    CAPTURE(name);
    const auto& u = back.at(name);
    REQUIRE(u.shape() == t.shape());
    CHECK(std::memcmp(u.raw(), t.raw(), t.size() * sizeof(float)) == 0);
  }
  CHECK(encode_weights(back) == read_file(path));

  ToyNet<float> other(ToyNetConfig{.seed = 7});
  apply_weights(other, back);
  CHECK(encode_weights(collect_weights(other)) == encode_weights(back));
  std::filesystem::remove(path);
}

TEST_CASE("malformed weights are rejected") {
  NamedTensors t;
  t.emplace("w", Tensor<float>({3}, 1.0f));
  const auto good = encode_weights(t);
  CHECK(expect_input_error([&] { decode_weights("ABCD\x01"); }).find("magic") != std::string::npos);
  CHECK(expect_input_error([&] { decode_weights(std::string("AACV\x02", 5)); }).find("version") != std::string::npos);
  CHECK(expect_input_error([&] { decode_weights(good.substr(0, good.size() - 1)); }).find("truncated") !=
        std::string::npos);
  CHECK(expect_input_error([&] { decode_weights(good + good.substr(5)); }).find("repeated") != std::string::npos);
  CHECK(expect_input_error([&] { decode_weights(good + "x"); }).find("truncated") != std::string::npos);
}

TEST_CASE("apply_weights demands exact names and shapes") {
  ToyNet<float> net(ToyNetConfig{});
  auto w = collect_weights(net);
  auto missing = w;
  missing.erase("head/dense/w");
  CHECK(expect_input_error([&] { apply_weights(net, missing); }).find("missing") != std::string::npos);
  auto extra = w;
  extra.emplace("bogus", Tensor<float>({1}));
  CHECK(expect_input_error([&] { apply_weights(net, extra); }).find("bogus") != std::string::npos);
  auto reshaped = w;
  reshaped.at("head/dense/b") = Tensor<float>({5});
  CHECK(expect_input_error([&] { apply_weights(net, reshaped); }).find("expects") != std::string::npos);
}

TEST_CASE("run config parsing") {
  auto c = parse_run_config("# comment\n kappa = 1  # trailing\nupsilon=1\nseed = 9\nsteps = 12\nencoding = none\n");
  CHECK(c.net.kappa == 1.0);
  CHECK(c.net.upsilon == 1.0);
  CHECK(c.net.seed == 9);
  CHECK(c.train.seed == 9);
  CHECK(c.train.steps == 12);
  CHECK(c.net.encoding == PositionEncoding::None);
  CHECK(c.net.image_size == 16);

  CHECK(expect_input_error([] { parse_run_config("kappa = 1\n\nfoo = 2\n"); }).find("line 3") != std::string::npos);
  CHECK(expect_input_error([] { parse_run_config("steps = 1\nsteps = 2\n"); }).find("line 2") != std::string::npos);
  CHECK(expect_input_error([] { parse_run_config("lr = fast\n"); }).find("line 1") != std::string::npos);
  CHECK(expect_input_error([] { parse_run_config("steps\n"); }).find("line 1") != std::string::npos);
  CHECK(expect_input_error([] { parse_run_config("encoding = rotary\n"); }).find("line 1") != std::string::npos);
  CHECK_THROWS_AS(parse_run_config("upsilon = 2\n"), InputError);
}

TEST_CASE("run config formatting round trips") {
  RunConfig c;
  c.net.kappa = 0.3;
  c.train.lr = 0.125;
  c.net.encoding = PositionEncoding::Sine2D;
  const auto text = format_run_config(c);
  const auto back = parse_run_config(text);
  CHECK(format_run_config(back) == text);
  CHECK(back.net.kappa == 0.3);
  CHECK(back.net.encoding == PositionEncoding::Sine2D);
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"default.cfg", "fully_attentional.cfg"}) {
    CAPTURE(name);
    auto c = load_run_config(std::filesystem::path(AACV_SOURCE_DIR) / "configs" / name);
    CHECK(c.train.steps == 500);
    CHECK(c.net.seed == 42);
  }
}

TEST_CASE("ppm round trip and errors") {
  Tensor<float> img({2, 3, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = float(i) / 17.0f;
  img[0] = -1.0f;  // clamps
  const auto bytes = encode_ppm(img);
  CHECK(bytes.starts_with("P6\n3 2\n255\n"));
  auto back = decode_ppm(bytes);
  CHECK(back.shape() == Shape{2, 3, 3});
  CHECK(back[0] == 0.0f);
  for (std::size_t i = 1; i < img.size(); ++i) CHECK(std::abs(back[i] - img[i]) <= 0.5f / 255.0f + 1e-7f);
  CHECK(encode_ppm(back) == bytes);
  CHECK(decode_ppm("P6\n# note\n1 1\n255\n\x10\x20\x30")[2] == doctest::Approx(48.0 / 255.0));
  CHECK_THROWS_AS(decode_ppm("P5\n1 1\n255\n\x10"), InputError);
  CHECK_THROWS_AS(decode_ppm("P6\n1 1\n255\n\x10"), InputError);
  CHECK_THROWS_AS(decode_ppm("P6\n1 1\n65535\n"), InputError);
}

TEST_CASE("pgm round trip") {
  GrayImage g{3, 2, {0, 10, 20, 30, 40, 255}};
  const auto bytes = encode_pgm(g);
  CHECK(bytes == std::string("P5\n3 2\n255\n") + std::string("\x00\x0a\x14\x1e\x28\xff", 6));
  auto back = decode_pgm(bytes);
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.pixels == g.pixels);
  CHECK_THROWS_AS(encode_pgm(GrayImage{2, 2, {1}}), ShapeError);
}

TEST_CASE("trace csv is stable and round trips") {
  std::vector<TraceRow> rows{{0, 1.3862944f, 0.25f}, {1, 0.1f, 1.0f}};
  const auto text = encode_trace_csv(rows);
  CHECK(text == "step,loss,accuracy\n0,1.38629436,0.25\n1,0.100000001,1\n");
  auto back = decode_trace_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].loss == rows[0].loss);
  CHECK(back[1].loss == rows[1].loss);
  CHECK(encode_trace_csv(back) == text);
  CHECK(expect_input_error([] { decode_trace_csv("step,loss,accuracy\n0,1,2\nbad\n"); }).find("line 3") !=
        std::string::npos);
  CHECK_THROWS_AS(decode_trace_csv("loss\n"), InputError);
}
