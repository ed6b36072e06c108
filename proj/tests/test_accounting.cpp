#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <random>

#include "aacv/accounting.hpp"
#include "aacv/models.hpp"

using namespace aacv;

namespace {

ArchDescriptor arch(const std::string& family, bool augmented, double kappa = 0, double upsilon = 0) {
  auto o = default_descriptor_options(family);
  o.augmented = augmented;
  if (augmented && kappa > 0) {
    o.kappa = kappa;
    o.upsilon = upsilon;
  }
  return build_descriptor(family, o);
}

bool within(double got, double want, double rel) { return std::abs(got - want) <= rel * want; }

AAConvSpec small_spec() {
  AAConvSpec s;
  s.in_channels = 8;
  s.out_channels = 8;
  s.kappa = s.upsilon = 0.5;
  s.heads = 2;
  return s;
}

}  // namespace

TEST_CASE("resnet50 layer inventory") {
  auto base = arch("resnet50", false);
  CHECK(base.count(LayerKind::Conv) == 53);
  CHECK(base.count(LayerKind::AAConv) == 0);
  CHECK(base.count(LayerKind::Dense) == 1);
  auto aug = arch("resnet50", true, 0.25, 0.25);
  CHECK(aug.count(LayerKind::AAConv) == 13);
  CHECK(aug.count(LayerKind::Conv) == 40);
  CHECK_NOTHROW(aug.validate());
}

TEST_CASE("hand-enumerated small descriptor") {
  DescriptorBuilder b("hand", 4, 8, 3);
  b.aaconv("aa", small_spec());
  b.batchnorm("bn");
  b.global_pool("gap");
  b.dense("fc", 3);
  auto d = b.finish();
  // conv 3*3*8*4, qkv 8*12, out 4*4, rel (2*(4+4)-2)*2, bn 16, dense 8*3+3
  CHECK(count_params(d) == 288 + 96 + 16 + 28 + 16 + 27);
  // conv, qkv, QK^T, AV, relative, out projection, dense; 2 per MAC
  CHECK(count_flops(d) == 9216 + 3072 + 2048 + 2048 + 1792 + 512 + 48);
  const auto c = attention_cost(d.layers[0]);
  CHECK(c.params == 96 + 16 + 28);
  CHECK(c.logits_flops == 2048);
  CHECK(c.relative_flops == 1792);
}

TEST_CASE("published parameter counts") {
  CHECK(within(double(count_params(arch("resnet50", false))), 25.6e6, 0.01));
  const double kv[] = {0.25, 0.5, 0.75, 1.0}, want[] = {24.3e6, 22.3e6, 20.7e6, 19.4e6};
  for (int i = 0; i < 4; ++i) {
    CAPTURE(kv[i]);
    CHECK(within(double(count_params(arch("resnet50", true, kv[i], kv[i]))), want[i], 0.02));
  }
  CHECK(within(double(count_params(arch("resnet34", true))), 20.7e6, 0.02));
  CHECK(within(double(count_params(arch("wrn28_10", false))), 36.3e6, 0.01));
}

TEST_CASE("published flop counts") {
  CHECK(within(double(count_flops(arch("resnet50", false))), 8.2e9, 0.05));
  const double kv[] = {0.25, 0.5, 0.75, 1.0}, want[] = {7.9e9, 7.3e9, 6.8e9, 6.3e9};
  for (int i = 0; i < 4; ++i) {
    CAPTURE(kv[i]);
    CHECK(within(double(count_flops(arch("resnet50", true, kv[i], kv[i]))), want[i], 0.05));
  }
  CHECK(within(double(count_flops(arch("wrn28_10", false))), 10.4e9, 0.05));
}

TEST_CASE("attention memory examples") {
  CHECK(attention_map_bytes(14, 14, 8) == 614656);
  CHECK(attention_map_bytes(7, 7, 8) == 38416);
  CHECK(attention_map_bytes(1, 1, 8) == 16);
  CHECK(within(614656.0, 600.0 * 1024, 0.03));
  CHECK(within(38416.0, 37.5 * 1024, 0.03));
  auto m = attn_memory(arch("resnet50", true, 0.2, 0.1));
  REQUIRE(m.per_layer.size() == 13);
  std::uint64_t sum = 0;
  for (auto v : m.per_layer) sum += v;
  CHECK(m.training == sum);
  CHECK(m.inference_max == *std::max_element(m.per_layer.begin(), m.per_layer.end()));
}

TEST_CASE("self-attention parameter share of augmented resnet50") {
  auto d = arch("resnet50", true, 0.2, 0.1);
  CHECK(within(double(attention_cost(d).params), 1.3e6, 0.10));
}

TEST_CASE("parameters strictly decrease along the kappa = upsilon sweep") {
  std::uint64_t prev = count_params(arch("resnet50", false));
  for (double v : {0.25, 0.5, 0.75, 1.0}) {
    const auto p = count_params(arch("resnet50", true, v, v));
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("flop count is additive and independent of layer order") {
  auto d = arch("resnet50", true, 0.25, 0.25);
  std::uint64_t sum = 0;
  for (const auto& r : d.layers) sum += layer_flops(r);
  CHECK(count_flops(d) == sum);
  const auto total = count_flops(d), params = count_params(d);
  std::mt19937_64 rng(5);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(d.layers.begin(), d.layers.end(), rng);
    CHECK(count_flops(d) == total);
    CHECK(count_params(d) == params);
  }
}

TEST_CASE("toy descriptor agrees with the instantiated model") {
  for (double u : {0.0, 0.25, 0.5, 1.0}) {
    for (auto enc : {PositionEncoding::Relative, PositionEncoding::None, PositionEncoding::CoordChannels}) {
      ToyNetConfig cfg;
      cfg.upsilon = u;
      cfg.kappa = u == 1.0 ? 1.0 : 0.5;
      cfg.encoding = enc;
      CAPTURE(u);
      CAPTURE(to_string(enc));
      ToyNet<float> net(cfg);
      CHECK(count_params(toy_descriptor(cfg)) == net.parameters().element_count());
    }
  }
}

TEST_CASE("cost report serialisations") {
  auto r = cost_report(arch("resnet50", true, 0.25, 0.25));
  auto j = nlohmann::json::parse(r.to_json());
  CHECK(j.size() == 5);
  CHECK(j.at("params").get<std::uint64_t>() == r.params);
  CHECK(j.at("flops").get<std::uint64_t>() == r.flops);
  CHECK(j.at("attn_bytes_per_layer").size() == 13);
  CHECK(j.at("attn_bytes_training").get<std::uint64_t>() == r.attn.training);
  CHECK(j.at("attn_bytes_inference_max").get<std::uint64_t>() == r.attn.inference_max);
  CHECK(r.to_json() == cost_report(arch("resnet50", true, 0.25, 0.25)).to_json());
  CHECK(r.to_json().back() == '\n');

  const auto table = r.to_table();
  // Right-aligned numbers all end in the column where the first one ends.
  const auto first = table.substr(0, table.find('\n'));
  const auto col = first.find(' ', first.find_first_of("0123456789"));
  std::size_t lines = 0, start = 0;
  while (start < table.size()) {
    const auto end = table.find('\n', start);
    const auto line = table.substr(start, end - start);
    CHECK(std::isdigit(static_cast<unsigned char>(line.at(col - 1))));
    CHECK(line.substr(col, 2) == "  ");
    ++lines;
    start = end + 1;
  }
  CHECK(lines == 4 + 13);
}

TEST_CASE("unknown family lists the valid names") {
  try {
    build_descriptor("vgg16", {});
    FAIL("expected InputError");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    for (const auto& f : descriptor_families()) CHECK(msg.find(f) != std::string::npos);
  }
}
