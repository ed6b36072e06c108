#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "aacv/relattn.hpp"
#include "oracles.hpp"

using namespace aacv;

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

template <typename T>
RelativeEmbeddings<T> random_rel(std::size_t h, std::size_t w, std::size_t d, std::mt19937_64& rng) {
  return {oracle::random_tensor<T>({2 * h - 1, d}, rng), oracle::random_tensor<T>({2 * w - 1, d}, rng)};
}

// Applies a pixel permutation: out[p] = in[perm[p]] over the H*W positions.
template <typename T>
Tensor<T> permute_pixels(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t b = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  Tensor<T> y(x.shape());
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t k = 0; k < c; ++k) y[(n * hw + p) * c + k] = x[(n * hw + perm[p]) * c + k];
  return y;
}

AttentionSpec make_spec(std::size_t heads, std::size_t dkh, std::size_t dvh, PositionEncoding enc) {
  return AttentionSpec{heads, heads * dkh, heads * dvh, enc, 1};
}

}  // namespace

TEST_CASE("split and combine heads") {
  Tensor<float> x({1, 1, 1, 4}, std::vector<float>{1, 2, 3, 4});
  auto s = split_heads_2d(x, 2);
  REQUIRE(s.shape() == Shape{1, 2, 1, 1, 2});
  CHECK(s.at(0, 0, 0, 0, 0) == 1);
  CHECK(s.at(0, 0, 0, 0, 1) == 2);
  CHECK(s.at(0, 1, 0, 0, 0) == 3);
  CHECK(s.at(0, 1, 0, 0, 1) == 4);

  std::mt19937_64 rng(1);
  auto y = oracle::random_tensor<float>({2, 3, 2, 8}, rng);
  auto one = split_heads_2d(y, 1);
  CHECK(one.shape() == Shape{2, 1, 3, 2, 8});
  CHECK(std::equal(one.data().begin(), one.data().end(), y.data().begin()));
  for (std::size_t h : {1, 2, 4, 8}) CHECK(combine_heads_2d(split_heads_2d(y, h)) == y);
  CHECK_THROWS_AS(split_heads_2d(y, 3), ShapeError);
}

TEST_CASE("rel_to_abs examples") {
  Tensor<float> one({1, 1, 1, 1}, 7.0f);
  CHECK(rel_to_abs(one) == one);

  Tensor<float> zeros({2, 3, 4, 7});
  CHECK(rel_to_abs(zeros) == Tensor<float>({2, 3, 4, 4}));

  // rows [a,b,c], [d,e,f] -> [[b,c],[d,e]]
  Tensor<float> two({1, 1, 2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK(rel_to_abs(two) == Tensor<float>({1, 1, 2, 2}, std::vector<float>{2, 3, 4, 5}));
}

TEST_CASE("rel_to_abs equals the index map exactly for every L up to 8") {
  std::mt19937_64 rng(2);
  for (std::size_t L = 1; L <= 8; ++L) {
    auto x = oracle::random_tensor<float>({2, 3, L, 2 * L - 1}, rng);
    CHECK(rel_to_abs(x) == oracle::rel_to_abs(x));
  }
}

TEST_CASE("rel_to_abs gradient is the transpose of its selection matrix") {
  std::mt19937_64 rng(3);
  for (std::size_t L = 1; L <= 4; ++L) {
    const std::size_t n_in = L * (2 * L - 1), n_out = L * L;
    // Column c of M is the oracle applied to the c-th unit vector.
    std::vector<double> m(n_out * n_in, 0.0);
    for (std::size_t c = 0; c < n_in; ++c) {
      Tensor<double> e({1, 1, L, 2 * L - 1});
      e[c] = 1.0;
      auto col = oracle::rel_to_abs(e);
      for (std::size_t r = 0; r < n_out; ++r) m[r * n_in + c] = col[r];
    }
    auto dy = oracle::random_tensor<double>({1, 1, L, L}, rng);
    Tape<double> tape;
    auto x = tape.input(Tensor<double>({1, 1, L, 2 * L - 1}));
    auto y = ad::rel_to_abs(x);
    auto l = ad::sum(ad::matmul(ad::reshape(y, {1, n_out}), tape.constant(dy.reshaped({n_out, 1}))));
    tape.backward(l);
    const auto& g = tape.grad(x);
    for (std::size_t c = 0; c < n_in; ++c) {
      double expect = 0;
      for (std::size_t r = 0; r < n_out; ++r) expect += m[r * n_in + c] * dy[r];
      CHECK(g[c] == expect);
    }
  }
}

TEST_CASE("fault injection corrupts rel_to_abs") {
  std::mt19937_64 rng(4);
  auto x = oracle::random_tensor<float>({1, 1, 3, 5}, rng);
  detail::set_rel_to_abs_fault(true);
  auto bad = rel_to_abs(x);
  detail::set_rel_to_abs_fault(false);
  CHECK_FALSE(bad == oracle::rel_to_abs(x));
  CHECK(rel_to_abs(x) == oracle::rel_to_abs(x));
}

TEST_CASE("relative_logits_1d examples") {
  std::mt19937_64 rng(5);
  auto rel = oracle::random_tensor<float>({5, 4}, rng);
  Tensor<float> zero_q({1, 2, 2, 3, 4});
  const auto zero_logits = relative_logits_1d(zero_q, rel);
  for (float v : zero_logits.data()) CHECK(v == 0.0f);

  // H = 1 reduces to rel_to_abs of the contraction.
  auto q = oracle::random_tensor<float>({1, 2, 1, 3, 4}, rng);
  Tensor<float> c({1, 2, 3, 5});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t x = 0; x < 3; ++x)
      for (std::size_t m = 0; m < 5; ++m) {
        float s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += q.at(0, n, 0, x, k) * rel.at(m, k);
        c.at(0, n, x, m) = s;
      }
  CHECK(oracle::max_abs_diff(relative_logits_1d(q, rel), oracle::rel_to_abs(c)) <= 1e-6);

  auto q2 = oracle::random_tensor<float>({1, 1, 2, 2, 3}, rng);
  RelativeEmbeddings<float> r2{oracle::random_tensor<float>({3, 3}, rng), oracle::random_tensor<float>({3, 3}, rng)};
  CHECK(oracle::max_abs_diff(relative_logits_1d(q2, r2.width), naive_relative_logits(q2, r2).width) <= 1e-6);
}

TEST_CASE("relative_logits_2d single pixel gives q . r_0") {
  Tensor<double> q({1, 1, 1, 1, 2}, std::vector<double>{2.0, 3.0});
  RelativeEmbeddings<double> rel{Tensor<double>({1, 2}, std::vector<double>{1.0, -1.0}),
                                 Tensor<double>({1, 2}, std::vector<double>{0.5, 0.25})};
  auto r = relative_logits_2d(q, rel);
  CHECK(r.height.shape() == Shape{1, 1, 1, 1});
  CHECK(r.height[0] == -1.0);
  CHECK(r.width[0] == 1.75);
  auto n = naive_relative_logits(q, rel);
  CHECK(n.height[0] == -1.0);
  CHECK(n.width[0] == 1.75);
}

TEST_CASE("relative logits match the naive gather on 100 random configurations") {
  std::mt19937_64 rng(6);
  double worst32 = 0, worst64 = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = pick(rng, 1, 6), w = pick(rng, 1, 6);
    const std::size_t nh = std::array<std::size_t, 3>{1, 2, 4}[pick(rng, 0, 2)];
    const std::size_t d = pick(rng, 0, 1) ? 4 : 2;
    auto q = oracle::random_tensor<double>({2, nh, h, w, d}, rng);
    auto rel = random_rel<double>(h, w, d, rng);
    auto fast = relative_logits_2d(q, rel);
    auto slow = naive_relative_logits(q, rel);
    worst64 = std::max({worst64, oracle::max_abs_diff(fast.height, slow.height),
                        oracle::max_abs_diff(fast.width, slow.width)});
    auto q32 = cast<float>(q);
    RelativeEmbeddings<float> rel32{cast<float>(rel.height), cast<float>(rel.width)};
    auto fast32 = relative_logits_2d(q32, rel32);
    auto slow32 = naive_relative_logits(q32, rel32);
    worst32 = std::max({worst32, oracle::max_abs_diff(fast32.height, slow32.height),
                        oracle::max_abs_diff(fast32.width, slow32.width)});
  }
  CHECK(worst32 <= 1e-5);
  CHECK(worst64 <= 1e-12);
}

TEST_CASE("naive relative logits: zero embeddings and size cap") {
  std::mt19937_64 rng(7);
  auto q = oracle::random_tensor<float>({1, 1, 3, 2, 2}, rng);
  RelativeEmbeddings<float> zero{Tensor<float>({5, 2}), Tensor<float>({3, 2})};
  auto n = naive_relative_logits(q, zero);
  for (float v : n.height.data()) CHECK(v == 0.0f);
  for (float v : n.width.data()) CHECK(v == 0.0f);
  Tensor<float> big({1, 1, 9, 1, 1});
  RelativeEmbeddings<float> rel{Tensor<float>({17, 1}), Tensor<float>({1, 1})};
  CHECK_THROWS_AS(naive_relative_logits(big, rel), ContractError);
}

TEST_CASE("relative logits are offset-stationary under constant queries") {
  std::mt19937_64 rng(8);
  const std::size_t h = 4, w = 5, d = 3;
  auto v = oracle::random_tensor<float>({d}, rng);
  Tensor<float> q({1, 1, h, w, d});
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = v[i % d];
  auto r = relative_logits_2d(q, random_rel<float>(h, w, d, rng));
  const std::size_t hw = h * w;
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t j = 0; j < hw; ++j)
      for (std::size_t i2 = 0; i2 < hw; ++i2)
        for (std::size_t j2 = 0; j2 < hw; ++j2) {
          const long dy = long(j / w) - long(i / w), dy2 = long(j2 / w) - long(i2 / w);
          const long dx = long(j % w) - long(i % w), dx2 = long(j2 % w) - long(i2 % w);
          if (dy == dy2) CHECK(r.height.at(0, 0, i, j) == r.height.at(0, 0, i2, j2));
          if (dx == dx2) CHECK(r.width.at(0, 0, i, j) == r.width.at(0, 0, i2, j2));
        }
}

TEST_CASE("efficient relative logits never build the gathered table") {
  std::mt19937_64 rng(9);
  const std::size_t h = 6, w = 6, d = 8, hw = h * w;
  auto q = oracle::random_tensor<float>({1, 1, h, w, d}, rng);
  auto rel = random_rel<float>(h, w, d, rng);
  std::size_t fast_peak = 0, naive_peak = 0;
  {
    AllocationAudit audit;
    auto r = relative_logits_2d(q, rel);
    fast_peak = audit.peak_elements();
  }
  {
    AllocationAudit audit;
    auto r = naive_relative_logits(q, rel);
    naive_peak = audit.peak_elements();
  }
  CHECK(naive_peak >= hw * hw * d);
  CHECK(fast_peak < hw * hw * d);
  CHECK(fast_peak <= hw * hw);  // one logit matrix
}

TEST_CASE("sine encoding") {
  auto e = sine_encoding_2d<double>(3, 4, 8);
  for (std::size_t k = 0; k < 8; ++k) CHECK(e.at(0, 0, k) == (k % 2 == 0 ? 0.0 : 1.0));
  // x-half depends only on x, y-half only on y.
  for (std::size_t k = 0; k < 4; ++k) CHECK(e.at(0, 2, k) == e.at(2, 2, k));
  for (std::size_t k = 4; k < 8; ++k) CHECK(e.at(1, 0, k) == e.at(1, 3, k));

  auto s = sine_encoding_2d<double>(2, 2, 8);
  const double ts[2] = {1.0, 10000.0};
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x)
      for (std::size_t i = 0; i < 2; ++i) {
        CHECK(s.at(y, x, 2 * i) == doctest::Approx(std::sin(x / ts[i])).epsilon(1e-15));
        CHECK(s.at(y, x, 2 * i + 1) == doctest::Approx(std::cos(x / ts[i])).epsilon(1e-15));
        CHECK(s.at(y, x, 4 + 2 * i) == doctest::Approx(std::sin(y / ts[i])).epsilon(1e-15));
        CHECK(s.at(y, x, 4 + 2 * i + 1) == doctest::Approx(std::cos(y / ts[i])).epsilon(1e-15));
      }
  CHECK_THROWS_AS(sine_encoding_2d<float>(2, 2, 6), ContractError);
}

TEST_CASE("coordinate channels") {
  auto c = coord_channels<double>(5, 3);
  CHECK(c.at(2, 1, 0) == 0.0);
  CHECK(c.at(2, 1, 1) == 0.0);
  CHECK(c.at(2, 1, 2) == 0.0);
  CHECK(c.at(0, 0, 0) == -1.0);
  CHECK(c.at(0, 0, 1) == -1.0);
  CHECK(c.at(0, 0, 2) == doctest::Approx(std::sqrt(2.0)));

  auto t = coord_channels<double>(3, 3);
  const double v[3] = {-1.0, 0.0, 1.0};
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x) {
      CHECK(t.at(y, x, 0) == v[x]);
      CHECK(t.at(y, x, 1) == v[y]);
      CHECK(t.at(y, x, 2) == doctest::Approx(std::hypot(v[x], v[y])));
    }
}

TEST_CASE("single-pixel attention returns the projected value") {
  std::mt19937_64 rng(10);
  auto spec = make_spec(2, 2, 3, PositionEncoding::Relative);
  auto w = init_attention_weights<double>(spec, 4, 1, 1, rng);
  auto x = oracle::random_tensor<double>({1, 1, 1, 4}, rng);
  AttentionProbe<double> probe;
  auto y = self_attention_2d(x, spec, w, &probe);
  for (double a : probe.weights.data()) CHECK(a == 1.0);
  // w_out(v) with v the last d_v projection channels.
  for (std::size_t o = 0; o < 6; ++o) {
    double s = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      double v = 0;
      for (std::size_t f = 0; f < 4; ++f) v += x[f] * w.qkv.at(0, 0, f, 8 + c);
      s += v * w.out.at(0, 0, c, o);
    }
    CHECK(y[o] == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("self-attention matches the loop-level oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = pick(rng, 1, 4), w = pick(rng, 1, 4);
    const std::size_t nh = std::array<std::size_t, 3>{1, 2, 4}[pick(rng, 0, 2)];
    const bool relative = trial % 2 == 0;
    auto spec = make_spec(nh, 2, 2, relative ? PositionEncoding::Relative : PositionEncoding::None);
    auto wts = init_attention_weights<float>(spec, 4, h, w, rng);
    auto x = oracle::random_tensor<float>({2, h, w, 4}, rng);
    AttentionProbe<float> probe;
    auto got = self_attention_2d(x, spec, wts, &probe);
    Tensor<float> ref_w;
    auto ref = oracle::attention(x, wts.qkv, wts.out, nh, spec.key_depth, spec.value_depth,
                                 relative ? &wts.rel->height : nullptr,
                                 relative ? &wts.rel->width : nullptr, &ref_w);
    CHECK(oracle::max_abs_diff(got, ref) <= 1e-5);
    CHECK(oracle::max_abs_diff(probe.weights, ref_w) <= 1e-5);
  }
}

TEST_CASE("attention rows sum to one in every encoding mode") {
  std::mt19937_64 rng(12);
  for (auto enc : {PositionEncoding::None, PositionEncoding::Sine2D, PositionEncoding::CoordChannels,
                   PositionEncoding::Relative}) {
    auto spec = make_spec(2, 2, 2, enc);
    auto w = init_attention_weights<float>(spec, 4, 3, 2, rng);
    auto x = oracle::random_tensor<float>({2, 3, 2, 4}, rng);
    AttentionProbe<float> probe;
    auto y = self_attention_2d(x, spec, w, &probe);
    CHECK(y.shape() == Shape{2, 3, 2, 4});
    const std::size_t hw = 6;
    for (std::size_t r = 0; r < probe.weights.size() / hw; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < hw; ++j) s += probe.weights[r * hw + j];
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("position-unaware attention commutes with pixel permutations") {
  std::mt19937_64 rng(13);
  auto spec = make_spec(2, 3, 2, PositionEncoding::None);
  auto w = init_attention_weights<float>(spec, 5, 3, 4, rng);
  auto x = oracle::random_tensor<float>({1, 3, 4, 5}, rng);
  auto y = self_attention_2d(x, spec, w);
  std::vector<std::size_t> perm(12);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (int k = 0; k < 20; ++k) {
    std::shuffle(perm.begin(), perm.end(), rng);
    auto lhs = self_attention_2d(permute_pixels(x, perm), spec, w);
    CHECK(oracle::max_abs_diff(lhs, permute_pixels(y, perm)) <= 1e-5);
  }
}

TEST_CASE("relative attention is not permutation equivariant") {
  std::mt19937_64 rng(14);
  auto spec = make_spec(2, 3, 2, PositionEncoding::Relative);
  auto w = init_attention_weights<float>(spec, 5, 3, 4, rng);
  auto x = oracle::random_tensor<float>({1, 3, 4, 5}, rng);
  auto y = self_attention_2d(x, spec, w);
  double worst = 0;
  for (std::size_t a = 0; a < 12; ++a)
    for (std::size_t b = a + 1; b < 12; ++b) {
      std::vector<std::size_t> perm(12);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::swap(perm[a], perm[b]);
      worst = std::max(worst, oracle::max_abs_diff(self_attention_2d(permute_pixels(x, perm), spec, w),
                                                   permute_pixels(y, perm)));
    }
  CHECK(worst > 1e-3);
}

TEST_CASE("attention spec validation") {
  CHECK_NOTHROW((AttentionSpec{2, 4, 4, PositionEncoding::None, 1}.validate()));
  CHECK_THROWS_AS((AttentionSpec{3, 4, 3, PositionEncoding::None, 1}.validate()), ContractError);
  CHECK_THROWS_AS((AttentionSpec{2, 4, 4, PositionEncoding::None, 3}.validate()), ContractError);
  CHECK(parse_encoding("Relative") == PositionEncoding::Relative);
  CHECK(parse_encoding("sine2d") == PositionEncoding::Sine2D);
  CHECK(parse_encoding("coord") == PositionEncoding::CoordChannels);
  CHECK_THROWS(parse_encoding("rotary"));
  CHECK(attention_input_channels(AttentionSpec{1, 1, 1, PositionEncoding::CoordChannels, 1}, 5) == 8u);
}

TEST_CASE("gradients of the relative-attention operations over three seeds") {
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);
    ParameterStore<double> store;
    auto& q = store.add("q", oracle::random_tensor<double>({1, 2, 3, 2, 2}, rng));
    auto& rh = store.add("rel_h", oracle::random_tensor<double>({5, 2}, rng));
    auto& rw = store.add("rel_w", oracle::random_tensor<double>({3, 2}, rng));
    auto& r2a = store.add("r2a_in", oracle::random_tensor<double>({1, 2, 4, 7}, rng));
    auto& hx = store.add("heads_in", oracle::random_tensor<double>({1, 2, 3, 4}, rng));
    std::vector<Parameter<double>*> ps{&q, &rh, &rw, &r2a, &hx};
    auto probe = oracle::random_tensor<double>({1, 2, 6, 6}, rng);
    auto probe2 = oracle::random_tensor<double>({1, 2, 4, 4}, rng);
    auto probe3 = oracle::random_tensor<double>({1, 2, 2, 3, 2}, rng);
    auto f = [&](Tape<double>& t) {
      auto [sh, sw] = ad::relative_logits_2d(t.parameter(q), t.parameter(rh), t.parameter(rw));
      auto logits = ad::softmax(ad::add(sh, sw));
      auto a = ad::sum(ad::matmul(ad::reshape(logits, {1, 72}), t.constant(probe.reshaped({72, 1}))));
      auto r = ad::rel_to_abs(t.parameter(r2a));
      auto b = ad::sum(ad::matmul(ad::reshape(r, {1, 32}), t.constant(probe2.reshaped({32, 1}))));
      auto s = ad::split_heads_2d(ad::combine_heads_2d(ad::split_heads_2d(t.parameter(hx), 2)), 2);
      auto c = ad::sum(ad::matmul(ad::reshape(s, {1, 24}), t.constant(probe3.reshaped({24, 1}))));
      return ad::add(ad::add(a, b), c);
    };
    GradCheckOptions opts;
    opts.seed = seed;
    CHECK(check_gradients(ps, f, opts).max_rel_error() < 1e-4);
  }
}

TEST_CASE("full self-attention layer gradients in every mode") {
  for (std::uint64_t seed : {31u, 32u, 33u}) {
    for (auto enc : {PositionEncoding::Relative, PositionEncoding::None, PositionEncoding::Sine2D,
                     PositionEncoding::CoordChannels}) {
      CAPTURE(seed);
      CAPTURE(to_string(enc));
      std::mt19937_64 rng(seed);
      auto spec = make_spec(2, 2, 2, enc);
      auto w = init_attention_weights<double>(spec, 4, 3, 3, rng);
      ParameterStore<double> store;
      auto& x = store.add("x", oracle::random_tensor<double>({1, 3, 3, 4}, rng));
      auto& qkv = store.add("qkv", w.qkv);
      auto& out = store.add("out", w.out);
      std::vector<Parameter<double>*> ps{&x, &qkv, &out};
      Parameter<double>* rh = nullptr;
      Parameter<double>* rw = nullptr;
      if (w.rel) {
        rh = &store.add("rel_h", w.rel->height);
        rw = &store.add("rel_w", w.rel->width);
        ps.push_back(rh);
        ps.push_back(rw);
      }
      auto probe = oracle::random_tensor<double>({36, 1}, rng);
      auto f = [&](Tape<double>& t) {
        AttentionVars<double> v{t.parameter(qkv), t.parameter(out), std::nullopt, std::nullopt};
        if (rh) {
          v.rel_height = t.parameter(*rh);
          v.rel_width = t.parameter(*rw);
        }
        auto y = ad::self_attention_2d(t.parameter(x), spec, v);
        return ad::sum(ad::matmul(ad::reshape(y, {1, 36}), t.constant(probe)));
      };
      GradCheckOptions opts;
      opts.seed = seed;
      CHECK(check_gradients(ps, f, opts).max_rel_error() < 1e-4);
    }
  }
}
