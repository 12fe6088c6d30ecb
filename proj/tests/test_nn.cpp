// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "support.hpp"
#include "rppg/nn/checkpoint.hpp"
#include "rppg/nn/ops.hpp"
#include "rppg/nn/optim.hpp"
#include "rppg/nn/transformer.hpp"
#include "rppg/stmap.hpp"

using namespace rppg;
using rppg::testing::code_of;
using namespace rppg::nn;
using rppg::testing::grad_check;
using rppg::testing::random_values;
using TD = Tensor<double>;

namespace {

TD param(std::size_t r, std::size_t c, std::mt19937_64& rng, double s = 1.0) {
  return TD::parameter(r, c, random_values(r * c, rng, s));
}

TD weighted_sum(const TD& x, const TD& w) { return sum(mul(x, w)); }

EncoderConfig small_encoder(std::size_t depth = 2) {
  EncoderConfig c;
  c.depth = depth;
  c.dim = 16;
  c.heads = 2;
  c.patch_size = 2;
  c.in_channels = 2;
  c.seq_side = 3;
  return c;
}

DecoderConfig small_decoder(const EncoderConfig& e, std::size_t depth = 1) {
  DecoderConfig d;
  d.depth = depth;
  d.dim = 8;
  d.heads = 2;
  d.patch_size = e.patch_size;
  d.in_channels = e.in_channels;
  d.seq_side = e.seq_side;
  return d;
}

std::vector<TD> all_params(ParamStore<double>& s) {
  std::vector<TD> out;
  for (auto& slot : s.slots()) out.push_back(slot.tensor);
  return out;
}

}  // namespace

TEST_CASE("backward of a linear map gives the input as gradient") {
  const TD x = TD::constant(2, 3, {1, 2, 3, 4, 5, 6});
  TD w = TD::parameter(2, 3, std::vector<double>(6, 0.5));
  backward(weighted_sum(x, w));
  for (std::size_t i = 0; i < 6; ++i) CHECK(w.grad()[i] == x.values()[i]);
}

TEST_CASE("backward twice without reset doubles leaf gradients") {
  std::mt19937_64 rng(3);
  TD w = param(3, 3, rng);
  const TD x = TD::constant(3, 3, random_values(9, rng));
  const TD loss = sum(square(matmul(x, w)));
  backward(loss);
  const std::vector<double> once(w.grad().begin(), w.grad().end());
  backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad()[i] == 2.0 * once[i]);
}

TEST_CASE("unreachable parameters receive zero gradient") {
  TD a = TD::parameter(1, 2, {1.0, 2.0});
  TD b = TD::parameter(1, 2, {3.0, 4.0});
  backward(sum(square(a)));
  CHECK(b.grad()[0] == 0.0);
  CHECK(b.grad()[1] == 0.0);
}

TEST_CASE("backward rejects non-scalar losses") {
  TD a = TD::parameter(2, 2, {1, 2, 3, 4});
  CHECK(code_of([&] { backward(square(a)); }) == ErrorCode::NonScalarLoss);
  CHECK(code_of([&] { (void)a.item(); }) == ErrorCode::NonScalarLoss);
}

TEST_CASE("shape mismatches are reported") {
  const TD a = TD::zeros(2, 3), b = TD::zeros(2, 2);
  CHECK(code_of([&] { (void)matmul(a, b); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { (void)add(a, b); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { (void)reshape(a, 4, 2); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("elementwise and linear-algebra ops match finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    TD a = param(3, 4, rng), b = param(4, 2, rng), c = param(3, 4, rng);
    TD row = param(1, 4, rng), s = TD::parameter(1, 1, {1.5 + 0.1 * double(seed)});
    const TD w = TD::constant(3, 2, random_values(6, rng));
    auto fn = [&] {
      TD x = add_row(mul(add(a, c), sub(a, scale(c, 0.5))), row);
      TD y = div_scalar(shift(square(x), 0.3), s);
      TD z = matmul(gelu(y), b);
      TD zt = transpose(transpose(z));
      return sum(mul(log(shift(square(zt), 1.0)), w));
    };
    const auto r = grad_check({a, b, c, row, s}, fn, seed);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("row-wise ops match finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    TD a = param(4, 6, rng), b = param(4, 6, rng);
    TD g = param(1, 6, rng), be = param(1, 6, rng);
    TD logits = param(1, 7, rng);
    const TD w = TD::constant(4, 6, random_values(24, rng));
    auto fn = [&] {
      TD sm = softmax_rows(scale(a, 2.0));
      TD ln = layer_norm(b, g, be);
      TD rp = row_pearson(ln, a);
      return add(add(sum(mul(sm, w)), sum(square(rp))), cross_entropy_logits(logits, 3));
    };
    const auto r = grad_check({a, b, g, be, logits}, fn, seed);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("layout ops match finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(200 + seed);
    TD a = param(3, 5, rng), b = param(2, 5, rng), c = param(3, 2, rng);
    const std::vector<std::size_t> rows{2, 0, 2, 4, 1};
    const std::vector<std::size_t> elems{0, 7, 7, 14, 3, 9};
    const TD w = TD::constant(5, 7, random_values(35, rng));
    auto fn = [&] {
      TD stacked = concat_rows<double>({a, b});                       // [5, 5]
      TD wide = concat_cols<double>({gather_rows(stacked, rows), slice_cols(stacked, 1, 3)});  // [5, 7]
      TD picked = gather_elements(reshape(a, 1, 15), elems, 2, 3);
      TD cc = concat_cols<double>({c, scale(c, 2.0)});
      return add(add(sum(mul(square(wide), w)), sum(square(picked))), mean(square(cc)));
    };
    const auto r = grad_check({a, b, c}, fn, seed);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("band_power matches a direct DFT and finite differences") {
  std::mt19937_64 rng(7);
  const std::size_t n = 40;
  SpectralPlan plan;
  plan.length = n;
  plan.fs = 10.0;
  plan.freqs = {0.5, 0.75, 1.0, 2.5};
  plan.bin_of = {0, 0, 1, 2};
  plan.bins = 3;
  TD x = param(1, n, rng);

  // Oracle: explicit windowed DFT of the zero-mean input.
  std::vector<double> y(x.values().begin(), x.values().end());
  const double m = std::accumulate(y.begin(), y.end(), 0.0) / double(n);
  std::vector<double> expect(3, 0.0);
  for (std::size_t k = 0; k < plan.freqs.size(); ++k) {
    double re = 0, im = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2 * M_PI * double(i) / double(n - 1));
      const double ang = 2 * M_PI * plan.freqs[k] * double(i) / plan.fs;
      re += (y[i] - m) * w * std::cos(ang);
      im -= (y[i] - m) * w * std::sin(ang);
    }
    expect[plan.bin_of[k]] += re * re + im * im;
  }
  const TD p = band_power(x, plan);
  for (std::size_t b = 0; b < 3; ++b) CHECK(p.values()[b] == doctest::Approx(expect[b]).epsilon(1e-10));

  const TD w = TD::constant(1, 3, {0.3, -1.0, 2.0});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = grad_check({x}, [&] { return sum(mul(band_power(x, plan), w)); }, seed);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("row_pearson guards degenerate rows") {
  TD a = TD::parameter(2, 4, {1, 1, 1, 1, 1, 2, 3, 4});
  const TD b = TD::constant(2, 4, {1, 2, 3, 4, 2, 4, 6, 8});
  const TD r = row_pearson(a, b);
  CHECK(r.values()[0] == 0.0);
  CHECK(r.values()[1] == doctest::Approx(1.0));
  backward(sum(r));
  for (std::size_t j = 0; j < 4; ++j) CHECK(a.grad()[j] == 0.0);
}

TEST_CASE("sin-cos positional table") {
  const auto pe = sincos_pos_embed_2d(8, 3);
  REQUIRE(pe.size() == 9 * 8);
  // Position 0: sin(0) = 0, cos(0) = 1 in both halves.
  CHECK(pe[0] == 0.0);
  CHECK(pe[2] == 1.0);
  CHECK(pe[4] == 0.0);
  CHECK(pe[6] == 1.0);
  // Position (row 1, col 2): first half encodes the column.
  const double* p = pe.data() + (1 * 3 + 2) * 8;
  CHECK(p[0] == doctest::Approx(std::sin(2.0)));
  CHECK(p[4] == doctest::Approx(std::sin(1.0)));
  CHECK(p[1] == doctest::Approx(std::sin(2.0 / 100.0)));
}

TEST_CASE("encoder output has one token per kept patch plus the class token") {
  EncoderConfig cfg;  // paper width, single block to keep the test quick
  cfg.depth = 1;
  ParamStore<float> store(1);
  const Encoder<float> enc(store, cfg);
  const auto plan = stmap::make_mask_plan(224, 16, 0.8, 5);
  REQUIRE(plan.kept_indices.size() == 39);
  std::vector<double> patches(39 * cfg.patch_dim(), 0.25);
  std::vector<std::size_t> idx(39);
  std::iota(idx.begin(), idx.end(), 0);
  const auto out = enc(patch_rows<float>(patches, cfg.patch_dim(), idx), plan);
  CHECK(out.rows() == 40);
  CHECK(out.cols() == 768);
}

TEST_CASE("encoder is equivariant to kept-patch storage order") {
  const EncoderConfig cfg = small_encoder();
  ParamStore<double> store(9);
  const Encoder<double> enc(store, cfg);
  const auto plan = stmap::make_mask_plan(6, 2, 0.5, 11);
  const std::size_t k = plan.kept_indices.size();
  std::mt19937_64 rng(4);
  const auto content = random_values(k * cfg.patch_dim(), rng);
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  const auto out = enc(patch_rows<double>(content, cfg.patch_dim(), order), plan);

  std::vector<std::size_t> perm = order;
  std::shuffle(perm.begin(), perm.end(), rng);
  auto plan2 = plan;
  for (std::size_t i = 0; i < k; ++i) plan2.kept_indices[i] = plan.kept_indices[perm[i]];
  const auto out2 = enc(patch_rows<double>(content, cfg.patch_dim(), perm), plan2);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < cfg.dim; ++j) {
      CHECK(out2(1 + i, j) == doctest::Approx(out(1 + perm[i], j)).epsilon(1e-12));
    }
  }
  for (std::size_t j = 0; j < cfg.dim; ++j) CHECK(out2(0, j) == doctest::Approx(out(0, j)).epsilon(1e-12));
}

TEST_CASE("block with zeroed residual branches is the identity") {
  ParamStore<double> store(2);
  Block<double> blk(store, "b", 8, 2, 1);
  for (auto* t : {&blk.proj.weight, &blk.proj.bias, &blk.fc2.weight, &blk.fc2.bias}) {
    for (auto& v : t->mutable_values()) v = 0.0;
  }
  std::mt19937_64 rng(1);
  const TD x = TD::constant(5, 8, random_values(40, rng));
  const TD y = blk(x);
  for (std::size_t i = 0; i < 40; ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("decoder restores the full patch grid") {
  EncoderConfig e;
  e.depth = 1;
  e.dim = 32;
  e.heads = 2;
  DecoderConfig d;
  d.depth = 1;
  d.dim = 32;
  ParamStore<float> store(3);
  const Encoder<float> enc(store, e);
  const Decoder<float> dec(store, d, e.dim, true);
  const auto plan = stmap::make_mask_plan(224, 16, 0.75, 2);
  std::vector<double> patches(plan.kept_indices.size() * e.patch_dim(), 0.5);
  std::vector<std::size_t> idx(plan.kept_indices.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto out = dec(enc(patch_rows<float>(patches, e.patch_dim(), idx), plan), plan);
  CHECK(out.rows() == 196);
  CHECK(out.cols() == 768);
}

TEST_CASE("masked positions share the mask token") {
  const EncoderConfig e = small_encoder(1);
  const DecoderConfig d = small_decoder(e);
  ParamStore<double> store(4);
  const Encoder<double> enc(store, e);
  Decoder<double> dec(store, d, e.dim, true);
  for (auto& v : store.find("decoder.pred.weight")->tensor.mutable_values()) v = 0.0;
  auto& bias = store.find("decoder.pred.bias")->tensor;
  std::iota(bias.mutable_values().begin(), bias.mutable_values().end(), 0.0);

  stmap::MaskPlan plan = stmap::make_mask_plan(6, 2, 0.5, 1);
  plan.kept_indices = {4};
  plan.masked_indices = {0, 1, 2, 3, 5, 6, 7, 8};
  std::mt19937_64 rng(2);
  const std::vector<std::size_t> one{0};
  const auto out = dec(enc(patch_rows<double>(random_values(e.patch_dim(), rng), e.patch_dim(), one), plan), plan);
  for (std::size_t p : plan.masked_indices) {
    for (std::size_t j = 0; j < out.cols(); ++j) CHECK(out(p, j) == out(0, j));
  }
}

TEST_CASE("shape contracts hold over random small configurations") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    EncoderConfig e;
    e.depth = 1 + rng() % 2;
    e.heads = 1 + rng() % 3;
    e.dim = 4 * e.heads * (1 + rng() % 2);
    e.patch_size = 1 + rng() % 3;
    e.in_channels = 1 + rng() % 3;
    e.seq_side = 2 + rng() % 3;
    e.use_class_token = (rng() % 2) == 0;
    DecoderConfig d;
    d.depth = 1;
    d.heads = 1 + rng() % 2;
    d.dim = 4 * d.heads;
    d.patch_size = e.patch_size;
    d.in_channels = e.in_channels;
    d.seq_side = e.seq_side;
    ParamStore<float> store(trial);
    const Encoder<float> enc(store, e);
    const Decoder<float> dec(store, d, e.dim, e.use_class_token);
    const double ratio = std::uniform_real_distribution<double>(0.05, 0.9)(rng);
    const auto plan = stmap::make_mask_plan(e.seq_side * e.patch_size, e.patch_size, ratio, trial);
    const std::size_t k = plan.kept_indices.size();
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), 0);
    const auto enc_out =
        enc(patch_rows<float>(random_values(k * e.patch_dim(), rng), e.patch_dim(), idx), plan);
    CHECK(enc_out.rows() == k + (e.use_class_token ? 1 : 0));
    CHECK(enc_out.cols() == e.dim);
    const auto dec_out = dec(enc_out, plan);
    CHECK(dec_out.rows() == e.patch_count());
    CHECK(dec_out.cols() == e.patch_dim());
  }
}

TEST_CASE("config validation") {
  EncoderConfig e = small_encoder();
  e.heads = 3;
  CHECK(code_of([&] { e.validate(); }) == ErrorCode::InvalidConfig);
  e = small_encoder();
  e.depth = 0;
  CHECK(code_of([&] { e.validate(); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("2-block encoder and decoder gradients match finite differences") {
  const EncoderConfig e = small_encoder(2);
  const DecoderConfig d = small_decoder(e, 1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ParamStore<double> store(seed);
    const Encoder<double> enc(store, e);
    const Decoder<double> dec(store, d, e.dim, true);
    // Nudge the zero biases, norms and tokens away from their init values.
    std::mt19937_64 rng(seed + 1000);
    for (auto& s : store.slots())
      for (auto& v : s.tensor.mutable_values()) v += std::normal_distribution<double>(0.0, 0.1)(rng);
    const auto plan = stmap::make_mask_plan(6, 2, 0.5, seed);
    const std::size_t k = plan.kept_indices.size();
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), 0);
    const TD x = patch_rows<double>(random_values(k * e.patch_dim(), rng), e.patch_dim(), idx);
    const TD target = TD::constant(e.patch_count(), e.patch_dim(), random_values(e.patch_count() * e.patch_dim(), rng));
    auto fn = [&] { return mean(square(sub(dec(enc(x, plan), plan), target))); };
    const auto r = grad_check(all_params(store), fn, seed, 6);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("fixed seeds give bit-identical losses") {
  auto run = [] {
    const EncoderConfig e = small_encoder(2);
    const DecoderConfig d = small_decoder(e);
    ParamStore<double> store(42);
    const Encoder<double> enc(store, e);
    const Decoder<double> dec(store, d, e.dim, true);
    const auto plan = stmap::make_mask_plan(6, 2, 0.5, 8);
    std::vector<std::size_t> idx(plan.kept_indices.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(5);
    const TD x = patch_rows<double>(random_values(idx.size() * e.patch_dim(), rng), e.patch_dim(), idx);
    return mean(square(dec(enc(x, plan), plan))).item();
  };
  CHECK(run() == run());
}

TEST_CASE("AdamW update formulas") {
  SUBCASE("first step with unit gradient") {
    ParamStore<double> store;
    TD p = store.add_constant("w", 1, 1, 0.0, 0, true);
    AdamW<double> opt(store, {0.9, 0.95, 1e-8, 0.0});
    p.mutable_grad()[0] = 1.0;
    opt.step(1e-3);
    CHECK(p.values()[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-14));
  }
  SUBCASE("decoupled decay with zero gradient") {
    ParamStore<double> store;
    TD p = store.add_constant("w", 1, 1, 1.0, 0, true);
    AdamW<double> opt(store, {0.9, 0.95, 1e-8, 0.05});
    p.mutable_grad()[0] = 0.0;
    opt.step(1e-3);
    CHECK(p.values()[0] == doctest::Approx(1.0 - 1e-3 * 0.05).epsilon(1e-15));
    double expect = p.values()[0];
    opt.step(1e-3);
    expect -= 1e-3 * 0.05 * expect;
    CHECK(p.values()[0] == doctest::Approx(expect).epsilon(1e-15));
  }
  SUBCASE("zero grads and zero decay leave parameters unchanged") {
    ParamStore<double> store(1);
    TD p = store.add_normal("w", 3, 3, 0, true);
    const std::vector<double> before(p.values().begin(), p.values().end());
    AdamW<double> opt(store, {0.9, 0.95, 1e-8, 0.0});
    opt.step(1e-2);
    for (std::size_t i = 0; i < 9; ++i) CHECK(p.values()[i] == before[i]);
  }
  SUBCASE("non-decay parameters skip weight decay") {
    ParamStore<double> store;
    TD b = store.add_constant("bias", 1, 1, 1.0, 0, false);
    AdamW<double> opt(store, {0.9, 0.95, 1e-8, 0.05});
    opt.step(1e-3);
    CHECK(b.values()[0] == 1.0);
  }
  SUBCASE("layer scale multiplies the step") {
    ParamStore<double> store;
    TD a = store.add_constant("a", 1, 1, 0.0, 0, true);
    TD b = store.add_constant("b", 1, 1, 0.0, 1, true);
    AdamW<double> opt(store, {0.9, 0.95, 1e-8, 0.0});
    a.mutable_grad()[0] = 1.0;
    b.mutable_grad()[0] = 1.0;
    opt.step(1e-3, {0.5, 1.0});
    CHECK(a.values()[0] == doctest::Approx(0.5 * b.values()[0]).epsilon(1e-14));
  }
}

TEST_CASE("AdamW aborts on a NaN gradient and names the parameter") {
  ParamStore<double> store;
  TD a = store.add_constant("encoder.fine", 1, 2, 1.0, 0, true);
  TD b = store.add_constant("decoder.broken", 1, 2, 1.0, 0, true);
  a.mutable_grad()[0] = 0.5;
  b.mutable_grad()[1] = std::nan("");
  AdamW<double> opt(store, {});
  try {
    opt.step(1e-3);
    FAIL("expected NanGradient");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NanGradient);
    CHECK(std::string(e.what()).find("decoder.broken") != std::string::npos);
  }
  CHECK(a.values()[0] == 1.0);
  CHECK(opt.state().step == 0);
}

TEST_CASE("learning-rate schedule") {
  LrSchedule s{0.001, 40, 400, 64};
  CHECK(s.peak() == doctest::Approx(0.00025));
  CHECK(lr_at(40, s) == doctest::Approx(0.00025));
  CHECK(lr_at(0, s) == 0.0);
  CHECK(lr_at(20, s) == doctest::Approx(0.000125));
  CHECK(lr_at(400, s) == doctest::Approx(0.0).epsilon(1e-18));
  CHECK(lr_at(220, s) == doctest::Approx(0.000125));
  double prev = lr_at(40, s);
  for (double ep = 41; ep <= 400; ep += 1) {
    const double lr = lr_at(ep, s);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("layer-wise lr multipliers") {
  const auto m = layerwise_lr_multipliers(12, 0.75);
  REQUIRE(m.size() == 13);
  CHECK(m[12] == 1.0);
  CHECK(m[0] == doctest::Approx(std::pow(0.75, 12)));
  CHECK(m[0] == doctest::Approx(0.0317).epsilon(0.01));
  for (double v : layerwise_lr_multipliers(5, 1.0)) CHECK(v == 1.0);
  CHECK(code_of([] { (void)layerwise_lr_multipliers(0); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("checkpoint round trip and load modes") {
  const EncoderConfig e = small_encoder(1);
  const DecoderConfig d = small_decoder(e);
  ParamStore<float> src(5);
  const Encoder<float> enc(src, e);
  const Decoder<float> dec(src, d, e.dim, true);
  const Checkpoint ck = snapshot(src, "{\"k\":1}");
  const auto bytes = encode_checkpoint(ck);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RMAE");
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.config == "{\"k\":1}");
  CHECK(encode_checkpoint(back) == bytes);

  SUBCASE("strict load restores every parameter") {
    ParamStore<float> dst(99);
    const Encoder<float> enc2(dst, e);
    const Decoder<float> dec2(dst, d, e.dim, true);
    load_params(dst, back, LoadMode::Strict);
    for (std::size_t k = 0; k < dst.slots().size(); ++k) {
      const auto a = dst.slots()[k].tensor.values();
      const auto b = src.slots()[k].tensor.values();
      CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
  }
  SUBCASE("strict load rejects a model with extra parameters") {
    ParamStore<float> dst(1);
    const Encoder<float> enc2(dst, e);
    const SignalHead<float> head(dst, e, 8);
    CHECK(code_of([&] { load_params(dst, back, LoadMode::Strict); }) == ErrorCode::CheckpointMismatch);
  }
  SUBCASE("strict load rejects shape changes") {
    EncoderConfig wide = e;
    wide.dim = 24;
    wide.heads = 2;
    ParamStore<float> dst(1);
    const Encoder<float> enc2(dst, wide);
    CHECK(code_of([&] { load_params(dst, back, LoadMode::Partial); }) == ErrorCode::CheckpointMismatch);
  }
  SUBCASE("partial load maps encoder weights and keeps a fresh head") {
    ParamStore<float> dst(1);
    const Encoder<float> enc2(dst, e);
    const SignalHead<float> head(dst, e, 8);
    const std::vector<float> head_before(dst.find("head.signal.weight")->tensor.values().begin(),
                                         dst.find("head.signal.weight")->tensor.values().end());
    load_params(dst, back, LoadMode::Partial);
    const auto a = dst.find("encoder.blocks.0.attn.qkv.weight")->tensor.values();
    const auto b = src.find("encoder.blocks.0.attn.qkv.weight")->tensor.values();
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
    const auto h = dst.find("head.signal.weight")->tensor.values();
    CHECK(std::equal(h.begin(), h.end(), head_before.begin()));
  }
}

TEST_CASE("checkpoint decoding errors") {
  ParamStore<float> s(1);
  s.add_normal("w", 2, 2, 0, true);
  auto bytes = encode_checkpoint(snapshot(s, "{}"));
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK(code_of([&] { (void)decode_checkpoint(bytes); }) == ErrorCode::BadMagic);
  }
  SUBCASE("truncated") {
    bytes.resize(bytes.size() - 3);
    CHECK(code_of([&] { (void)decode_checkpoint(bytes); }) == ErrorCode::TruncatedFile);
  }
  SUBCASE("version") {
    bytes[4] = 9;
    CHECK(code_of([&] { (void)decode_checkpoint(bytes); }) == ErrorCode::VersionMismatch);
  }
}

TEST_CASE("optimizer state survives a checkpoint") {
  ParamStore<float> s(1);
  auto w = s.add_normal("w", 2, 3, 0, true);
  AdamW<float> opt(s, {});
  for (auto& g : w.mutable_grad()) g = 0.25f;
  opt.step(1e-3);
  const Checkpoint ck = decode_checkpoint(encode_checkpoint(snapshot(s, "{}", &opt.state())));
  OptimState<float> st;
  REQUIRE(load_optim_state(s, ck, st));
  CHECK(st.step == 1);
  CHECK(st.m == opt.state().m);
  CHECK(st.v == opt.state().v);
  ParamStore<float> fresh(1);
  fresh.add_normal("w", 2, 3, 0, true);
  load_params(fresh, ck, LoadMode::Strict);
  CHECK(fresh.find("w")->tensor.values()[0] == w.values()[0]);
}
