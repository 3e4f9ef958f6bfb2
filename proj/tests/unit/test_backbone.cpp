#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "lgsp/backbone.hpp"
#include "lgsp/error.hpp"
#include "lgsp/learn.hpp"
#include "test_util.hpp"

using namespace lgsp;
using backbone::InsertMode;

namespace {

backbone::ViTOptions tiny(std::size_t layers = 2, std::size_t heads = 2, std::size_t d = 8) {
  backbone::ViTOptions o;
  o.channels = 2;
  o.height = 8;
  o.width = 8;
  o.patch = 4;
  o.d_model = d;
  o.layers = layers;
  o.heads = heads;
  o.mlp_hidden = 6;
  return o;
}

void zero_all(backbone::ToyViT& vit) {
  for (ad::Param* p : vit.parameters()) p->value = Tensor(p->value.shape());
}

}  // namespace

TEST_CASE("zero network passes the class token and positions through") {
  Rng rng(1);
  backbone::ToyViT vit(tiny(), rng);
  zero_all(vit);
  Tensor out = backbone::forward(vit, testing::random_tensor({1, 2, 8, 8}, 2));
  CHECK(out.dim(0) == 5);
  for (std::size_t i = 0; i < 8; ++i) CHECK(out.at({0, i}) == 0.0);
  // Position 0 of a sinusoidal table is [sin 0, cos 0, ...] = [0, 1, 0, 1, ...].
  for (std::size_t i = 0; i < 8; ++i) CHECK(out.at({1, i}) == (i % 2 == 0 ? 0.0 : 1.0));
  // Position 1: sin/cos of 10000^(-2j/d).
  for (std::size_t i = 0; i < 8; ++i) {
    double f = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / 8.0);
    CHECK(std::abs(out.at({2, i}) - (i % 2 == 0 ? std::sin(f) : std::cos(f))) <= 1e-15);
  }
}

TEST_CASE("zero-length prompts leave the forward bitwise unchanged") {
  Rng rng(3);
  backbone::ToyViT vit(tiny(), rng);
  Tensor x = testing::random_tensor({1, 2, 8, 8}, 4);
  Tensor plain = backbone::forward(vit, x);
  for (auto mode : {InsertMode::Shallow, InsertMode::Deep}) {
    auto tp = backbone::make_vpt(mode, 0, vit, rng);
    backbone::add_token_pool(tp, mode, 4, 2, 0, vit, rng);
    CHECK(tp.prompt_tokens() == 0);
    std::vector<double> q(8, 1.0);
    CHECK(backbone::forward(vit, x, &tp, q) == plain);
  }
}

TEST_CASE("single-head forward matches a loop-based attention oracle") {
  backbone::ViTOptions o;
  o.channels = 1;
  o.height = 4;
  o.width = 4;
  o.patch = 2;
  o.d_model = 4;
  o.layers = 1;
  o.heads = 1;
  o.mlp_hidden = 3;
  Rng rng(5);
  backbone::ToyViT vit(o, rng);
  for (ad::Param* p : vit.parameters()) {
    Rng r(p->value.size() * 31 + p->name.size());
    p->value = randn(p->value.shape(), r, 0.5);
  }
  Tensor x = testing::random_tensor({1, 1, 4, 4}, 6);
  Tensor got = backbone::forward(vit, x);

  const std::size_t T = 5, d = 4;
  auto mat = [](const Tensor& a, std::size_t i, std::size_t j, std::size_t cols) { return a[i * cols + j]; };
  std::vector<std::vector<double>> tok(T, std::vector<double>(d));
  for (std::size_t j = 0; j < d; ++j) tok[0][j] = vit.cls_token().value[j];
  for (std::size_t py = 0; py < 2; ++py) {
    for (std::size_t px = 0; px < 2; ++px) {
      std::size_t p = py * 2 + px;
      double patch[4] = {x[(py * 2) * 4 + px * 2], x[(py * 2) * 4 + px * 2 + 1], x[(py * 2 + 1) * 4 + px * 2],
                         x[(py * 2 + 1) * 4 + px * 2 + 1]};
      for (std::size_t j = 0; j < d; ++j) {
        double acc = vit.patch_bias().value[j] + vit.positional()[p * d + j];
        for (std::size_t k = 0; k < 4; ++k) acc += patch[k] * mat(vit.patch_weight().value, k, j, d);
        tok[p + 1][j] = acc;
      }
    }
  }
  const auto& L = vit.layer(0);
  auto project = [&](const Tensor& w) {
    std::vector<std::vector<double>> out(T, std::vector<double>(d, 0.0));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) out[t][j] += tok[t][k] * mat(w, k, j, d);
    return out;
  };
  auto Q = project(L.wq.value), K = project(L.wk.value), V = project(L.wv.value);
  std::vector<std::vector<double>> after = tok;
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> s(T);
    double mx = -1e300;
    for (std::size_t u = 0; u < T; ++u) {
      s[u] = 0.0;
      for (std::size_t k = 0; k < d; ++k) s[u] += Q[t][k] * K[u][k];
      s[u] /= 2.0;  // sqrt(d)
      mx = std::max(mx, s[u]);
    }
    double z = 0.0;
    for (double& v : s) z += (v = std::exp(v - mx));
    std::vector<double> mixed(d, 0.0);
    for (std::size_t u = 0; u < T; ++u)
      for (std::size_t k = 0; k < d; ++k) mixed[k] += s[u] / z * V[u][k];
    for (std::size_t j = 0; j < d; ++j) {
      double acc = L.bo.value[j];
      for (std::size_t k = 0; k < d; ++k) acc += mixed[k] * mat(L.wo.value, k, j, d);
      after[t][j] += acc;
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> hidden(3);
    for (std::size_t h = 0; h < 3; ++h) {
      double acc = L.b1.value[h];
      for (std::size_t k = 0; k < d; ++k) acc += after[t][k] * mat(L.w1.value, k, h, 3);
      hidden[h] = std::max(acc, 0.0);
    }
    for (std::size_t j = 0; j < d; ++j) {
      double acc = L.b2.value[j];
      for (std::size_t h = 0; h < 3; ++h) acc += hidden[h] * mat(L.w2.value, h, j, d);
      CHECK(std::abs(got.at({t, j}) - (after[t][j] + acc)) <= 1e-9);
    }
  }
}

TEST_CASE("attention rows are stochastic and token counts grow by the prompt length") {
  Rng rng(7);
  backbone::ToyViT vit(tiny(3), rng);
  Tensor x = testing::random_tensor({1, 2, 8, 8}, 8);
  for (auto mode : {InsertMode::Shallow, InsertMode::Deep}) {
    for (std::size_t len : {1u, 3u}) {
      auto tp = backbone::make_vpt(mode, len, vit, rng);
      backbone::add_token_pool(tp, mode, 5, 2, 2, vit, rng);
      std::vector<double> q = testing::random_tensor({8}, 9).values();
      backbone::ForwardTrace trace;
      Tensor out = backbone::forward(vit, x, &tp, q, &trace);
      const std::size_t expect = 1 + 4 + len + 2 * 2;
      CHECK(out.dim(0) == expect);
      CHECK(trace.pool_selected.size() == 2);
      for (std::size_t l = 0; l < 3; ++l) {
        CHECK(trace.token_counts[l] == expect);
        for (const Tensor& a : trace.attention[l]) {
          for (std::size_t r = 0; r < expect; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < expect; ++c) s += a[r * expect + c];
            CHECK(std::abs(s - 1.0) <= 1e-9);
          }
        }
      }
    }
  }
}

TEST_CASE("deep prompts differ per layer while shallow prompts are carried") {
  Rng rng(10);
  backbone::ToyViT vit(tiny(2), rng);
  Tensor x = testing::random_tensor({1, 2, 8, 8}, 11);
  auto deep = backbone::make_vpt(InsertMode::Deep, 2, vit, rng);
  auto shallow = backbone::make_vpt(InsertMode::Shallow, 2, vit, rng);
  CHECK(deep.vpt.size() == 2);
  CHECK(shallow.vpt.size() == 1);
  // Changing the layer-1 prompt of a deep block changes the output; a shallow
  // block has no layer-1 prompt.
  Tensor a = backbone::forward(vit, x, &deep);
  deep.vpt[1].value[0] += 1.0;
  CHECK_FALSE(backbone::forward(vit, x, &deep) == a);
}

TEST_CASE("attention maps") {
  Rng rng(12);
  backbone::ToyViT vit(tiny(), rng);
  Tensor x = testing::random_tensor({1, 2, 8, 8}, 13);
  Tensor m = backbone::attention_map(vit, x, nullptr, 1, 0);
  double s = 0.0;
  for (double v : m.data()) s += v;
  CHECK(std::abs(s - 1.0) <= 1e-9);
  CHECK(m.shape() == Shape{2, 2});

  // With zero query/key projections every softmax row is uniform.
  for (std::size_t l = 0; l < 2; ++l) {
    vit.layer(l).wq.value = Tensor(vit.layer(l).wq.value.shape());
    vit.layer(l).wk.value = Tensor(vit.layer(l).wk.value.shape());
  }
  Tensor flat = backbone::attention_map(vit, x, nullptr, 0, 0);
  for (double v : flat.data()) CHECK(std::abs(v - 0.25) <= 1e-12);

  auto tp = backbone::make_vpt(InsertMode::Deep, 1, vit, rng);
  CHECK_NOTHROW(backbone::attention_map(vit, x, &tp, 1, 1));
  CHECK_THROWS_AS(backbone::attention_map(vit, x, &tp, 1, 2), InvalidArgument);
  CHECK_THROWS_AS(backbone::attention_map(vit, x, &tp, 2, 0), InvalidArgument);
  CHECK_THROWS_AS(backbone::attention_map(vit, x, nullptr, 0, 99), InvalidArgument);
}

TEST_CASE("shape errors") {
  Rng rng(14);
  auto o = tiny();
  o.patch = 3;
  CHECK_THROWS_AS(backbone::ToyViT(o, rng), InvalidArgument);
  backbone::ToyViT vit(tiny(), rng);
  CHECK_THROWS_AS(backbone::forward(vit, Tensor({1, 3, 8, 8})), InvalidArgument);
  CHECK_THROWS_AS(backbone::forward(vit, Tensor({1, 2, 4, 8})), InvalidArgument);
  backbone::TokenPrompts tp;
  CHECK_THROWS_AS(backbone::add_token_pool(tp, InsertMode::Deep, 2, 3, 1, vit, rng), InvalidArgument);
}

TEST_CASE("forward is independent of evaluation order over a batch") {
  Rng rng(15);
  backbone::ToyViT vit(tiny(), rng);
  std::vector<Tensor> xs;
  for (int i = 0; i < 4; ++i) xs.push_back(testing::random_tensor({1, 2, 8, 8}, 100 + i));
  std::vector<Tensor> fwd, rev(4);
  for (const auto& x : xs) fwd.push_back(backbone::forward(vit, x));
  for (int i = 3; i >= 0; --i) rev[i] = backbone::forward(vit, xs[i]);
  for (int i = 0; i < 4; ++i) CHECK(fwd[i] == rev[i]);
}

TEST_CASE("a frozen backbone keeps its checksum through optimizer steps") {
  Rng rng(16);
  backbone::ToyViT vit(tiny(), rng);
  auto tp = backbone::make_vpt(InsertMode::Deep, 2, vit, rng);
  vit.set_frozen(true);
  const auto before = vit.checksum();
  learn::Optimizer opt;
  opt.add(learn::ParamGroup("backbone", vit.parameters(), 0.5));
  opt.add(learn::ParamGroup("vpt", tp.parameters(), 0.5));
  const double vpt0 = tp.vpt[0].value[0];
  Tensor x = testing::random_tensor({1, 2, 8, 8}, 17);
  for (int s = 0; s < 3; ++s) {
    opt.zero_grad();
    ad::Tape tape;
    ad::Var out = backbone::forward(tape, vit, tape.constant(x), &tp);
    tape.backward(ad::sum(ad::mul(out, out)));
    opt.step();
  }
  CHECK(vit.checksum() == before);
  CHECK(tp.vpt[0].value[0] != vpt0);
  vit.set_frozen(false);
  for (ad::Param* p : vit.parameters()) CHECK(p->trainable);
}

TEST_CASE("backbone gradients match finite differences") {
  Rng rng(18);
  backbone::ToyViT vit(tiny(2, 2, 4), rng);
  auto tp = backbone::make_vpt(InsertMode::Deep, 1, vit, rng);
  backbone::add_token_pool(tp, InsertMode::Deep, 3, 2, 1, vit, rng);
  Tensor x = testing::random_tensor({1, 2, 8, 8}, 19);
  std::vector<double> q = testing::random_tensor({4}, 20).values();
  Tensor r = testing::random_tensor({1, 4}, 21);
  auto loss = [&](ad::Tape& tape) {
    ad::Var out = backbone::forward(tape, vit, tape.constant(x), &tp, q);
    return ad::sum(ad::mul(ad::slice_rows(out, 0, 1), tape.constant(r)));
  };
  auto params = vit.parameters();
  for (ad::Param* p : tp.parameters()) params.push_back(p);
  auto rep = learn::grad_check(params, loss, {});
  CHECK(rep.pass());
  CHECK(rep.max_rel_error() <= 1e-4);
}
