#include <cmath>
#include <map>

#include "doctest.h"
#include "lgsp/classifier.hpp"
#include "lgsp/error.hpp"
#include "test_util.hpp"

using namespace lgsp;
using namespace lgsp::classifier;

TEST_CASE("fit examples") {
  PrototypeBank bank;
  bank.fit({{{1.0, 2.0}, 3}, {{-1.0, 0.5}, 1}});
  CHECK(bank.ids() == std::vector<ClassId>{1, 3});
  CHECK(bank.prototype(3).value == Tensor::vector({1.0, 2.0}));
  bank.fit({{{1.0, 0.0}, 7}, {{0.0, 1.0}, 7}});
  CHECK(bank.prototype(7).value == Tensor::vector({0.5, 0.5}));
  // Earlier classes untouched.
  CHECK(bank.prototype(1).value == Tensor::vector({-1.0, 0.5}));
  CHECK(bank.prototype(7).name == "classifier.class7");
  CHECK_THROWS_AS(bank.fit({}), InvalidArgument);
  CHECK_THROWS_AS(bank.set(9, {0.0, 0.0}), InvalidArgument);
  CHECK_THROWS_AS(bank.set(9, {1.0, 0.0, 0.0}), InvalidArgument);
  CHECK_THROWS_AS(bank.prototype(42), InvalidArgument);
}

TEST_CASE("fit matches a per-class mean oracle") {
  Rng rng(1);
  std::vector<LabeledFeature> feats;
  std::map<ClassId, std::pair<std::vector<double>, int>> sums;
  for (int i = 0; i < 20; ++i) {
    ClassId c = static_cast<ClassId>(rng.below(5));
    auto v = randn({6}, rng).values();
    feats.push_back({v, c});
    auto& [s, n] = sums[c];
    if (s.empty()) s.assign(6, 0.0);
    for (int j = 0; j < 6; ++j) s[j] += v[j];
    ++n;
  }
  PrototypeBank bank;
  bank.fit(feats);
  for (auto& [c, sn] : sums) {
    for (int j = 0; j < 6; ++j) CHECK(std::abs(bank.prototype(c).value[j] - sn.first[j] / sn.second) <= 1e-12);
  }
}

TEST_CASE("classify examples") {
  PrototypeBank bank;
  bank.set(0, {1.0, 0.0});
  bank.set(1, {0.0, 1.0});
  auto p = classify(std::vector<double>{0.9, 0.1}, bank);
  CHECK(p.label == 0);
  auto exact = classify(std::vector<double>{0.0, 3.0}, bank);
  CHECK(exact.label == 1);
  CHECK(exact.scores[1] == 1.0);
  // Tie: lowest id wins.
  CHECK(classify(std::vector<double>{1.0, 1.0}, bank).label == 0);
  CHECK_THROWS_AS(classify(std::vector<double>{0.0, 0.0}, bank), InvalidArgument);
  PrototypeBank empty;
  CHECK_THROWS_AS(classify(std::vector<double>{1.0, 0.0}, empty), InvalidArgument);
}

TEST_CASE("classify agrees with a brute-force nearest scan") {
  Rng rng(2);
  PrototypeBank bank;
  std::vector<std::vector<double>> protos;
  for (int c = 0; c < 8; ++c) {
    protos.push_back(randn({5}, rng).values());
    bank.set(c * 3, protos.back());
  }
  for (int i = 0; i < 100; ++i) {
    auto q = randn({5}, rng).values();
    int best = 0;
    double best_s = -2.0;
    for (int c = 0; c < 8; ++c) {
      double dotp = 0, nq = 0, np = 0;
      for (int j = 0; j < 5; ++j) {
        dotp += q[j] * protos[c][j];
        nq += q[j] * q[j];
        np += protos[c][j] * protos[c][j];
      }
      double s = dotp / std::sqrt(nq * np);
      if (s > best_s) {
        best_s = s;
        best = c;
      }
    }
    auto p = classify(q, bank);
    CHECK(p.label == best * 3);
    // Positive rescaling of the query changes nothing.
    std::vector<double> q2 = q;
    for (double& v : q2) v *= 4.25;
    CHECK(classify(q2, bank).label == p.label);
  }
}

TEST_CASE("adding a class leaves existing scores unchanged") {
  Rng rng(3);
  PrototypeBank bank;
  for (int c = 0; c < 4; ++c) bank.set(c, randn({5}, rng).values());
  auto q = randn({5}, rng).values();
  auto before = classify(q, bank);
  bank.set(10, randn({5}, rng).values());
  auto after = classify(q, bank);
  for (std::size_t i = 0; i < before.scores.size(); ++i) CHECK(after.scores[i] == before.scores[i]);
  CHECK(after.scores.size() == 5);
}

TEST_CASE("argmax within a label subset") {
  PrototypeBank bank;
  bank.set(0, {1.0, 0.0, 0.0});
  bank.set(1, {0.0, 1.0, 0.0});
  bank.set(2, {0.0, 0.0, 1.0});
  auto p = classify(std::vector<double>{0.2, 0.3, 0.9}, bank);
  CHECK(p.label == 2);
  CHECK(argmax_within(p, bank, {0, 1}) == 1);
  CHECK(argmax_within(p, bank, {1, 0}) == 1);
  CHECK_THROWS_AS(argmax_within(p, bank, {}), InvalidArgument);
}

TEST_CASE("stacked prototypes on a tape") {
  PrototypeBank bank;
  bank.set(4, {1.0, 2.0});
  bank.set(2, {3.0, 4.0});
  ad::Tape tape;
  ad::Var s = bank.stacked(tape, {4, 2});
  CHECK(s.value() == Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  tape.backward(ad::sum(s));
  CHECK(bank.prototype(4).grad == Tensor::vector({1.0, 1.0}));
  CHECK(bank.parameters().size() == 2);
}
