#include <cmath>

#include "doctest.h"
#include "lgsp/error.hpp"
#include "lgsp/fusion.hpp"
#include "lgsp/learn.hpp"
#include "test_util.hpp"

using namespace lgsp;
using fusion::ConstraintMode;

TEST_CASE("fusion residual identities") {
  Tensor x = testing::random_tensor({1, 3, 4, 4}, 1);
  Tensor pl = testing::random_tensor({1, 3, 4, 4}, 2);
  Tensor xg = testing::random_tensor({1, 3, 4, 4}, 3);
  fusion::FusionParams zero(ConstraintMode::Independent, 0.0, 0.0);
  CHECK(fusion::fuse(x, pl, xg, zero) == x);
  fusion::FusionParams local_only(ConstraintMode::Independent, 1.0, 0.0);
  CHECK(fusion::fuse(x, Tensor(x.shape()), xg, local_only) == x);
}

TEST_CASE("fusion at the default weights matches an elementwise oracle") {
  fusion::FusionParams p;
  CHECK(p.alpha_l() == 0.5);
  CHECK(p.alpha_g() == 0.5);
  Tensor x = testing::random_tensor({2, 3, 5, 5}, 4);
  Tensor pl = testing::random_tensor({2, 3, 5, 5}, 5);
  Tensor xg = testing::random_tensor({2, 3, 5, 5}, 6);
  Tensor got = fusion::fuse(x, pl, xg, p);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - (x[i] + 0.5 * pl[i] + 0.5 * xg[i])) <= 1e-12);
  CHECK_THROWS_AS(fusion::fuse(x, Tensor({1, 3, 5, 5}), xg, p), InvalidArgument);
}

TEST_CASE("recorded fusion handles missing branches") {
  Tensor x = testing::random_tensor({1, 2, 3, 3}, 7);
  Tensor xg = testing::random_tensor({1, 2, 3, 3}, 8);
  fusion::FusionParams p(ConstraintMode::Independent, 0.3, 0.9);
  ad::Tape tape;
  ad::Var out = fusion::fuse(tape, tape.constant(x), ad::Var{}, tape.constant(xg), p);
  CHECK(max_abs_diff(out.value(), fusion::fuse(x, Tensor(x.shape()), xg, p)) <= 1e-15);
  ad::Var none = fusion::fuse(tape, tape.constant(x), ad::Var{}, ad::Var{}, p);
  CHECK(none.value() == x);
}

TEST_CASE("fusion gradients equal the prompt tensors") {
  Tensor x = testing::random_tensor({1, 2, 3, 3}, 9);
  Tensor pl = testing::random_tensor({1, 2, 3, 3}, 10);
  Tensor xg = testing::random_tensor({1, 2, 3, 3}, 11);
  Tensor r = testing::random_tensor({1, 2, 3, 3}, 12);
  for (auto mode : {ConstraintMode::Independent, ConstraintMode::FixedSum}) {
    fusion::FusionParams p(mode, 0.4, 0.7);
    auto loss = [&](ad::Tape& tape) {
      ad::Var f = fusion::fuse(tape, tape.constant(x), tape.constant(pl), tape.constant(xg), p);
      return ad::sum(ad::mul(f, tape.constant(r)));
    };
    learn::GradCheckOptions o;
    o.h = 1e-3;
    o.tolerance = 1e-6;
    auto rep = learn::grad_check({&p.alpha_l_param(), &p.alpha_g_param()}, loss, o);
    CHECK(rep.pass());
    // d/d alpha_l of <fuse, r> is <P_local, r> (minus <X_global, r> under the fixed sum).
    double dl = 0.0, dg = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      dl += pl[i] * r[i];
      dg += xg[i] * r[i];
    }
    p.alpha_l_param().zero_grad();
    p.alpha_g_param().zero_grad();
    {
      ad::Tape tape;
      tape.backward(loss(tape));
    }
    double expect_l = mode == ConstraintMode::FixedSum ? dl - dg : dl;
    CHECK(std::abs(p.alpha_l_param().grad[0] - expect_l) <= 1e-12 * std::max(1.0, std::abs(expect_l)));
    if (mode == ConstraintMode::Independent) CHECK(std::abs(p.alpha_g_param().grad[0] - dg) <= 1e-12 * std::max(1.0, std::abs(dg)));
    CHECK(rep.entries.size() == (mode == ConstraintMode::FixedSum ? 1u : 2u));
  }
}

TEST_CASE("fixed-sum weights stay on the simplex line under training") {
  fusion::FusionParams p(ConstraintMode::FixedSum, 0.5, 0.5);
  Tensor x = testing::random_tensor({1, 1, 4, 4}, 13);
  Tensor pl = testing::random_tensor({1, 1, 4, 4}, 14);
  Tensor xg = testing::random_tensor({1, 1, 4, 4}, 15);
  Tensor target = testing::random_tensor({1, 1, 4, 4}, 16);
  learn::Optimizer opt;
  opt.add(learn::ParamGroup("fusion", {&p.alpha_l_param(), &p.alpha_g_param()}, 0.01));
  for (int step = 0; step < 100; ++step) {
    opt.zero_grad();
    ad::Tape tape;
    ad::Var d = ad::sub(fusion::fuse(tape, tape.constant(x), tape.constant(pl), tape.constant(xg), p), tape.constant(target));
    tape.backward(ad::sum(ad::mul(d, d)));
    opt.step();
    CHECK(std::abs(p.alpha_l() + p.alpha_g() - 1.0) <= 1e-12);
  }
  CHECK(p.alpha_l() != 0.5);
  CHECK(std::abs(p.alpha_l()) < 10.0);
}
