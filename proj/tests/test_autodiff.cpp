#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "semtwin/autodiff.hpp"
#include "semtwin/nn.hpp"
#include "semtwin/rng.hpp"

using namespace semtwin;
using ad::Tensor;

TEST_CASE("matmul shape algebra") {
  Tensor a = Tensor::full({2, 3}, 1.0);
  Tensor b = Tensor::full({3, 4}, 2.0);
  Tensor c = ad::matmul(a, b);
  CHECK(c.shape() == ad::Shape{2, 4});
  CHECK(c.at(1, 2) == doctest::Approx(6.0));

  Tensor v = Tensor::full({3}, 1.0);
  Tensor r = ad::matmul(v, b);
  CHECK(r.shape() == ad::Shape{4});

  CHECK_THROWS_AS(ad::matmul(Tensor::full({2, 2}, 1.0), b), ContractViolation);
}

TEST_CASE("sigmoid(0) = 0.5 and friends") {
  Tensor x = Tensor::from({3}, {0.0, 1.0, -1.0});
  Tensor s = ad::sigmoid(x);
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(ad::tanh(Tensor::scalar(0.0)).item() == doctest::Approx(0.0));
  CHECK(ad::softplus(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(2.0)));
}

TEST_CASE("reparam sample with zero std is exactly the mean") {
  Tensor mean = Tensor::from({4}, {1.0, -2.0, 0.5, 3.0});
  Tensor std = Tensor::zeros({4});
  Tensor s = ad::reparam_sample(mean, std, {0.7, -1.3, 2.2, 0.1});
  for (int i = 0; i < 4; ++i) CHECK(s[i] == mean[i]);
}

TEST_CASE("backward: d(x^2)/dx = 2x at x=3") {
  ad::Tape tape;
  Tensor x = Tensor::scalar(3.0, true);
  Tensor loss = ad::mul(x, x);
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward requires scalar loss") {
  ad::Tape tape;
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y = ad::mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractViolation);
}

TEST_CASE("grad of sum(sigmoid(Wx)) matches finite differences") {
  nn::ParamStore ps(7);
  Tensor w = ps.create("w", {4, 5}, nn::Init::XavierUniform);
  Tensor x = Tensor::from({1, 4}, {0.3, -0.8, 1.2, 0.05});

  auto loss_fn = [&]() { return ad::sum(ad::sigmoid(ad::matmul(x, w))).item(); };

  ps.zero_grad();
  {
    ad::Tape tape;
    Tensor loss = ad::sum(ad::sigmoid(ad::matmul(x, w)));
    tape.backward(loss);
  }
  auto rep = test::grad_check(ps.params(), ps.names(), loss_fn);
  INFO("worst ", rep.worst, " at ", rep.worst_where);
  CHECK(rep.passes());
}

TEST_CASE("composite op gradient sweep") {
  // exercise every op in one composite loss
  nn::ParamStore ps(11);
  Tensor a = ps.create("a", {2, 3}, nn::Init::XavierUniform);
  Tensor b = ps.create("b", {3, 4}, nn::Init::XavierUniform);
  Tensor c = ps.create("c", {4}, nn::Init::XavierUniform);
  Tensor d = ps.create("d", {2, 4}, nn::Init::XavierUniform);

  auto build = [&]() {
    Tensor m = ad::matmul(a, b);                       // [2,4]
    Tensor t1 = ad::add(m, c);                         // row broadcast
    Tensor t2 = ad::mul(ad::tanh(t1), ad::sigmoid(d)); // elementwise
    Tensor t3 = ad::div(t2, ad::add_scalar(ad::softplus(d), 0.5));
    Tensor t4 = ad::concat_cols(t3, ad::exp(ad::mul_scalar(m, 0.1)));
    Tensor t5 = ad::slice_cols(t4, 1, 6);
    Tensor t6 = ad::log(ad::add_scalar(ad::mul(t5, t5), 0.3));
    Tensor t7 = ad::clamp_min(t6, -0.5);
    Tensor row0 = ad::flatten(t7);
    Tensor st = ad::stack_rows({row0, row0});
    return ad::add(ad::mean(st), ad::mul_scalar(ad::sum(t2), 0.25));
  };

  ps.zero_grad();
  {
    ad::Tape tape;
    Tensor loss = build();
    tape.backward(loss);
  }
  auto rep = test::grad_check(ps.params(), ps.names(), [&]() { return build().item(); });
  INFO("worst ", rep.worst, " at ", rep.worst_where);
  CHECK(rep.passes());
}

TEST_CASE("stop_gradient blocks ancestors") {
  ad::Tape tape;
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y = ad::mul(x, x);
  Tensor z = ad::stop_gradient(y);
  Tensor w = ad::mul(x, x);
  Tensor loss = ad::sum(ad::add(z, w));
  tape.backward(loss);
  // only the w branch contributes: d/dx = 2x = 4
  CHECK(x.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("backward is deterministic given the forward tape") {
  auto run = [&]() {
    nn::ParamStore ps(3);
    Tensor w = ps.create("w", {3, 3}, nn::Init::XavierUniform);
    Tensor x = Tensor::from({1, 3}, {0.1, 0.2, 0.3});
    ad::Tape tape;
    Tensor loss = ad::sum(ad::tanh(ad::matmul(x, w)));
    tape.backward(loss);
    return w.grad();
  };
  CHECK(run() == run());
}

TEST_CASE("no tape means no recording") {
  Tensor x = Tensor::scalar(1.5, true);
  Tensor y = ad::mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("nested tape is rejected") {
  ad::Tape t1;
  CHECK_THROWS_AS(ad::Tape{}, ContractViolation);
}

TEST_CASE("adam: descent direction and zero-grad fixed point") {
  nn::ParamStore ps(1);
  Tensor p = ps.create("p", {1}, nn::Init::Zeros);
  p.values()[0] = 1.0;
  nn::Adam opt({p});

  SUBCASE("constant gradient decreases the parameter") {
    p.grad()[0] = 2.0;
    auto res = opt.step();
    CHECK(res.applied);
    CHECK(p.values()[0] < 1.0);
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    p.zero_grad();
    opt.step();
    CHECK(p.values()[0] == doctest::Approx(1.0));
  }
  SUBCASE("non-finite gradient skips the update") {
    p.grad()[0] = std::numeric_limits<double>::quiet_NaN();
    auto res = opt.step();
    CHECK_FALSE(res.applied);
    CHECK(p.values()[0] == doctest::Approx(1.0));
  }
}

TEST_CASE("adam: quadratic bowl converges to the minimizer") {
  // f(p) = 0.5*(p - 3.7)^2, minimizer 3.7
  nn::ParamStore ps(1);
  Tensor p = ps.create("p", {1}, nn::Init::Zeros);
  nn::AdamConfig cfg;
  cfg.lr = 0.05;
  nn::Adam opt({p}, cfg);
  for (int i = 0; i < 500; ++i) {
    ps.zero_grad();
    ad::Tape tape;
    Tensor diff = ad::add_scalar(p, -3.7);
    Tensor loss = ad::mul_scalar(ad::mul(diff, diff), 0.5);
    tape.backward(loss);
    opt.step();
  }
  CHECK(std::abs(p.values()[0] - 3.7) < 1e-2);
}

TEST_CASE("global norm clipping caps the applied step") {
  nn::ParamStore ps(1);
  Tensor p = ps.create("p", {2}, nn::Init::Zeros);
  nn::AdamConfig cfg;
  cfg.clip_norm = 1.0;
  nn::Adam opt({p}, cfg);
  p.grad()[0] = 3000.0;
  p.grad()[1] = 4000.0;
  auto res = opt.step();
  CHECK(res.applied);
  CHECK(res.grad_norm == doctest::Approx(5000.0));
}

TEST_CASE("gaussian kl closed form") {
  Tensor mq = Tensor::scalar(1.0), sq = Tensor::scalar(1.0);
  Tensor mp = Tensor::scalar(0.0), sp = Tensor::scalar(1.0);
  CHECK(nn::gaussian_kl(mq, sq, mp, sp).item() == doctest::Approx(0.5));
  // KL(p || p) = 0
  CHECK(nn::gaussian_kl(mp, sp, mp, sp).item() == doctest::Approx(0.0));
}

TEST_CASE("checkpoint round-trip is exact") {
  nn::ParamStore a(5);
  a.create("m.w", {3, 2}, nn::Init::XavierUniform);
  a.create("m.b", {2}, nn::Init::XavierUniform);
  const std::string path = "ckpt_roundtrip_test.txt";
  nn::save_checkpoint(path, {&a});

  nn::ParamStore b(99);
  b.create("m.w", {3, 2}, nn::Init::XavierUniform);
  b.create("m.b", {2}, nn::Init::XavierUniform);
  nn::load_checkpoint(path, {&b});
  for (size_t i = 0; i < a.params().size(); ++i)
    CHECK(a.params()[i].values() == b.params()[i].values());

  nn::ParamStore c(1);
  c.create("m.w", {2, 2}, nn::Init::Zeros);
  CHECK_THROWS_AS(nn::load_checkpoint(path, {&c}), ContractViolation);
  std::remove(path.c_str());
}

TEST_CASE("gru cell gradient check") {
  nn::ParamStore ps(21);
  nn::GruCell cell(ps, "gru", 3, 4);
  Tensor x = Tensor::from({1, 3}, {0.2, -0.4, 0.9});
  Tensor h0 = Tensor::from({1, 4}, {0.1, 0.0, -0.2, 0.3});

  auto loss_fn = [&]() {
    Tensor h1 = cell(x, h0);
    Tensor h2 = cell(x, h1);
    return ad::sum(ad::mul(h2, h2)).item();
  };
  ps.zero_grad();
  {
    ad::Tape tape;
    Tensor h1 = cell(x, h0);
    Tensor h2 = cell(x, h1);
    Tensor loss = ad::sum(ad::mul(h2, h2));
    tape.backward(loss);
  }
  auto rep = test::grad_check(ps.params(), ps.names(), loss_fn);
  INFO("worst ", rep.worst, " at ", rep.worst_where);
  CHECK(rep.passes());
}
