#include <doctest.h>

#include <cmath>
#include <sstream>

#include "grad_check.hpp"
#include "semtwin/encoder.hpp"

using namespace semtwin;
using ad::Tensor;

namespace {

EncoderConfig tiny_cfg() {
  EncoderConfig c;
  c.embed_dim = 4;
  c.ctx_dim = 4;
  c.hidden = 8;
  c.td_hidden = 16;
  return c;
}

Observation demo_obs(uint64_t seed) {
  Rng rng(seed);
  Observation o(21);
  for (double& v : o) v = rng.uniform(0.0, 1.0);
  return o;
}

// linear latent dynamics with a known readout, for pretraining fixtures
std::vector<Transition> linear_dataset(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<Transition> data;
  Observation o = demo_obs(seed);
  for (int i = 0; i < n; ++i) {
    Transition tr;
    tr.obs = o;
    tr.action = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    Observation next(o.size());
    for (size_t j = 0; j < o.size(); ++j)
      next[j] = 0.9 * o[j] + 0.05 * tr.action[j % 3] + 0.01;
    tr.next_obs = next;
    tr.ret = std::accumulate(o.begin(), o.end(), 0.0) * 0.1;
    data.push_back(tr);
    o = next;
  }
  return data;
}

}  // namespace

TEST_CASE("exactly 32 tokens, deterministic, 8 bits each") {
  Encoder enc(EncoderConfig{}, 5);
  auto obs = demo_obs(1);
  auto toks = enc.encode(obs);
  CHECK(toks.size() == 32);
  for (const auto& t : toks) {
    CHECK(t.bits == 8);
    CHECK(t.embedding.size() == 16);
  }
  auto toks2 = enc.encode(obs);
  for (size_t i = 0; i < toks.size(); ++i) CHECK(toks[i].embedding == toks2[i].embedding);
  // max slot cost: N tokens * 8 bits
  int total = 0;
  for (const auto& t : toks) total += t.bits;
  CHECK(total == 256);
}

TEST_CASE("permuting two sector readings permutes the sector tokens") {
  Encoder enc(tiny_cfg(), 7);
  auto obs = demo_obs(3);
  auto toks = enc.encode(obs);

  Observation swapped = obs;
  std::swap(swapped[2], swapped[5]);       // sector readings 2 and 5
  std::swap(swapped[8 + 2], swapped[8 + 5]);  // their deltas move with them
  auto toks2 = enc.encode(swapped);

  CHECK(toks2[2].embedding == toks[5].embedding);
  CHECK(toks2[5].embedding == toks[2].embedding);
  CHECK(toks2[8 + 2].embedding == toks[8 + 5].embedding);
  CHECK(toks2[8 + 5].embedding == toks[8 + 2].embedding);
  // untouched sector token and the goal group are unchanged (ctx summaries
  // are permutation-invariant)
  CHECK(toks2[0].embedding == toks[0].embedding);
  CHECK(toks2[16].embedding == toks[16].embedding);
}

TEST_CASE("loss: zero at perfect prediction, D at unit offset") {
  Encoder enc(tiny_cfg(), 11);
  const int D = enc.config().flat_dim();
  // craft z so that td_predict(z,a) is whatever it is; test the loss form
  // directly through its pieces instead: use the network's own prediction as
  // the target (perfect) and the target shifted by one (unit offset).
  auto obs = demo_obs(9);
  Tensor z = ad::stack_rows({enc.encode_flat(obs)});
  Tensor a = Tensor::from({1, 3}, {0.1, 0.2, 0.3});
  Tensor pred = enc.td_predict(z, a);
  Tensor v = enc.value(z);

  // perfect: z_next := pred, G := value(z)
  Tensor l0 = enc.loss(z, a, pred, {v.item()});
  CHECK(l0.item() == doctest::Approx(0.0).epsilon(1e-12));

  // unit offset per dim with exact value: loss = D
  Tensor off = ad::add_scalar(pred, -1.0);
  Tensor l1 = enc.loss(z, a, off, {v.item()});
  CHECK(l1.item() == doctest::Approx(static_cast<double>(D)).epsilon(1e-9));
}

TEST_CASE("beta=0 ignores the value head") {
  auto cfg = tiny_cfg();
  cfg.beta_value = 0.0;
  Encoder enc(cfg, 13);
  auto obs = demo_obs(2);
  Tensor z = ad::stack_rows({enc.encode_flat(obs)});
  Tensor a = Tensor::from({1, 3}, {0.0, 0.0, 0.0});
  Tensor pred = enc.td_predict(z, a);
  Tensor l_any = enc.loss(z, a, pred, {123456.0});
  CHECK(l_any.item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("stop-gradient: target branch parameters receive zero gradient") {
  auto cfg = tiny_cfg();
  Encoder online(cfg, 17);
  Encoder target(cfg, 17);  // same init; separate parameter stores

  auto o1 = demo_obs(4);
  auto o2 = demo_obs(5);
  online.params().zero_grad();
  target.params().zero_grad();
  {
    ad::Tape tape;
    Tensor z = ad::stack_rows({online.encode_flat(o1)});
    Tensor zn = ad::stack_rows({target.encode_flat(o2)});
    Tensor a = Tensor::from({1, 3}, {0.1, -0.1, 0.4});
    Tensor l = online.loss(z, a, zn, {0.5});
    tape.backward(l);
  }
  for (const auto& p : target.params().params())
    for (double g : p.grad()) CHECK(g == 0.0);
  // and the online branch did receive gradient
  double total = 0.0;
  for (const auto& p : online.params().params())
    for (double g : p.grad()) total += std::abs(g);
  CHECK(total > 0.0);
}

TEST_CASE("shared-parameter sg equals target-as-constant gradient") {
  auto cfg = tiny_cfg();
  Encoder enc(cfg, 19);
  auto o1 = demo_obs(6);
  auto o2 = demo_obs(7);
  Tensor a = Tensor::from({1, 3}, {0.3, 0.0, -0.2});

  enc.params().zero_grad();
  {
    ad::Tape tape;
    Tensor z = ad::stack_rows({enc.encode_flat(o1)});
    Tensor zn = ad::stack_rows({enc.encode_flat(o2)});  // same params, sg inside loss
    Tensor l = enc.loss(z, a, zn, {0.2});
    tape.backward(l);
  }
  auto g_shared = enc.params().snapshot_values();
  std::vector<std::vector<double>> grads1;
  for (const auto& p : enc.params().params()) grads1.push_back(p.grad());

  enc.params().zero_grad();
  {
    ad::Tape tape;
    Tensor z = ad::stack_rows({enc.encode_flat(o1)});
    Tensor zn_const = ad::stack_rows({enc.encode_flat(o2)}).detach();
    Tensor l = enc.loss(z, a, zn_const, {0.2});
    tape.backward(l);
  }
  for (size_t i = 0; i < grads1.size(); ++i)
    CHECK(grads1[i] == enc.params().params()[i].grad());
}

TEST_CASE("encoder loss gradients match finite differences") {
  auto cfg = tiny_cfg();
  cfg.group_slots = 2;  // keep the FD sweep small
  cfg.td_hidden = 8;
  Encoder enc(cfg, 23);
  auto o1 = demo_obs(8);
  auto o2 = demo_obs(9);
  Tensor a = Tensor::from({2, 3}, {0.1, 0.2, -0.3, 0.0, 0.5, -0.1});
  // the sg(.) target branch is a constant for differentiation, so the FD
  // oracle evaluates against frozen target values
  Tensor zn = enc.encode_batch({o2, o1}).detach();

  auto loss_fn = [&]() {
    Tensor z = enc.encode_batch({o1, o2});
    return enc.loss(z, a, zn, {0.4, -0.2}).item();
  };
  enc.params().zero_grad();
  {
    ad::Tape tape;
    Tensor z = enc.encode_batch({o1, o2});
    Tensor l = enc.loss(z, a, zn, {0.4, -0.2});
    tape.backward(l);
  }
  auto rep = test::grad_check(enc.params().params(), enc.params().names(), loss_fn);
  INFO("checked ", rep.checked, " worst ", rep.worst, " at ", rep.worst_where);
  CHECK(rep.passes());
}

TEST_CASE("pretraining halves the held-out loss on linear dynamics") {
  auto cfg = tiny_cfg();
  Encoder enc(cfg, 29);
  auto data = linear_dataset(600, 31);
  PretrainConfig pc;
  pc.steps = 400;
  pc.batch = 16;
  pc.lr = 1e-3;
  pc.seed = 3;
  auto res = enc.pretrain(data, pc);
  INFO("initial ", res.initial_heldout, " final ", res.final_heldout);
  CHECK(res.final_heldout < res.initial_heldout);
  CHECK(res.final_heldout < 0.5 * res.initial_heldout);

  CHECK_THROWS_AS(enc.pretrain({}, pc), ContractViolation);
}

TEST_CASE("token layout manifest names every token") {
  Encoder enc(EncoderConfig{}, 37);
  std::ostringstream os;
  enc.write_token_layout(os);
  const std::string s = os.str();
  CHECK(s.find("0 sector-risk") != std::string::npos);
  CHECK(s.find("31 ego-state") != std::string::npos);
  CHECK(enc.group_name(0) == "sector-risk");
  CHECK(enc.group_name(8) == "sector-gradient");
  CHECK(enc.group_name(16) == "goal-geometry");
  CHECK(enc.group_name(24) == "ego-state");
}
