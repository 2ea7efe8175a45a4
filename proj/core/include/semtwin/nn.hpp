#pragma once

// Parameter management, layers, adaptive-moment optimization and checkpoint
// serialization for the small networks used throughout the project.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "semtwin/autodiff.hpp"
#include "semtwin/rng.hpp"

namespace semtwin::nn {

using ad::Tensor;

enum class Init { Zeros, XavierUniform };

// Owns named parameter tensors for one model. Names are unique; registration
// order is the optimizer/checkpoint order.
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed) : rng_(seed) {}

  Tensor create(const std::string& name, const ad::Shape& shape, Init init);
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::string>& names() const { return names_; }
  Tensor lookup(const std::string& name) const;
  int total_size() const;

  void zero_grad();
  std::vector<std::vector<double>> snapshot_values() const;
  void restore_values(const std::vector<std::vector<double>>& snap);

  Rng& rng() { return rng_; }

 private:
  Rng rng_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  std::map<std::string, int> index_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 100.0;  // <= 0 disables global-norm clipping
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  struct StepResult {
    bool applied = false;
    double grad_norm = 0.0;
  };

  // Clips the global gradient norm, then applies the update. A non-finite
  // gradient anywhere skips the whole update and reports it.
  StepResult step();
  void zero_grad();
  int64_t step_count() const { return t_; }
  AdamConfig& config() { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

// ---- layers ----------------------------------------------------------------

struct Linear {
  Tensor w, b;
  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, int in, int out);
  Tensor operator()(const Tensor& x) const { return ad::add(ad::matmul(x, w), b); }
};

// Fully connected stack with tanh activations between layers; the final layer
// is linear.
struct Mlp {
  std::vector<Linear> layers;
  Mlp() = default;
  Mlp(ParamStore& ps, const std::string& prefix, const std::vector<int>& dims);
  Tensor operator()(const Tensor& x) const;
};

struct GruCell {
  Linear update, reset, cand;
  int hidden = 0;
  GruCell() = default;
  GruCell(ParamStore& ps, const std::string& prefix, int input, int hidden);
  // x: [B, input], h: [B, hidden] -> [B, hidden]
  Tensor operator()(const Tensor& x, const Tensor& h) const;
};

// Trunk MLP followed by mean and pre-std heads; std = softplus(raw) + 1e-4
// keeps every emitted distribution proper.
struct GaussianHead {
  Mlp trunk;
  Linear mean_head, std_head;
  GaussianHead() = default;
  GaussianHead(ParamStore& ps, const std::string& prefix, const std::vector<int>& trunk_dims,
               int out);
  struct Out {
    Tensor mean, std;
  };
  Out operator()(const Tensor& x) const;
};

constexpr double kStdFloor = 1e-4;

// Draws eps for a reparameterized sample; zeros in eval mode.
std::vector<double> draw_eps(int n, Rng& rng, bool eval_mode);

// Sum over elements of 0.5*((x-mean)/std)^2 + log(std) + 0.5*log(2*pi).
Tensor gaussian_nll(const Tensor& x_const, const Tensor& mean, const Tensor& std);
// Fixed unit std variant (decoder likelihoods).
Tensor gaussian_nll_unit(const Tensor& x_const, const Tensor& mean);
// Sum over elements of KL(N(mq,sq) || N(mp,sp)) for diagonal Gaussians.
Tensor gaussian_kl(const Tensor& mq, const Tensor& sq, const Tensor& mp, const Tensor& sp);

// ---- checkpoints -------------------------------------------------------------
// Text format, one parameter per line:
//   semtwin-ckpt 1
//   <name> <rank> <dims...> <values...>
// Values are printed with enough digits to round-trip doubles exactly.

void save_checkpoint(const std::string& path, const std::vector<const ParamStore*>& stores);
void load_checkpoint(const std::string& path, const std::vector<ParamStore*>& stores);

}  // namespace semtwin::nn
