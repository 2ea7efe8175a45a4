#include "semtwin/nn.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace semtwin::nn {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

// ---- ParamStore --------------------------------------------------------------

Tensor ParamStore::create(const std::string& name, const ad::Shape& shape, Init init) {
  SEMTWIN_CHECK(index_.find(name) == index_.end(), "duplicate parameter name: " + name);
  int n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(n, 0.0);
  if (init == Init::XavierUniform) {
    const int fan_in = shape.size() == 2 ? shape[0] : n;
    const int fan_out = shape.size() == 2 ? shape[1] : n;
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& x : v) x = rng_.uniform(-bound, bound);
  }
  Tensor t = Tensor::from(shape, std::move(v), true);
  index_[name] = static_cast<int>(params_.size());
  params_.push_back(t);
  names_.push_back(name);
  return t;
}

Tensor ParamStore::lookup(const std::string& name) const {
  auto it = index_.find(name);
  SEMTWIN_CHECK(it != index_.end(), "unknown parameter: " + name);
  return params_[it->second];
}

int ParamStore::total_size() const {
  int n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::vector<std::vector<double>> ParamStore::snapshot_values() const {
  std::vector<std::vector<double>> snap;
  snap.reserve(params_.size());
  for (const auto& p : params_) snap.push_back(p.values());
  return snap;
}

void ParamStore::restore_values(const std::vector<std::vector<double>>& snap) {
  SEMTWIN_CHECK(snap.size() == params_.size(), "snapshot/store size mismatch");
  for (size_t i = 0; i < snap.size(); ++i) {
    auto& p = const_cast<Tensor&>(params_[i]);
    SEMTWIN_CHECK(snap[i].size() == p.values().size(), "snapshot shape mismatch");
    p.values() = snap[i];
  }
}

// ---- Adam --------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

Adam::StepResult Adam::step() {
  StepResult res;
  double sq = 0.0;
  bool finite = true;
  for (auto& p : params_) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) finite = false;
      sq += g * g;
    }
  }
  res.grad_norm = std::sqrt(sq);
  if (!finite || !std::isfinite(res.grad_norm)) return res;  // skip, caller logs

  double scale = 1.0;
  if (cfg_.clip_norm > 0.0 && res.grad_norm > cfg_.clip_norm)
    scale = cfg_.clip_norm / res.grad_norm;

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& val = params_[i].values();
    auto& grad = params_[i].grad();
    for (size_t j = 0; j < val.size(); ++j) {
      const double g = grad[j] * scale;
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      val[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  res.applied = true;
  return res;
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---- layers ------------------------------------------------------------------

Linear::Linear(ParamStore& ps, const std::string& prefix, int in, int out) {
  w = ps.create(prefix + ".w", {in, out}, Init::XavierUniform);
  b = ps.create(prefix + ".b", {out}, Init::Zeros);
}

Mlp::Mlp(ParamStore& ps, const std::string& prefix, const std::vector<int>& dims) {
  SEMTWIN_CHECK(dims.size() >= 2, "Mlp needs at least in/out dims");
  for (size_t i = 0; i + 1 < dims.size(); ++i)
    layers.emplace_back(ps, prefix + ".l" + std::to_string(i), dims[i], dims[i + 1]);
}

Tensor Mlp::operator()(const Tensor& x) const {
  Tensor h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = ad::tanh(h);
  }
  return h;
}

GruCell::GruCell(ParamStore& ps, const std::string& prefix, int input, int hidden_dim)
    : update(ps, prefix + ".z", input + hidden_dim, hidden_dim),
      reset(ps, prefix + ".r", input + hidden_dim, hidden_dim),
      cand(ps, prefix + ".c", input + hidden_dim, hidden_dim),
      hidden(hidden_dim) {}

Tensor GruCell::operator()(const Tensor& x, const Tensor& h) const {
  Tensor xh = ad::concat_cols(x, h);
  Tensor z = ad::sigmoid(update(xh));
  Tensor r = ad::sigmoid(reset(xh));
  Tensor cand_in = ad::concat_cols(x, ad::mul(r, h));
  Tensor hc = ad::tanh(cand(cand_in));
  // h' = (1-z)*h + z*hc
  return ad::add(ad::mul(ad::add_scalar(ad::mul_scalar(z, -1.0), 1.0), h), ad::mul(z, hc));
}

GaussianHead::GaussianHead(ParamStore& ps, const std::string& prefix,
                           const std::vector<int>& trunk_dims, int out) {
  std::vector<int> dims = trunk_dims;
  trunk = Mlp(ps, prefix + ".trunk", dims);
  const int trunk_out = dims.back();
  mean_head = Linear(ps, prefix + ".mean", trunk_out, out);
  std_head = Linear(ps, prefix + ".std", trunk_out, out);
}

GaussianHead::Out GaussianHead::operator()(const Tensor& x) const {
  Tensor t = ad::tanh(trunk(x));
  return {mean_head(t), ad::add_scalar(ad::softplus(std_head(t)), kStdFloor)};
}

std::vector<double> draw_eps(int n, Rng& rng, bool eval_mode) {
  std::vector<double> e(n, 0.0);
  if (!eval_mode)
    for (double& x : e) x = rng.normal();
  return e;
}

Tensor gaussian_nll(const Tensor& x_const, const Tensor& mean, const Tensor& std) {
  Tensor x = x_const.requires_grad() ? ad::stop_gradient(x_const) : x_const;
  Tensor z = ad::div(ad::sub(x, mean), std);
  Tensor term = ad::add_scalar(ad::add(ad::mul_scalar(ad::mul(z, z), 0.5), ad::log(std)),
                               0.5 * std::log(kTwoPi));
  return ad::sum(term);
}

Tensor gaussian_nll_unit(const Tensor& x_const, const Tensor& mean) {
  Tensor x = x_const.requires_grad() ? ad::stop_gradient(x_const) : x_const;
  Tensor d = ad::sub(x, mean);
  return ad::add_scalar(ad::mul_scalar(ad::sum(ad::mul(d, d)), 0.5),
                        0.5 * std::log(kTwoPi) * x.size());
}

Tensor gaussian_kl(const Tensor& mq, const Tensor& sq, const Tensor& mp, const Tensor& sp) {
  // log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2, summed over dims
  Tensor dm = ad::sub(mq, mp);
  Tensor sp2 = ad::mul(sp, sp);
  Tensor num = ad::add(ad::mul(sq, sq), ad::mul(dm, dm));
  Tensor term = ad::add_scalar(
      ad::add(ad::sub(ad::log(sp), ad::log(sq)), ad::mul_scalar(ad::div(num, sp2), 0.5)), -0.5);
  return ad::sum(term);
}

// ---- checkpoints ---------------------------------------------------------------

namespace {

std::string fmt_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<const ParamStore*>& stores) {
  std::ofstream f(path);
  SEMTWIN_CHECK(f.good(), "cannot open checkpoint for writing: " + path);
  f << "semtwin-ckpt 1\n";
  for (const auto* ps : stores) {
    const auto& names = ps->names();
    const auto& params = ps->params();
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& t = params[i];
      f << names[i] << ' ' << t.rank();
      for (int d : t.shape()) f << ' ' << d;
      for (double x : t.values()) f << ' ' << fmt_double(x);
      f << '\n';
    }
  }
  SEMTWIN_CHECK(f.good(), "write failed: " + path);
}

void load_checkpoint(const std::string& path, const std::vector<ParamStore*>& stores) {
  std::ifstream f(path);
  SEMTWIN_CHECK(f.good(), "cannot open checkpoint: " + path);
  std::string magic;
  int version = 0;
  f >> magic >> version;
  SEMTWIN_CHECK(magic == "semtwin-ckpt" && version == 1, "bad checkpoint header: " + path);

  std::map<std::string, std::vector<double>> entries;
  std::map<std::string, ad::Shape> shapes;
  std::string name;
  while (f >> name) {
    int rank = 0;
    f >> rank;
    SEMTWIN_CHECK(rank >= 1 && rank <= 2, "bad rank in checkpoint for " + name);
    ad::Shape shape(rank);
    int n = 1;
    for (int& d : shape) {
      f >> d;
      n *= d;
    }
    std::vector<double> vals(n);
    for (double& x : vals) f >> x;
    SEMTWIN_CHECK(!f.fail(), "truncated checkpoint entry: " + name);
    entries[name] = std::move(vals);
    shapes[name] = std::move(shape);
  }

  for (auto* ps : stores) {
    const auto& names = ps->names();
    const auto& params = ps->params();
    for (size_t i = 0; i < params.size(); ++i) {
      auto it = entries.find(names[i]);
      SEMTWIN_CHECK(it != entries.end(), "checkpoint missing parameter: " + names[i]);
      auto& t = const_cast<Tensor&>(params[i]);
      SEMTWIN_CHECK(shapes[names[i]] == t.shape(), "checkpoint shape mismatch: " + names[i]);
      t.values() = it->second;
    }
  }
}

}  // namespace semtwin::nn
