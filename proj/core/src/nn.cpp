#include "satqa/nn.hpp"

#include <cmath>

#include "satqa/errors.hpp"

namespace satqa::nn {

std::vector<Parameter*> Module::parameters() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

std::vector<std::pair<std::string, Parameter*>> Module::named_parameters() {
  std::vector<std::pair<std::string, Parameter*>> out;
  collect("", out);
  return out;
}

void Module::collect(const std::string& prefix, std::vector<std::pair<std::string, Parameter*>>& out) {
  for (auto& p : params_) out.emplace_back(prefix + p->name, p.get());
  for (auto& [name, child] : children_) child->collect(prefix + name + ".", out);
}

Parameter* Module::find(const std::string& path) {
  for (auto& [name, p] : named_parameters())
    if (name == path) return p;
  return nullptr;
}

std::size_t Module::parameter_count() {
  std::size_t n = 0;
  for (Parameter* p : parameters()) n += p->value->size();
  return n;
}

void Module::set_trainable(bool trainable) {
  for (Parameter* p : parameters()) p->trainable = trainable;
}

void Module::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

Parameter& Module::add_param(const std::string& name, Tensor init, bool decay) {
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = std::make_shared<Tensor>(std::move(init));
  p->grad = Tensor::zeros(p->value->shape());
  p->decay = decay;
  params_.push_back(std::move(p));
  return *params_.back();
}

Tensor Initializer::normal(Shape shape, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.storage()) v = dist(rng_);
  return t;
}

Tensor Initializer::uniform(Shape shape, double bound) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.storage()) v = dist(rng_);
  return t;
}

Linear::Linear(int in, int out, Initializer& init, bool bias) : in_(in), out_(out) {
  weight_ = &add_param("weight", init.uniform({in, out}, 1.0 / std::sqrt(static_cast<double>(in))));
  if (bias) bias_ = &add_param("bias", Tensor::zeros({out}), false);
}

Var Linear::forward(Graph& g, Var x) {
  if (x.value().rank() != 2 || x.dim(1) != in_) {
    throw ContractError("Linear(" + std::to_string(in_) + "->" + std::to_string(out_) + "): input " +
                        shape_str(x.shape()));
  }
  Var y = ag::matmul(x, g.param(*weight_));
  if (bias_) y = ag::add_bcast(y, g.param(*bias_));
  return y;
}

Conv2d::Conv2d(int in, int out, int kernel, ag::Conv2dGeom geom, Initializer& init, bool bias) : geom_(geom) {
  const int fan_in = in / geom.groups * kernel * kernel;
  weight_ = &add_param("weight", init.uniform({out, in / geom.groups, kernel, kernel},
                                              std::sqrt(3.0) / std::sqrt(static_cast<double>(fan_in))));
  if (bias) bias_ = &add_param("bias", Tensor::zeros({out}), false);
}

Var Conv2d::forward(Graph& g, Var x) {
  Var b = bias_ ? g.param(*bias_) : Var{};
  return ag::conv2d(x, g.param(*weight_), b, geom_);
}

LayerNorm::LayerNorm(int dim) {
  gamma_ = &add_param("gamma", Tensor({dim}, 1.0), false);
  beta_ = &add_param("beta", Tensor::zeros({dim}), false);
}

Var LayerNorm::forward(Graph& g, Var x) { return ag::layer_norm_rows(x, g.param(*gamma_), g.param(*beta_)); }

GroupNorm::GroupNorm(int groups, int channels) : groups_(groups) {
  gamma_ = &add_param("gamma", Tensor({channels}, 1.0), false);
  beta_ = &add_param("beta", Tensor::zeros({channels}), false);
}

Var GroupNorm::forward(Graph& g, Var x) { return ag::group_norm(x, groups_, g.param(*gamma_), g.param(*beta_)); }

BatchNorm2d::BatchNorm2d(int channels, double momentum) : channels_(channels), momentum_(momentum) {
  gamma_ = &add_param("gamma", Tensor({channels}, 1.0), false);
  beta_ = &add_param("beta", Tensor::zeros({channels}), false);
  running_mean_ = &add_param("running_mean", Tensor::zeros({channels}), false);
  running_var_ = &add_param("running_var", Tensor({channels}, 1.0), false);
  running_mean_->trainable = false;
  running_var_->trainable = false;
}

std::vector<Var> BatchNorm2d::forward(Graph& g, const std::vector<Var>& xs, bool training) {
  constexpr double eps = 1e-5;
  std::vector<Var> out;
  if (training) {
    const int n = static_cast<int>(xs.size());
    Var y = ag::batch_norm_train(xs.size() == 1 ? xs[0] : ag::concat_rows(xs), n, g.param(*gamma_), g.param(*beta_), eps);
    // Running estimates from the same batch statistics.
    const Tensor& x0 = xs[0].value();
    const int hw = x0.dim(1) * x0.dim(2);
    const double m = static_cast<double>(n) * hw;
    for (int c = 0; c < channels_; ++c) {
      double mu = 0.0, sq = 0.0;
      for (const auto& x : xs)
        for (int i = 0; i < hw; ++i) mu += x.value()[static_cast<std::size_t>(c) * hw + i];
      mu /= m;
      for (const auto& x : xs)
        for (int i = 0; i < hw; ++i) {
          const double d = x.value()[static_cast<std::size_t>(c) * hw + i] - mu;
          sq += d * d;
        }
      const double var = m > 1 ? sq / (m - 1) : sq;
      Tensor& rm = *running_mean_->value;
      Tensor& rv = *running_var_->value;
      rm[c] = (1 - momentum_) * rm[c] + momentum_ * mu;
      rv[c] = (1 - momentum_) * rv[c] + momentum_ * var;
    }
    for (int i = 0; i < n; ++i) out.push_back(xs.size() == 1 ? y : ag::slice_rows(y, i * channels_, channels_));
    return out;
  }
  Tensor inv({channels_});
  const Tensor& rv = *running_var_->value;
  for (int c = 0; c < channels_; ++c) inv[c] = 1.0 / std::sqrt(rv[c] + eps);
  Var scale = ag::mul(g.param(*gamma_), g.constant(inv));
  Var shift = ag::sub(g.param(*beta_), ag::mul(g.constant(*running_mean_->value), scale));
  for (const auto& x : xs) out.push_back(ag::channel_affine(x, scale, shift));
  return out;
}

MultiHeadSelfAttention::MultiHeadSelfAttention(int dim, int heads, Initializer& init) : dim_(dim), heads_(heads) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  qkv_ = &add_child("qkv", std::make_unique<Linear>(dim, 3 * dim, init));
  proj_ = &add_child("proj", std::make_unique<Linear>(dim, dim, init));
}

Var MultiHeadSelfAttention::forward(Graph& g, Var x, std::vector<Tensor>* attn) {
  const int hd = dim_ / heads_;
  const double inv = 1.0 / std::sqrt(static_cast<double>(hd));
  Var qkv = qkv_->forward(g, x);
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    Var q = ag::slice_cols(qkv, h * hd, hd);
    Var k = ag::slice_cols(qkv, dim_ + h * hd, hd);
    Var v = ag::slice_cols(qkv, 2 * dim_ + h * hd, hd);
    Var a = ag::softmax_rows(ag::scale(ag::matmul(q, k, true), inv));
    if (attn) attn->push_back(a.value());
    heads.push_back(ag::matmul(a, v));
  }
  return proj_->forward(g, heads.size() == 1 ? heads.front() : ag::concat_cols(heads));
}

Mlp::Mlp(int dim, int hidden, Initializer& init) {
  fc1_ = &add_child("fc1", std::make_unique<Linear>(dim, hidden, init));
  fc2_ = &add_child("fc2", std::make_unique<Linear>(hidden, dim, init));
}

Var Mlp::forward(Graph& g, Var x) { return fc2_->forward(g, ag::gelu(fc1_->forward(g, x))); }

Var tokens_to_map(Var tokens, int h, int w) {
  if (tokens.value().rank() != 2 || tokens.dim(0) != h * w) {
    throw ContractError("token map " + shape_str(tokens.shape()) + " does not hold " + std::to_string(h) + "x" +
                        std::to_string(w) + " tokens");
  }
  const int c = tokens.dim(1);
  return ag::reshape(ag::transpose(tokens), {c, h, w});
}

Var map_to_tokens(Var map) {
  if (map.value().rank() != 3) throw ContractError("map_to_tokens expects C x H x W, got " + shape_str(map.shape()));
  const int c = map.dim(0), hw = map.dim(1) * map.dim(2);
  return ag::transpose(ag::reshape(map, {c, hw}));
}

}  // namespace satqa::nn
