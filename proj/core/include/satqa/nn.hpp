#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "satqa/autograd.hpp"

namespace satqa::nn {

using ag::Graph;
using ag::Parameter;
using ag::Var;

// Owns parameters and child modules. Modules are pinned in memory (children
// are registered by address), so they are neither copyable nor movable.
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  // Depth-first, registration order.
  std::vector<Parameter*> parameters();
  // Same order, with dot-joined paths relative to this module.
  std::vector<std::pair<std::string, Parameter*>> named_parameters();
  Parameter* find(const std::string& path);
  std::size_t parameter_count();
  void set_trainable(bool trainable);
  void zero_grad();

 protected:
  Parameter& add_param(const std::string& name, Tensor init, bool decay = true);
  // Keeps a child alive and registers it under `name`.
  template <typename M>
  M& add_child(const std::string& name, std::unique_ptr<M> child) {
    M& ref = *child;
    owned_.push_back(std::move(child));
    children_.emplace_back(name, &ref);
    return ref;
  }

 private:
  void collect(const std::string& prefix, std::vector<std::pair<std::string, Parameter*>>& out);

  std::vector<std::unique_ptr<Parameter>> params_;
  std::vector<std::unique_ptr<Module>> owned_;
  std::vector<std::pair<std::string, Module*>> children_;
};

// Deterministic initialisers drawing from one seeded engine.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Tensor normal(Shape shape, double stddev);
  Tensor uniform(Shape shape, double bound);
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Y = X W + b over token rows; W is stored (in x out).
class Linear : public Module {
 public:
  Linear(int in, int out, Initializer& init, bool bias = true);
  Var forward(Graph& g, Var x);
  int in_features() const { return in_; }
  int out_features() const { return out_; }
  Parameter& weight() { return *weight_; }
  Parameter* bias() { return bias_; }

 private:
  int in_, out_;
  Parameter* weight_;
  Parameter* bias_ = nullptr;
};

class Conv2d : public Module {
 public:
  Conv2d(int in, int out, int kernel, ag::Conv2dGeom geom, Initializer& init, bool bias = true);
  Var forward(Graph& g, Var x);
  Parameter& weight() { return *weight_; }
  Parameter* bias() { return bias_; }
  const ag::Conv2dGeom& geom() const { return geom_; }

 private:
  ag::Conv2dGeom geom_;
  Parameter* weight_;
  Parameter* bias_ = nullptr;
};

class LayerNorm : public Module {
 public:
  explicit LayerNorm(int dim);
  Var forward(Graph& g, Var x);

 private:
  Parameter* gamma_;
  Parameter* beta_;
};

class GroupNorm : public Module {
 public:
  GroupNorm(int groups, int channels);
  Var forward(Graph& g, Var x);

 private:
  int groups_;
  Parameter* gamma_;
  Parameter* beta_;
};

// Batch statistics while training (and updates of the running estimates),
// running estimates otherwise. The running buffers are frozen parameters so
// they travel with checkpoints.
class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1);
  std::vector<Var> forward(Graph& g, const std::vector<Var>& xs, bool training);

 private:
  int channels_;
  double momentum_;
  Parameter* gamma_;
  Parameter* beta_;
  Parameter* running_mean_;
  Parameter* running_var_;
};

// Multi-head self-attention over token rows (tokens x dim).
class MultiHeadSelfAttention : public Module {
 public:
  MultiHeadSelfAttention(int dim, int heads, Initializer& init);
  // When `attn` is given, one (tokens x tokens) softmax matrix per head is
  // appended to it.
  Var forward(Graph& g, Var x, std::vector<Tensor>* attn = nullptr);
  int heads() const { return heads_; }

 private:
  int dim_, heads_;
  Linear* qkv_;
  Linear* proj_;
};

class Mlp : public Module {
 public:
  Mlp(int dim, int hidden, Initializer& init);
  Var forward(Graph& g, Var x);

 private:
  Linear* fc1_;
  Linear* fc2_;
};

// (h*w) x C tokens <-> C x h x w map.
Var tokens_to_map(Var tokens, int h, int w);
Var map_to_tokens(Var map);

}  // namespace satqa::nn
