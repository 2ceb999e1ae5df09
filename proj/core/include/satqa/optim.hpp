#pragma once

#include <vector>

#include "satqa/autograd.hpp"

namespace satqa::optim {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

// Decoupled weight decay Adam. Frozen parameters (trainable == false) are
// never touched, even if they carry a stale gradient.
class AdamW {
 public:
  AdamW(std::vector<ag::Parameter*> params, AdamWOptions opts);

  void step();
  void zero_grad();
  void set_lr(double lr) { opts_.lr = lr; }
  double lr() const { return opts_.lr; }
  long steps() const { return t_; }

 private:
  std::vector<ag::Parameter*> params_;
  std::vector<Tensor> m_, v_;
  AdamWOptions opts_;
  long t_ = 0;
};

// Closed-form cosine annealing: eta_min + (base - eta_min)(1 + cos(pi t / T_max)) / 2.
double cosine_annealing_lr(double base_lr, double eta_min, int t_max, int epoch);

}  // namespace satqa::optim
