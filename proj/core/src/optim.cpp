#include "satqa/optim.hpp"

#include <cmath>

#include "satqa/errors.hpp"

namespace satqa::optim {

AdamW::AdamW(std::vector<ag::Parameter*> params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {
  for (ag::Parameter* p : params_) {
    m_.push_back(Tensor::zeros(p->value->shape()));
    v_.push_back(Tensor::zeros(p->value->shape()));
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ag::Parameter& p = *params_[i];
    if (!p.trainable || p.grad.size() != p.value->size()) continue;
    if (!p.grad.all_finite()) throw NumericError("non-finite gradient in parameter " + p.name);
    Tensor& w = *p.value;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    const double decay = p.decay ? opts_.lr * opts_.weight_decay : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = p.grad[j];
      m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g;
      v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g * g;
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      w[j] -= decay * w[j] + opts_.lr * mh / (std::sqrt(vh) + opts_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (ag::Parameter* p : params_) p->zero_grad();
}

double cosine_annealing_lr(double base_lr, double eta_min, int t_max, int epoch) {
  if (t_max <= 0) throw DomainError("cosine annealing T_max must be positive");
  return eta_min + (base_lr - eta_min) * (1.0 + std::cos(M_PI * epoch / static_cast<double>(t_max))) / 2.0;
}

}  // namespace satqa::optim
