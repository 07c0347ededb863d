#include "ipdfer/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace ipdfer::train {

Adam::Adam(std::string name, std::vector<Parameter*> params, Config cfg)
    : name_(std::move(name)), params_(std::move(params)), cfg_(cfg) {
  slots_.reserve(params_.size());
  for (Parameter* p : params_) {
    if (!p->trainable) throw std::logic_error("adam: frozen parameter " + p->name + " in update set");
    slots_.push_back({Tensor(p->value.dims()), Tensor(p->value.dims())});
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    Slot& s = slots_[i];
    const std::int64_t n = p.value.size();
    for (std::int64_t j = 0; j < n; ++j) {
      const double g = p.grad[j];
      s.m[j] = cfg_.beta1 * s.m[j] + (1.0 - cfg_.beta1) * g;
      s.v[j] = cfg_.beta2 * s.v[j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = s.m[j] / bc1;
      const double vhat = s.v[j] / bc2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) {
    if (p->grad.size() != p->value.size()) p->grad = Tensor(p->value.dims());
    p->grad.fill(0.0);
  }
}

}  // namespace ipdfer::train
