#include "alignps/optimizer.hpp"

#include <cmath>

namespace alignps {

SgdOptimizer::SgdOptimizer(const ParamStore& params, SgdConfig cfg)
    : params_(&params), cfg_(cfg) {
  for (const auto& [name, var] : params.items()) {
    velocity_.emplace_back(var->value.shape());
    lr_mult_.push_back(name.find(".offset.") != std::string::npos ? cfg_.offset_lr_mult : 1.0);
  }
}

void SgdOptimizer::step(double lr_scale) {
  const double lr = cfg_.lr * lr_scale;
  const auto& items = params_->items();
  for (size_t i = 0; i < items.size(); ++i) {
    auto& var = *items[i].second;
    var.ensure_grad();
    auto g = var.grad.array() + cfg_.weight_decay * var.value.array();
    velocity_[i].array() = cfg_.momentum * velocity_[i].array() + g;
    var.value.array() -= lr * lr_mult_[i] * velocity_[i].array();
  }
}

void SgdOptimizer::zero_grad() {
  for (const auto& [name, var] : params_->items()) var->ensure_grad().set_zero();
}

AdamOptimizer::AdamOptimizer(const ParamStore& params, AdamConfig cfg)
    : params_(&params), cfg_(cfg) {
  for (const auto& [name, var] : params.items()) {
    m_.emplace_back(var->value.shape());
    v_.emplace_back(var->value.shape());
  }
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  const auto& items = params_->items();
  for (size_t i = 0; i < items.size(); ++i) {
    auto& var = *items[i].second;
    var.ensure_grad();
    m_[i].array() = cfg_.beta1 * m_[i].array() + (1.0 - cfg_.beta1) * var.grad.array();
    v_[i].array() =
        cfg_.beta2 * v_[i].array() + (1.0 - cfg_.beta2) * var.grad.array().square();
    var.value.array() -=
        cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

void AdamOptimizer::zero_grad() {
  for (const auto& [name, var] : params_->items()) var->ensure_grad().set_zero();
}

}  // namespace alignps
