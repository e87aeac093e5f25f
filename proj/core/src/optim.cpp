#include "regdrop/optim.hpp"

#include <cmath>
#include <string>

#include "regdrop/errors.hpp"

namespace regdrop {

namespace {

void check_finite(const std::vector<double>& grad, std::size_t index) {
  for (std::size_t j = 0; j < grad.size(); ++j) {
    if (!std::isfinite(grad[j])) {
      throw NumericError("adamw: non-finite gradient in parameter " + std::to_string(index) + " at element " +
                         std::to_string(j) + "; step rejected");
    }
  }
}

void update(std::span<double> p, std::span<const double> g, std::vector<double>& m, std::vector<double>& v,
            std::int64_t step, const AdamWConfig& cfg) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (cfg.weight_decay != 0.0) p[j] -= cfg.learning_rate * cfg.weight_decay * p[j];
    m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
    v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
    const double m_hat = m[j] / bc1;
    const double v_hat = v[j] / bc2;
    p[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

}  // namespace

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  for (auto& p : params_) {
    state_.first_moment.emplace_back(p.numel(), 0.0);
    state_.second_moment.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) check_finite(params_[i].grad(), i);
  ++state_.step;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto g = params_[i].grad();
    update(params_[i].mutable_data(), g, state_.first_moment[i], state_.second_moment[i], state_.step, config_);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void adamw_step(std::vector<std::vector<double>*>& params, const std::vector<std::vector<double>>& grads,
                OptimizerState& state, const AdamWConfig& config) {
  if (params.size() != grads.size()) throw ShapeError("adamw_step: params/grads count mismatch");
  if (state.first_moment.empty()) {
    for (auto* p : params) {
      state.first_moment.emplace_back(p->size(), 0.0);
      state.second_moment.emplace_back(p->size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adamw_step: state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->size() != grads[i].size() || state.first_moment[i].size() != grads[i].size()) {
      throw ShapeError("adamw_step: shape mismatch at parameter " + std::to_string(i));
    }
    check_finite(grads[i], i);
  }
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    update(*params[i], grads[i], state.first_moment[i], state.second_moment[i], state.step, config);
  }
}

}  // namespace regdrop
