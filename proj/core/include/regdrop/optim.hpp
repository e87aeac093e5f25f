#pragma once

#include <cstdint>
#include <vector>

#include "regdrop/tensor.hpp"

namespace regdrop {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

// First/second moments per parameter plus the shared step counter.
struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step = 0;
};

// Decoupled weight decay Adam. With weight_decay == 0 the decay term is not
// evaluated at all, so the update is exactly Adam.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  // Applies one update from the gradients currently stored on the parameters.
  // Throws NumericError (and leaves everything untouched) if any gradient is
  // not finite.
  void step();
  void zero_grad();

  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  const AdamWConfig& config() const { return config_; }
  const OptimizerState& state() const { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamWConfig config_;
  OptimizerState state_;
};

// Functional form of a single update: params[i] -= ... using grads[i].
void adamw_step(std::vector<std::vector<double>*>& params, const std::vector<std::vector<double>>& grads,
                OptimizerState& state, const AdamWConfig& config);

}  // namespace regdrop
