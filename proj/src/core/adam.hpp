#pragma once

#include <vector>

#include "core/tensor.hpp"

namespace pistm {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive moment estimation with bias-corrected first/second moments.
// Moment buffers mirror the parameter shapes; the step counter increases by
// exactly one per update.
class Adam {
 public:
  Adam(const std::vector<Tensor*>& params, AdamConfig cfg = {});

  // grads[i] pairs with params[i]; a NaN gradient raises TrainingDivergedError.
  void step(const std::vector<const Tensor*>& grads);

  long step_count() const { return step_; }
  AdamConfig& config() { return cfg_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamConfig cfg_;
  long step_ = 0;
};

}  // namespace pistm
