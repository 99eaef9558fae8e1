#include "core/adam.hpp"

#include <cmath>

#include "core/error.hpp"

namespace pistm {

Adam::Adam(const std::vector<Tensor*>& params, AdamConfig cfg)
    : params_(params), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor* p : params_) {
    if (p == nullptr) throw ContractError("optimizer parameter is null");
    m_.push_back(Tensor::zeros(p->dims()));
    v_.push_back(Tensor::zeros(p->dims()));
  }
}

void Adam::step(const std::vector<const Tensor*>& grads) {
  if (grads.size() != params_.size()) {
    throw ContractError("optimizer step: gradient count " +
                        std::to_string(grads.size()) + " != parameter count " +
                        std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i] == nullptr) throw ContractError("optimizer gradient is null");
    if (!grads[i]->same_dims(*params_[i])) {
      throw ShapeError("optimizer step: gradient shape " +
                       shape_to_string(grads[i]->dims()) +
                       " != parameter shape " +
                       shape_to_string(params_[i]->dims()));
    }
    if (!grads[i]->all_finite()) {
      throw TrainingDivergedError("non-finite gradient in optimizer step " +
                                  std::to_string(step_ + 1));
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    double* p = params_[i]->data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const double* g = grads[i]->data();
    const std::size_t n = params_[i]->size();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

}  // namespace pistm
