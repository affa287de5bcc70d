#pragma once

#include "hamil/nn/param_store.hpp"

namespace hamil::train {

// Adam with bias correction. Only trainable tensors are updated.
template <typename T>
class Adam {
 public:
  Adam(const nn::ParamStore<T>& like, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(nn::ParamStore<T>& params, const nn::ParamStore<T>& grads, double learning_rate);
  long steps() const { return steps_; }

 private:
  nn::ParamStore<T> m_;
  nn::ParamStore<T> v_;
  double beta1_;
  double beta2_;
  double eps_;
  long steps_ = 0;
};

}  // namespace hamil::train
